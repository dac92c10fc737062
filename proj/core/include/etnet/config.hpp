#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "etnet/data.hpp"
#include "etnet/losses.hpp"
#include "etnet/network.hpp"
#include "etnet/training.hpp"

namespace etnet::cfg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One hierarchical config per run; every field has a default and unknown
// keys are rejected. The variant drives the ablation flags unless it is
// "custom", in which case network.use_egm / network.use_wam are honored.
struct RunConfig {
  net::NetworkConfig network;
  data::AugmentConfig augment;
  train::ScheduleConfig schedule;
  train::OptimizerConfig optimizer;
  losses::LossWeights loss_weights;
  bool present_classes_only = false;

  std::string train_root;
  std::string val_root;
  int classes = 3;
  int edge_kernel = 3;

  std::string variant = "full";
  std::string out_dir = "run";
  std::uint64_t seed = 1;
  int eval_every = 5;
  bool per_image_metrics = false;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// "section.key=value" override; the key must already exist
void apply_override(RunConfig& cfg, const std::string& assignment);
std::string to_json(const RunConfig& cfg);

std::string config_hash(const RunConfig& cfg);

std::string network_config_json(const net::NetworkConfig& cfg);
net::NetworkConfig network_config_from_json(const std::string& text);
std::string network_config_hash(const net::NetworkConfig& cfg);

}  // namespace etnet::cfg
