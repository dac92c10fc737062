#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "etnet/data.hpp"
#include "etnet/losses.hpp"
#include "etnet/metrics.hpp"
#include "etnet/network.hpp"

namespace etnet::cfg {
struct RunConfig;
}

namespace etnet::train {

struct ScheduleConfig {
  double base_lr = 0.005;
  double power = 0.9;
  int epochs = 30;
  int batch_size = 4;
  int num_images = 0;

  long total_iters() const {
    const long t = static_cast<long>(num_images) * epochs / batch_size;
    return t < 1 ? 1 : t;
  }
};

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0005;
  double epsilon = 1e-8;
  bool coupled_l2 = false;  // fold decay into the gradient instead of decoupling
};

// base_lr * (1 - iters/total_iters)^power; clamps to 0 past the end
double poly_lr(long iters, const ScheduleConfig& sched);

class Adam {
 public:
  explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }

  // t is the 1-based step index used for bias correction
  void step(net::Network& net, double lr, long t);

  void visit_moments(const std::function<void(const std::string&, nn::Tensor&, nn::Tensor&)>& fn);
  void set_moments(const std::string& name, nn::Tensor m, nn::Tensor v);

 private:
  OptimizerConfig cfg_;
  std::map<std::string, std::pair<nn::Tensor, nn::Tensor>> moments_;
};

struct LossRecord {
  long iteration = 0;
  double lr = 0.0;
  double total = 0.0;
  double seg = 0.0;
  std::optional<double> edge;
};

struct History {
  struct Row {
    LossRecord loss;
    std::optional<double> eval_miou;
    std::optional<double> eval_acc;
  };
  std::vector<Row> rows;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct Batch {
  nn::Tensor images;                     // (N, 3, H, W)
  std::vector<std::uint8_t> seg_labels;  // N*H*W
  std::vector<std::uint8_t> edge_labels; // N*H*W
};
Batch make_batch(std::span<const data::Sample> samples);

struct StepConfig {
  losses::LossWeights weights;
  bool joint_edge = true;  // add the edge loss stream (EGM variants)
  bool present_classes_only = false;
};

// Single-writer training state: parameters, moments, iteration counter.
class Trainer {
 public:
  Trainer(net::Network network, const OptimizerConfig& opt, const ScheduleConfig& sched);

  LossRecord step(std::span<const data::Sample> batch, const StepConfig& step_cfg);

  net::Network& network() { return net_; }
  Adam& optimizer() { return opt_; }
  const ScheduleConfig& schedule() const { return sched_; }
  long iteration() const { return iteration_; }
  void set_iteration(long it) { iteration_ = it; }

 private:
  net::Network net_;
  Adam opt_;
  ScheduleConfig sched_;
  long iteration_ = 0;
};

enum class Variant { Base, Egm, Wam, Full };
Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);
// applies the ablation flags onto a network config
void apply_variant(net::NetworkConfig& cfg, Variant v);
bool variant_has_edge_stream(Variant v);

struct EvalOptions {
  bool per_image = false;
  int edge_kernel = 3;
  std::optional<std::filesystem::path> predictions_dir;
};

metrics::MetricReport evaluate(net::Network& net, const std::vector<data::Sample>& dataset,
                               const std::string& config_hash, const EvalOptions& opts = {});

struct FitResult {
  History history;
  metrics::MetricReport final_report;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

FitResult fit(const cfg::RunConfig& run);

}  // namespace etnet::train
