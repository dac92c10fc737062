#pragma once

#include <cstdint>
#include <filesystem>
#include <map>

#include "etnet/network.hpp"
#include "etnet/training.hpp"

namespace etnet::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

// Single-file container: format version, network config, every named
// parameter, batch-norm running statistics, optimizer moments, iteration
// counter. Floats are stored raw, so round-trips are bit-exact.
void save(const std::filesystem::path& path, net::Network& net,
          train::Adam* optimizer, long iteration);

struct Loaded {
  net::NetworkConfig config;
  long iteration = 0;
  std::map<std::string, nn::Tensor> params;
  std::map<std::string, nn::Tensor> buffers;
  std::map<std::string, nn::Tensor> adam_m;
  std::map<std::string, nn::Tensor> adam_v;
};

Loaded load(const std::filesystem::path& path);

// Builds a network from the stored config and overwrites its arrays.
net::Network restore(const Loaded& loaded);
void restore_optimizer(const Loaded& loaded, train::Adam& opt);

}  // namespace etnet::ckpt
