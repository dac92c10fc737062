#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "etnet/autograd.hpp"

namespace etnet::net {

enum class Fusion { Concat, Add };

struct NetworkConfig {
  int input_channels = 3;
  int num_classes = 2;
  int stem_width = 8;
  std::array<int, 4> block_widths{32, 64, 128, 256};
  std::array<int, 4> blocks_per_stage{2, 2, 2, 2};
  int decoder_channels = 16;  // d
  int edge_channels = 16;     // e
  int attention_reduction = 4;
  bool use_egm = true;
  bool use_wam = true;
  int dilation_stage4 = 2;
  Fusion fusion = Fusion::Concat;

  void validate() const;  // throws std::invalid_argument
};

struct Feature {
  nn::Var var;
  int stride = 1;
  int channels = 0;
};

struct NetworkOutput {
  nn::Tensor seg_logits;                  // (N, C, H, W)
  std::optional<nn::Tensor> edge_logits;  // (N, 2, H, W), present with EGM
};

using ParamVisitor = std::function<void(const std::string&, nn::Param&)>;
using BufferVisitor = std::function<void(const std::string&, nn::Tensor&)>;

namespace detail {

struct ConvLayer {
  nn::Param weight;
  std::optional<nn::Param> bias;
  nn::ConvSpec spec;
  int in_ch = 0, out_ch = 0, ksize = 1;

  void build(int in_channels, int out_channels, int k, nn::ConvSpec s, bool with_bias);
  nn::Var forward(nn::Tape& t, nn::Var x);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct BatchNormLayer {
  nn::Param gamma, beta;
  nn::Tensor running_mean, running_var;
  int channels = 0;

  void build(int ch);
  nn::Var forward(nn::Tape& t, nn::Var x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

// conv + batch norm (+ optional relu)
struct ConvBn {
  ConvLayer conv;
  BatchNormLayer bn;
  bool relu_after = true;

  void build(int in_ch, int out_ch, int k, nn::ConvSpec s, bool relu);
  nn::Var forward(nn::Tape& t, nn::Var x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

// 1x1 - 3x3 - 1x1 residual unit with identity or projected shortcut
struct Bottleneck {
  ConvBn conv1, conv2, conv3;
  std::optional<ConvBn> projection;

  void build(int in_ch, int out_ch, int stride, int dilation);
  nn::Var forward(nn::Tape& t, nn::Var x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

struct EncoderStage {
  std::vector<Bottleneck> blocks;

  void build(int in_ch, int out_ch, int count, int stride, int dilation);
  nn::Var forward(nn::Tape& t, nn::Var x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

// Upsamples the high-resolution input to the skip grid, fuses, then applies a
// depthwise 3x3 and a 1x1 channel unification.
struct DBlock {
  Fusion fusion = Fusion::Concat;
  std::optional<ConvBn> high_match;  // Add fusion with unequal channel counts
  ConvBn depthwise;
  ConvBn pointwise;

  void build(int high_ch, int skip_ch, int out_ch, Fusion fusion);
  Feature forward(nn::Tape& t, const Feature& high, const Feature& skip, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

// Two-path early-layer module producing edge guidance features and edge
// logits at stride 4. The paths share every layer except the final 1x1s.
struct EdgeGuidance {
  ConvBn f1_reduce, f1_refine;
  ConvBn f2_reduce, f2_refine;
  ConvBn guide;
  ConvLayer edge_head;

  void build(int f1_ch, int f2_ch, int edge_ch);
  std::pair<Feature, Feature> forward(nn::Tape& t, const Feature& f1,
                                      const Feature& f2, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

// Channel attention: GAP -> 1x1 (ReLU) -> 1x1 (Sigmoid) -> per-channel scale.
struct WeightedBlock {
  ConvLayer fc1, fc2;
  int channels = 0;

  void build(int ch, int reduction);
  nn::Var forward(nn::Tape& t, nn::Var x);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Bottom-up fusion of the three decoder outputs plus the optional guidance.
// The prediction conv is kept as two 1x1 kernels (aggregate path + guidance
// path) whose outputs are summed; this is algebraically the concat-then-1x1
// of the guided variant while keeping the unguided parameters shared.
struct Aggregator {
  bool use_wam = true;
  std::array<WeightedBlock, 3> weighted;  // for d1, d2, d3
  ConvLayer predict;                      // d -> C, with bias
  std::optional<ConvLayer> predict_guide; // e -> C, no bias

  void build(int d_ch, int guide_ch, int num_classes, bool use_wam, int reduction);
  Feature forward(nn::Tape& t, const std::array<Feature, 3>& d_outs,
                  const std::optional<Feature>& guidance, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace detail

class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }

  // Graph builders; used by the training loop and by tests.
  std::array<Feature, 4> encode(nn::Tape& t, nn::Var image, bool training);
  struct Graph {
    nn::Var seg_logits;
    nn::Var edge_logits;  // invalid when EGM is off
  };
  Graph build(nn::Tape& t, nn::Var image, bool training);

  // Value-level forward for inference and tests.
  NetworkOutput forward(const nn::Tensor& images, bool training = false);

  void visit_params(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
  std::size_t parameter_count();
  std::vector<std::string> parameter_names();

  // Reinitializes every parameter from (seed, name); called by the ctor.
  void initialize(std::uint64_t seed);

 private:
  NetworkConfig cfg_;
  detail::ConvBn stem_conv_;
  std::array<detail::EncoderStage, 4> stages_;
  std::array<detail::DBlock, 3> dblocks_;  // d1: f4+f3, d2: d1+f2, d3: d2+f1
  std::optional<detail::EdgeGuidance> egm_;
  detail::Aggregator aggregator_;
};

}  // namespace etnet::net
