#include "etnet/network.hpp"

#include <cmath>
#include <stdexcept>

#include "etnet/rng.hpp"

namespace etnet::net {

using nn::ConvSpec;
using nn::Param;
using nn::Tape;
using nn::Tensor;
using nn::Var;

void NetworkConfig::validate() const {
  if (input_channels < 1) throw std::invalid_argument("input_channels must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (stem_width < 1) throw std::invalid_argument("stem_width must be >= 1");
  for (int w : block_widths) {
    if (w < 1) throw std::invalid_argument("block widths must be >= 1");
  }
  for (int b : blocks_per_stage) {
    if (b < 1) throw std::invalid_argument("blocks_per_stage must be >= 1");
  }
  if (decoder_channels < 1) throw std::invalid_argument("decoder_channels must be >= 1");
  if (edge_channels < 1) throw std::invalid_argument("edge_channels must be >= 1");
  if (attention_reduction < 1) throw std::invalid_argument("attention_reduction must be >= 1");
  if (decoder_channels % attention_reduction != 0) {
    throw std::invalid_argument("attention_reduction must divide decoder_channels");
  }
  if (dilation_stage4 < 1) throw std::invalid_argument("dilation_stage4 must be >= 1");
}

namespace detail {

// ---- ConvLayer ----

void ConvLayer::build(int in_channels, int out_channels, int k, ConvSpec s, bool with_bias) {
  in_ch = in_channels;
  out_ch = out_channels;
  ksize = k;
  spec = s;
  weight.resize(out_channels, in_channels / s.groups, k, k);
  weight.init = Param::Init::HeNormal;
  weight.fan_in = (in_channels / s.groups) * k * k;
  weight.decay = true;
  if (with_bias) {
    bias.emplace();
    bias->resize(1, out_channels, 1, 1);
    bias->init = Param::Init::Zero;
    bias->decay = false;
  }
}

Var ConvLayer::forward(Tape& t, Var x) {
  return nn::conv2d(t, x, weight, bias ? &*bias : nullptr, spec);
}

void ConvLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  if (bias) fn(prefix + ".bias", *bias);
}

// ---- BatchNormLayer ----

void BatchNormLayer::build(int ch) {
  channels = ch;
  gamma.resize(1, ch, 1, 1);
  gamma.init = Param::Init::One;
  gamma.decay = false;
  beta.resize(1, ch, 1, 1);
  beta.init = Param::Init::Zero;
  beta.decay = false;
  running_mean = Tensor(1, ch, 1, 1);
  running_var = Tensor(1, ch, 1, 1);
  running_var.fill(1.0);
}

Var BatchNormLayer::forward(Tape& t, Var x, bool training) {
  return nn::batch_norm(t, x, gamma, beta, running_mean, running_var, training);
}

void BatchNormLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

void BatchNormLayer::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  fn(prefix + ".running_mean", running_mean);
  fn(prefix + ".running_var", running_var);
}

// ---- ConvBn ----

void ConvBn::build(int in_ch, int out_ch, int k, ConvSpec s, bool relu) {
  conv.build(in_ch, out_ch, k, s, /*with_bias=*/false);
  bn.build(out_ch);
  relu_after = relu;
}

Var ConvBn::forward(Tape& t, Var x, bool training) {
  Var y = bn.forward(t, conv.forward(t, x), training);
  return relu_after ? nn::relu(t, y) : y;
}

void ConvBn::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv.visit(prefix + ".conv", fn);
  bn.visit(prefix + ".bn", fn);
}

void ConvBn::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  bn.visit_buffers(prefix + ".bn", fn);
}

// ---- Bottleneck ----

void Bottleneck::build(int in_ch, int out_ch, int stride, int dilation) {
  const int mid = std::max(1, out_ch / 4);
  conv1.build(in_ch, mid, 1, ConvSpec{}, true);
  conv2.build(mid, mid, 3, ConvSpec{stride, dilation, dilation, 1}, true);
  conv3.build(mid, out_ch, 1, ConvSpec{}, false);  // relu after the addition
  if (in_ch != out_ch || stride != 1) {
    projection.emplace();
    projection->build(in_ch, out_ch, 1, ConvSpec{stride, 0, 1, 1}, false);
  }
}

Var Bottleneck::forward(Tape& t, Var x, bool training) {
  Var branch = conv3.forward(t, conv2.forward(t, conv1.forward(t, x, training), training), training);
  Var shortcut = projection ? projection->forward(t, x, training) : x;
  return nn::relu(t, nn::add(t, branch, shortcut));
}

void Bottleneck::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv1.visit(prefix + ".conv1", fn);
  conv2.visit(prefix + ".conv2", fn);
  conv3.visit(prefix + ".conv3", fn);
  if (projection) projection->visit(prefix + ".down", fn);
}

void Bottleneck::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  conv1.visit_buffers(prefix + ".conv1", fn);
  conv2.visit_buffers(prefix + ".conv2", fn);
  conv3.visit_buffers(prefix + ".conv3", fn);
  if (projection) projection->visit_buffers(prefix + ".down", fn);
}

// ---- EncoderStage ----

void EncoderStage::build(int in_ch, int out_ch, int count, int stride, int dilation) {
  blocks.resize(count);
  blocks[0].build(in_ch, out_ch, stride, dilation);
  for (int i = 1; i < count; ++i) blocks[i].build(out_ch, out_ch, 1, dilation);
}

Var EncoderStage::forward(Tape& t, Var x, bool training) {
  for (auto& b : blocks) x = b.forward(t, x, training);
  return x;
}

void EncoderStage::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
  }
}

void EncoderStage::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].visit_buffers(prefix + ".block" + std::to_string(i), fn);
  }
}

// ---- DBlock ----

void DBlock::build(int high_ch, int skip_ch, int out_ch, Fusion f) {
  fusion = f;
  int fused_ch = 0;
  if (fusion == Fusion::Concat) {
    fused_ch = high_ch + skip_ch;
  } else {
    fused_ch = skip_ch;
    if (high_ch != skip_ch) {
      high_match.emplace();
      high_match->build(high_ch, skip_ch, 1, ConvSpec{}, true);
    }
  }
  depthwise.build(fused_ch, fused_ch, 3, ConvSpec{1, 1, 1, fused_ch}, true);
  pointwise.build(fused_ch, out_ch, 1, ConvSpec{}, true);
}

Feature DBlock::forward(Tape& t, const Feature& high, const Feature& skip, bool training) {
  if (high.stride < skip.stride) {
    throw std::invalid_argument("dblock: high stream is finer than the skip stream");
  }
  const Tensor& sv = t.value(skip.var);
  Var up = high.stride == skip.stride
               ? high.var
               : nn::upsample_bilinear(t, high.var, sv.h(), sv.w());
  Var fused;
  if (fusion == Fusion::Concat) {
    const Var xs[] = {up, skip.var};
    fused = nn::concat_channels(t, xs);
  } else {
    if (high_match) up = high_match->forward(t, up, training);
    fused = nn::add(t, up, skip.var);
  }
  Var y = pointwise.forward(t, depthwise.forward(t, fused, training), training);
  return Feature{y, skip.stride, pointwise.conv.out_ch};
}

void DBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  if (high_match) high_match->visit(prefix + ".proj", fn);
  depthwise.visit(prefix + ".dw", fn);
  pointwise.visit(prefix + ".pw", fn);
}

void DBlock::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  if (high_match) high_match->visit_buffers(prefix + ".proj", fn);
  depthwise.visit_buffers(prefix + ".dw", fn);
  pointwise.visit_buffers(prefix + ".pw", fn);
}

// ---- EdgeGuidance ----

void EdgeGuidance::build(int f1_ch, int f2_ch, int edge_ch) {
  f1_reduce.build(f1_ch, edge_ch, 1, ConvSpec{}, true);
  f1_refine.build(edge_ch, edge_ch, 3, ConvSpec{1, 1, 1, 1}, true);
  f2_reduce.build(f2_ch, edge_ch, 1, ConvSpec{}, true);
  f2_refine.build(edge_ch, edge_ch, 3, ConvSpec{1, 1, 1, 1}, true);
  guide.build(2 * edge_ch, edge_ch, 1, ConvSpec{}, true);
  edge_head.build(2 * edge_ch, 2, 1, ConvSpec{}, /*with_bias=*/true);
}

std::pair<Feature, Feature> EdgeGuidance::forward(Tape& t, const Feature& f1,
                                                  const Feature& f2, bool training) {
  if (f1.stride != 4 || f2.stride != 8) {
    throw std::invalid_argument("edge_guidance: expected strides 4 and 8");
  }
  const Tensor& f1v = t.value(f1.var);
  Var up = nn::upsample_bilinear(t, f2.var, f1v.h(), f1v.w());
  Var a = f1_refine.forward(t, f1_reduce.forward(t, f1.var, training), training);
  Var b = f2_refine.forward(t, f2_reduce.forward(t, up, training), training);
  const Var xs[] = {a, b};
  Var cat = nn::concat_channels(t, xs);
  Var g = guide.forward(t, cat, training);
  Var e = edge_head.forward(t, cat);
  return {Feature{g, 4, guide.conv.out_ch}, Feature{e, 4, 2}};
}

void EdgeGuidance::visit(const std::string& prefix, const ParamVisitor& fn) {
  f1_reduce.visit(prefix + ".f1_reduce", fn);
  f1_refine.visit(prefix + ".f1_refine", fn);
  f2_reduce.visit(prefix + ".f2_reduce", fn);
  f2_refine.visit(prefix + ".f2_refine", fn);
  guide.visit(prefix + ".guide", fn);
  edge_head.visit(prefix + ".edge", fn);
}

void EdgeGuidance::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  f1_reduce.visit_buffers(prefix + ".f1_reduce", fn);
  f1_refine.visit_buffers(prefix + ".f1_refine", fn);
  f2_reduce.visit_buffers(prefix + ".f2_reduce", fn);
  f2_refine.visit_buffers(prefix + ".f2_refine", fn);
  guide.visit_buffers(prefix + ".guide", fn);
}

// ---- WeightedBlock ----

void WeightedBlock::build(int ch, int reduction) {
  if (ch < reduction) throw std::invalid_argument("weighted_block: channels < reduction");
  channels = ch;
  fc1.build(ch, ch / reduction, 1, ConvSpec{}, true);
  fc2.build(ch / reduction, ch, 1, ConvSpec{}, true);
  // pooled inputs are nonnegative; a positive bias keeps the narrow
  // bottleneck units active at init
  fc1.bias->init = Param::Init::Const;
  fc1.bias->init_const = 0.5;
}

Var WeightedBlock::forward(Tape& t, Var x) {
  if (t.value(x).c() != channels) throw std::invalid_argument("weighted_block: channel mismatch");
  Var w = nn::global_avg_pool(t, x);
  w = nn::relu(t, fc1.forward(t, w));
  w = nn::sigmoid(t, fc2.forward(t, w));
  return nn::scale_channels(t, x, w);
}

void WeightedBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

// ---- Aggregator ----

void Aggregator::build(int d_ch, int guide_ch, int num_classes, bool wam, int reduction) {
  use_wam = wam;
  if (use_wam) {
    for (auto& wb : weighted) wb.build(d_ch, reduction);
  }
  predict.build(d_ch, num_classes, 1, ConvSpec{}, /*with_bias=*/true);
  if (guide_ch > 0) {
    predict_guide.emplace();
    predict_guide->build(guide_ch, num_classes, 1, ConvSpec{}, /*with_bias=*/false);
  }
}

Feature Aggregator::forward(Tape& t, const std::array<Feature, 3>& d_outs,
                            const std::optional<Feature>& guidance, bool training) {
  (void)training;
  if (d_outs[0].stride != 16 || d_outs[1].stride != 8 || d_outs[2].stride != 4) {
    throw std::invalid_argument("aggregate: expected strides (16, 8, 4)");
  }
  const int d_ch = d_outs[0].channels;
  if (d_outs[1].channels != d_ch || d_outs[2].channels != d_ch) {
    throw std::invalid_argument("aggregate: decoder channel mismatch");
  }
  std::array<Var, 3> ws;
  for (int i = 0; i < 3; ++i) {
    ws[i] = use_wam ? weighted[i].forward(t, d_outs[i].var) : d_outs[i].var;
  }
  const Tensor& d2v = t.value(d_outs[1].var);
  Var u = nn::add(t, nn::upsample_bilinear(t, ws[0], d2v.h(), d2v.w()), ws[1]);
  const Tensor& d3v = t.value(d_outs[2].var);
  u = nn::add(t, nn::upsample_bilinear(t, u, d3v.h(), d3v.w()), ws[2]);
  Var logits = predict.forward(t, u);
  if (guidance) {
    if (!predict_guide) throw std::invalid_argument("aggregate: guidance passed to an unguided head");
    logits = nn::add(t, logits, predict_guide->forward(t, guidance->var));
  }
  return Feature{logits, 4, predict.out_ch};
}

void Aggregator::visit(const std::string& prefix, const ParamVisitor& fn) {
  if (use_wam) {
    for (std::size_t i = 0; i < weighted.size(); ++i) {
      weighted[i].visit(prefix + ".wb" + std::to_string(i + 1), fn);
    }
  }
  predict.visit(prefix + ".predict", fn);
  if (predict_guide) predict_guide->visit(prefix + ".guide", fn);
}

}  // namespace detail

// ---- Network ----

Network::Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  stem_conv_.build(cfg_.input_channels, cfg_.stem_width, 7, ConvSpec{2, 3, 1, 1}, true);
  int in_ch = cfg_.stem_width;
  const std::array<int, 4> strides{1, 2, 2, 1};
  for (int s = 0; s < 4; ++s) {
    const int dilation = s == 3 ? cfg_.dilation_stage4 : 1;
    stages_[s].build(in_ch, cfg_.block_widths[s], cfg_.blocks_per_stage[s], strides[s], dilation);
    in_ch = cfg_.block_widths[s];
  }
  const int d = cfg_.decoder_channels;
  dblocks_[0].build(cfg_.block_widths[3], cfg_.block_widths[2], d, cfg_.fusion);
  dblocks_[1].build(d, cfg_.block_widths[1], d, cfg_.fusion);
  dblocks_[2].build(d, cfg_.block_widths[0], d, cfg_.fusion);
  if (cfg_.use_egm) {
    egm_.emplace();
    egm_->build(cfg_.block_widths[0], cfg_.block_widths[1], cfg_.edge_channels);
  }
  aggregator_.build(d, cfg_.use_egm ? cfg_.edge_channels : 0, cfg_.num_classes,
                    cfg_.use_wam, cfg_.attention_reduction);
  initialize(seed);
}

std::array<Feature, 4> Network::encode(Tape& t, Var image, bool training) {
  const Tensor& img = t.value(image);
  if (img.h() % 16 != 0 || img.w() % 16 != 0) {
    throw std::invalid_argument("encode: input dims must be divisible by 16");
  }
  if (img.c() != cfg_.input_channels) {
    throw std::invalid_argument("encode: wrong input channel count");
  }
  Var x = stem_conv_.forward(t, image, training);
  x = nn::max_pool_3x3_s2(t, x);
  std::array<Feature, 4> out;
  const std::array<int, 4> feature_strides{4, 8, 16, 16};
  for (int s = 0; s < 4; ++s) {
    x = stages_[s].forward(t, x, training);
    out[s] = Feature{x, feature_strides[s], cfg_.block_widths[s]};
  }
  return out;
}

Network::Graph Network::build(Tape& t, Var image, bool training) {
  const Tensor& img = t.value(image);
  const int full_h = img.h(), full_w = img.w();
  auto feats = encode(t, image, training);

  std::optional<Feature> guidance;
  Var edge_quarter;
  if (egm_) {
    auto [g, e] = egm_->forward(t, feats[0], feats[1], training);
    guidance = g;
    edge_quarter = e.var;
  }

  Feature d1 = dblocks_[0].forward(t, feats[3], feats[2], training);
  Feature d2 = dblocks_[1].forward(t, d1, feats[1], training);
  Feature d3 = dblocks_[2].forward(t, d2, feats[0], training);

  Feature seg_quarter = aggregator_.forward(t, {d1, d2, d3}, guidance, training);

  Graph g;
  g.seg_logits = nn::upsample_bilinear(t, seg_quarter.var, full_h, full_w);
  if (egm_) g.edge_logits = nn::upsample_bilinear(t, edge_quarter, full_h, full_w);
  return g;
}

NetworkOutput Network::forward(const Tensor& images, bool training) {
  Tape t;
  Var input = t.leaf(images, /*needs_grad=*/false);
  Graph g = build(t, input, training);
  NetworkOutput out;
  out.seg_logits = t.value(g.seg_logits);
  if (g.edge_logits.valid()) out.edge_logits = t.value(g.edge_logits);
  return out;
}

void Network::visit_params(const ParamVisitor& fn) {
  stem_conv_.visit("stem", fn);
  for (int s = 0; s < 4; ++s) stages_[s].visit("enc" + std::to_string(s + 1), fn);
  for (int i = 0; i < 3; ++i) dblocks_[i].visit("dec" + std::to_string(i + 1), fn);
  if (egm_) egm_->visit("egm", fn);
  aggregator_.visit("head", fn);
}

void Network::visit_buffers(const BufferVisitor& fn) {
  stem_conv_.visit_buffers("stem", fn);
  for (int s = 0; s < 4; ++s) stages_[s].visit_buffers("enc" + std::to_string(s + 1), fn);
  for (int i = 0; i < 3; ++i) dblocks_[i].visit_buffers("dec" + std::to_string(i + 1), fn);
  if (egm_) egm_->visit_buffers("egm", fn);
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  visit_params([&n](const std::string&, Param& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

std::vector<std::string> Network::parameter_names() {
  std::vector<std::string> names;
  visit_params([&names](const std::string& name, Param&) { names.push_back(name); });
  return names;
}

void Network::initialize(std::uint64_t seed) {
  visit_params([seed](const std::string& name, Param& p) {
    Rng rng(mix64(seed, fnv1a64(name)));
    double* d = p.value.data();
    const std::int64_t n = p.value.size();
    switch (p.init) {
      case Param::Init::HeNormal: {
        const double stddev = std::sqrt(2.0 / std::max(1, p.fan_in));
        for (std::int64_t i = 0; i < n; ++i) d[i] = stddev * rng.normal();
        break;
      }
      case Param::Init::One:
        p.value.fill(1.0);
        break;
      case Param::Init::Const:
        p.value.fill(p.init_const);
        break;
      case Param::Init::Zero:
        p.value.fill(0.0);
        break;
    }
    p.zero_grad();
  });
}

}  // namespace etnet::net
