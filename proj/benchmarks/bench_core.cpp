#include <benchmark/benchmark.h>

#include "etnet/data.hpp"
#include "etnet/losses.hpp"
#include "etnet/network.hpp"
#include "etnet/rng.hpp"

using namespace etnet;

namespace {

nn::Tensor random_image(int n, int size, std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor t(n, 3, size, size);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = 0.3 * rng.normal();
  return t;
}

net::NetworkConfig toy_config() {
  net::NetworkConfig cfg;
  cfg.stem_width = 8;
  cfg.block_widths = {32, 64, 128, 256};
  cfg.blocks_per_stage = {2, 2, 2, 2};
  cfg.decoder_channels = 16;
  cfg.edge_channels = 16;
  cfg.attention_reduction = 4;
  cfg.num_classes = 3;
  return cfg;
}

void BM_conv2d_forward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  Rng rng(1);
  nn::Param w;
  w.resize(ch, ch, 3, 3);
  for (std::int64_t i = 0; i < w.value.size(); ++i) w.value.data()[i] = 0.1 * rng.normal();
  nn::Tensor x(2, ch, 24, 24);
  for (std::int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (auto _ : state) {
    nn::Tape t;
    auto y = nn::conv2d(t, t.leaf(x, false), w, nullptr, nn::ConvSpec{1, 1, 1, 1});
    benchmark::DoNotOptimize(t.value(y).data());
  }
}
BENCHMARK(BM_conv2d_forward)->Arg(16)->Arg(64);

void BM_network_forward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  net::Network network(toy_config(), 7);
  nn::Tensor img = random_image(1, size, 2);
  for (auto _ : state) {
    auto out = network.forward(img, false);
    benchmark::DoNotOptimize(out.seg_logits.data());
  }
}
BENCHMARK(BM_network_forward)->Arg(96)->Arg(128);

void BM_train_step_graph(benchmark::State& state) {
  net::Network network(toy_config(), 7);
  nn::Tensor img = random_image(4, 96, 3);
  Rng rng(4);
  std::vector<std::uint8_t> seg(4 * 96 * 96), edge(4 * 96 * 96);
  for (auto& v : seg) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  for (auto& v : edge) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  for (auto _ : state) {
    network.visit_params([](const std::string&, nn::Param& p) { p.zero_grad(); });
    nn::Tape t;
    auto g = network.build(t, t.leaf(img, false), true);
    auto seg_loss = losses::lovasz_softmax_op(t, g.seg_logits, seg);
    auto edge_loss = losses::lovasz_softmax_op(t, g.edge_logits, edge);
    t.backward(nn::affine_combine(t, seg_loss, 0.3, edge_loss, 0.7));
    benchmark::DoNotOptimize(network.parameter_count());
  }
}
BENCHMARK(BM_train_step_graph);

void BM_lovasz_loss(benchmark::State& state) {
  const int pixels = static_cast<int>(state.range(0));
  Rng rng(5);
  std::vector<double> logits(static_cast<std::size_t>(pixels) * 3);
  for (double& v : logits) v = rng.normal();
  losses::GroundTruth gt;
  gt.labels.resize(pixels);
  for (int& l : gt.labels) l = rng.uniform_int(0, 2);
  for (auto _ : state) {
    auto lg = losses::lovasz_softmax_from_logits(logits, pixels, 3, gt);
    benchmark::DoNotOptimize(lg.loss);
  }
}
BENCHMARK(BM_lovasz_loss)->Arg(1 << 12)->Arg(1 << 15);

void BM_augment(benchmark::State& state) {
  auto samples = data::generate_synthetic(1, 96, 3, 6);
  data::AugmentConfig cfg;
  cfg.crop_size = 96;
  cfg.seed = 1;
  std::uint64_t step = 0;
  for (auto _ : state) {
    auto s = data::augment(samples[0], cfg, step++);
    benchmark::DoNotOptimize(s.mask.v.data());
  }
}
BENCHMARK(BM_augment);

}  // namespace

BENCHMARK_MAIN();
