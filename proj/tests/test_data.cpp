#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "etnet/data.hpp"
#include "etnet/image_io.hpp"
#include "etnet/rng.hpp"

using namespace etnet::data;
using etnet::Rng;

namespace fs = std::filesystem;

namespace {

LabelMap map_from(int h, int w, std::vector<std::uint8_t> v) {
  LabelMap m;
  m.h = h;
  m.w = w;
  m.v = std::move(v);
  return m;
}

Sample toy_sample(int size, std::uint64_t seed) {
  return generate_synthetic(1, size, 3, seed)[0];
}

}  // namespace

TEST_CASE("derive_edges: constant mask has no edges") {
  auto m = map_from(4, 4, std::vector<std::uint8_t>(16, 2));
  auto e = derive_edges(m, 3);
  for (auto v : e.v) CHECK(v == 0);
}

TEST_CASE("derive_edges: 3x3 square in a 5x5 grid") {
  std::vector<std::uint8_t> v(25, 0);
  for (int y = 1; y <= 3; ++y)
    for (int x = 1; x <= 3; ++x) v[y * 5 + x] = 1;
  auto e = derive_edges(map_from(5, 5, std::move(v)), 3);
  int count = 0;
  for (auto ev : e.v) count += ev;
  CHECK(count == 24);
  CHECK(e.at(2, 2) == 0);  // square center is the only non-edge pixel
}

TEST_CASE("derive_edges: single corner pixel") {
  std::vector<std::uint8_t> v(25, 0);
  v[0] = 1;
  auto e = derive_edges(map_from(5, 5, std::move(v)), 3);
  std::set<std::pair<int, int>> expect = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      CHECK(e.at(y, x) == (expect.contains({y, x}) ? 1 : 0));
    }
}

TEST_CASE("derive_edges rejects even or tiny kernels") {
  auto m = map_from(2, 2, {0, 0, 0, 0});
  CHECK_THROWS_AS(derive_edges(m, 4), std::invalid_argument);
  CHECK_THROWS_AS(derive_edges(m, 1), std::invalid_argument);
}

TEST_CASE("derive_edges is invariant under label permutation") {
  Rng rng(10);
  for (int rep = 0; rep < 20; ++rep) {
    LabelMap m;
    m.h = rng.uniform_int(3, 10);
    m.w = rng.uniform_int(3, 10);
    m.v.resize(static_cast<std::size_t>(m.h) * m.w);
    for (auto& v : m.v) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));

    // permutation 0->2, 1->0, 2->1
    LabelMap relabeled = m;
    for (auto& v : relabeled.v) v = static_cast<std::uint8_t>((v + 2) % 3);
    auto e1 = derive_edges(m, 3);
    auto e2 = derive_edges(relabeled, 3);
    CHECK(e1.v == e2.v);
  }
}

TEST_CASE("augment: identity config leaves the sample unchanged") {
  auto s = toy_sample(64, 4);
  AugmentConfig cfg;
  cfg.mirror_prob = 0.0;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.rot_min_deg = cfg.rot_max_deg = 0.0;
  cfg.color_jitter_prob = 0.0;
  cfg.crop_size = 64;
  cfg.seed = 99;
  auto out = augment(s, cfg, 0);
  CHECK(out.image.rgb == s.image.rgb);
  CHECK(out.mask.v == s.mask.v);
  CHECK(out.edge.v == s.edge.v);
}

TEST_CASE("augment: identical seeds give identical outputs") {
  auto s = toy_sample(64, 5);
  AugmentConfig cfg;
  cfg.crop_size = 48;
  cfg.seed = 7;
  auto a = augment(s, cfg, 3);
  auto b = augment(s, cfg, 3);
  CHECK(a.image.rgb == b.image.rgb);
  CHECK(a.mask.v == b.mask.v);
  CHECK(a.edge.v == b.edge.v);
  auto c = augment(s, cfg, 4);
  CHECK(a.mask.v != c.mask.v);  // different step seed moves the crop
}

TEST_CASE("augment: pure mirror keeps pixelwise correspondence") {
  auto s = toy_sample(64, 6);
  AugmentConfig cfg;
  cfg.mirror_prob = 1.0;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.rot_min_deg = cfg.rot_max_deg = 0.0;
  cfg.color_jitter_prob = 0.0;
  cfg.crop_size = 64;
  cfg.seed = 1;
  auto out = augment(s, cfg, 0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      CHECK(out.mask.at(y, x) == s.mask.at(y, 63 - x));
      CHECK(out.image.at(y, x, 1) == s.image.at(y, 63 - x, 1));
    }
}

TEST_CASE("augment: output label alphabet is a subset of the input's") {
  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    auto s = toy_sample(64, 100 + rep);
    AugmentConfig cfg;
    cfg.crop_size = 48;
    cfg.seed = rep;
    auto out = augment(s, cfg, rep);
    std::set<std::uint8_t> in_labels(s.mask.v.begin(), s.mask.v.end());
    for (auto v : out.mask.v) CHECK(in_labels.contains(v));
    CHECK(out.mask.h == 48);
    CHECK(out.image.h == 48);
    CHECK(out.image.w == 48);
  }
}

TEST_CASE("augment: edges equal derive_edges of the augmented mask") {
  for (int rep = 0; rep < 8; ++rep) {
    auto s = toy_sample(64, 200 + rep);
    AugmentConfig cfg;
    cfg.crop_size = 64;
    cfg.seed = rep * 13 + 1;
    auto out = augment(s, cfg, rep);
    auto re = derive_edges(out.mask, cfg.edge_kernel);
    CHECK(out.edge.v == re.v);
  }
}

TEST_CASE("augment: pure 2x scale roughly quadruples region areas") {
  auto s = toy_sample(64, 9);
  long before = 0;
  for (auto v : s.mask.v) before += v >= 1;

  AugmentConfig cfg;
  cfg.mirror_prob = 0.0;
  cfg.scale_min = cfg.scale_max = 2.0;
  cfg.rot_min_deg = cfg.rot_max_deg = 0.0;
  cfg.color_jitter_prob = 0.0;
  cfg.crop_size = 128;  // full scaled canvas, no crop jitter
  cfg.seed = 2;
  auto out = augment(s, cfg, 0);
  long after = 0;
  for (auto v : out.mask.v) after += v >= 1;
  CHECK(after == doctest::Approx(4.0 * before).epsilon(0.05));
}

TEST_CASE("augment: small rotation preserves region area") {
  auto s = toy_sample(64, 10);
  long before = 0;
  for (auto v : s.mask.v) before += v >= 1;

  AugmentConfig cfg;
  cfg.mirror_prob = 0.0;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.rot_min_deg = cfg.rot_max_deg = 10.0;
  cfg.color_jitter_prob = 0.0;
  cfg.crop_size = 64;
  cfg.seed = 4;
  auto out = augment(s, cfg, 0);
  long after = 0;
  for (auto v : out.mask.v) after += v >= 1;
  // nested ellipses sit centrally, so a 10 degree turn keeps them in frame
  CHECK(after == doctest::Approx(static_cast<double>(before)).epsilon(0.05));
}

TEST_CASE("augment: small inputs are padded up to the crop") {
  auto s = toy_sample(32, 8);
  AugmentConfig cfg;
  cfg.scale_min = cfg.scale_max = 0.5;  // 16x16 after scaling
  cfg.crop_size = 48;
  cfg.seed = 3;
  auto out = augment(s, cfg, 0);
  CHECK(out.image.h == 48);
  CHECK(out.image.w == 48);
  CHECK(out.mask.v.size() == 48u * 48u);
}

TEST_CASE("generate_synthetic: nesting, determinism, area bounds") {
  auto a = generate_synthetic(8, 64, 3, 3);
  auto b = generate_synthetic(8, 64, 3, 3);
  REQUIRE(a.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(a[i].image.rgb == b[i].image.rgb);
    CHECK(a[i].mask.v == b[i].mask.v);
  }

  for (const auto& s : a) {
    long c1 = 0, c2 = 0;
    bool nested = true;
    for (int y = 0; y < s.mask.h && nested; ++y) {
      for (int x = 0; x < s.mask.w; ++x) {
        const int v = s.mask.at(y, x);
        if (v >= 1) ++c1;
        if (v == 2) {
          ++c2;
          // every inner pixel must touch the outer region: check the 4-hood
          bool ringed = true;
          for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= s.mask.h || xx < 0 || xx >= s.mask.w) continue;
            if (s.mask.at(yy, xx) == 0) ringed = false;
          }
          if (!ringed) {
            nested = false;
            break;
          }
        }
      }
    }
    CHECK(nested);  // no class-2 pixel borders the background
    CHECK(c2 > 0);
    const double frac = static_cast<double>(c1) / (64.0 * 64.0);
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.5);
  }
}

TEST_CASE("generate_synthetic rejects bad arguments") {
  CHECK_THROWS_AS(generate_synthetic(1, 64, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(1, 64, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(1, 60, 3, 1), std::invalid_argument);
}

TEST_CASE("dataset write/load round trip") {
  const fs::path root = fs::temp_directory_path() / "etnet_test_ds";
  fs::remove_all(root);
  auto samples = generate_synthetic(3, 48, 3, 11);
  write_dataset(root, samples);
  write_manifest(root, 3, 48, 3, 11);
  CHECK(fs::exists(root / "manifest.json"));

  auto loaded = load_dataset(root, 3);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].mask.v == samples[i].mask.v);
    CHECK(loaded[i].edge.v == samples[i].edge.v);
    CHECK(loaded[i].id == samples[i].id);
    // image round-trips through 8-bit quantization
    for (std::size_t k = 0; k < loaded[i].image.rgb.size(); k += 97) {
      CHECK(loaded[i].image.rgb[k] ==
            doctest::Approx(samples[i].image.rgb[k]).epsilon(1.0 / 255));
    }
  }
  fs::remove_all(root);
}

TEST_CASE("load_dataset contract errors") {
  const fs::path root = fs::temp_directory_path() / "etnet_test_ds_err";
  fs::remove_all(root);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  CHECK(load_dataset(root, 3).empty());

  // image without a mask names the stem
  auto samples = generate_synthetic(1, 48, 3, 1);
  write_dataset(root, samples);
  fs::remove(root / "masks" / "sample_0.png");
  try {
    load_dataset(root, 3);
    FAIL("expected an error for the missing mask");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("sample_0") != std::string::npos);
  }

  // out-of-range mask value reports value and file
  write_dataset(root, samples);
  try {
    load_dataset(root, 2);  // mask holds class 2
    FAIL("expected an error for the out-of-range label");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("sample_0") != std::string::npos);
  }
  fs::remove_all(root);
}

TEST_CASE("pad_to_multiple reflects bottom/right") {
  auto s = toy_sample(48, 2);
  s.image.h = 40;  // pretend an unaligned source by trimming rows
  s.image.rgb.resize(static_cast<std::size_t>(40) * 48 * 3);
  s.mask.h = 40;
  s.mask.v.resize(static_cast<std::size_t>(40) * 48);
  s.edge.h = 40;
  s.edge.v.resize(static_cast<std::size_t>(40) * 48);
  auto padded = pad_to_multiple(s, 16);
  CHECK(padded.image.h == 48);
  CHECK(padded.image.w == 48);
  // reflect-101: row 40 mirrors row 38
  for (int x = 0; x < 48; ++x) CHECK(padded.mask.at(40, x) == s.mask.at(38, x));
}
