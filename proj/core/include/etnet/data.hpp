#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace etnet::data {

// Color image, h*w*3 interleaved, intensities in [0, 1].
struct Image {
  int h = 0, w = 0;
  std::vector<double> rgb;

  double& at(int y, int x, int ch) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch]; }
  double at(int y, int x, int ch) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch]; }
};

// Dense class-index map; also used for binary edge maps.
struct LabelMap {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

using EdgeMap = LabelMap;

struct Sample {
  Image image;
  LabelMap mask;
  EdgeMap edge;
  std::string id;
};

struct AugmentConfig {
  double mirror_prob = 0.5;
  double scale_min = 0.5, scale_max = 2.0;
  double rot_min_deg = -10.0, rot_max_deg = 10.0;
  double color_jitter_prob = 0.5;
  int crop_size = 128;
  int edge_kernel = 3;
  std::uint64_t seed = 0;
  bool enabled = true;
};

// A pixel is edge iff its kernel-neighborhood holds two distinct labels.
EdgeMap derive_edges(const LabelMap& mask, int kernel = 3);

// mirror / scale / rotate / color jitter / crop, with the RNG derived from
// (cfg.seed, step_seed, sample.id). Geometry is applied jointly; the edge map
// is re-derived from the transformed mask.
Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t step_seed);

// Nested-ellipse scenes: class 1 ellipse containing a concentric class 2
// ellipse (when classes == 3), per-class base colors plus noise.
std::vector<Sample> generate_synthetic(int n, int size, int classes, std::uint64_t seed);

// Reflect-pads bottom/right so both dims become multiples; mask and edge
// are padded alongside the image. No-op when already aligned.
Sample pad_to_multiple(const Sample& s, int multiple);

// Layout: <root>/images/<stem>.png (RGB), <root>/masks/<stem>.png (gray index).
std::vector<Sample> load_dataset(const std::filesystem::path& root, int classes,
                                 int edge_kernel = 3);
void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);
void write_manifest(const std::filesystem::path& root, int n, int size, int classes,
                    std::uint64_t seed);

}  // namespace etnet::data
