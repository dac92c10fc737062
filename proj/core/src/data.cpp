#include "etnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "etnet/image_io.hpp"
#include "etnet/rng.hpp"

namespace etnet::data {

namespace fs = std::filesystem;

EdgeMap derive_edges(const LabelMap& mask, int kernel) {
  if (kernel < 3 || kernel % 2 == 0) {
    throw std::invalid_argument("derive_edges: kernel must be odd and >= 3");
  }
  const int r = kernel / 2;
  EdgeMap edge;
  edge.h = mask.h;
  edge.w = mask.w;
  edge.v.assign(static_cast<std::size_t>(mask.h) * mask.w, 0);
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) {
      const std::uint8_t center = mask.at(y, x);
      bool mixed = false;
      for (int dy = -r; dy <= r && !mixed; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= mask.h) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= mask.w) continue;
          if (mask.at(yy, xx) != center) {
            mixed = true;
            break;
          }
        }
      }
      if (mixed) edge.at(y, x) = 1;
    }
  }
  return edge;
}

namespace {

// reflect-101 (border pixel not repeated)
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

Image mirror_image(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return out;
}

LabelMap mirror_map(const LabelMap& m) {
  LabelMap out = m;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, m.w - 1 - x);
  return out;
}

// Joint scale + rotation about the canvas center. Output canvas is the
// scaled bounding size; source coordinates are produced by the inverse map
// with reflect-101 sampling.
struct Warp {
  double inv_cos, inv_sin, inv_scale;
  double cx_in, cy_in, cx_out, cy_out;

  void source(double xo, double yo, double* xi, double* yi) const {
    const double dx = xo - cx_out, dy = yo - cy_out;
    *xi = cx_in + inv_scale * (inv_cos * dx - inv_sin * dy);
    *yi = cy_in + inv_scale * (inv_sin * dx + inv_cos * dy);
  }
};

Image warp_image(const Image& img, const Warp& wp, int out_h, int out_w) {
  Image out;
  out.h = out_h;
  out.w = out_w;
  out.rgb.resize(static_cast<std::size_t>(out_h) * out_w * 3);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double sx, sy;
      wp.source(x, y, &sx, &sy);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const int xs[2] = {reflect(x0, img.w), reflect(x0 + 1, img.w)};
      const int ys[2] = {reflect(y0, img.h), reflect(y0 + 1, img.h)};
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * img.at(ys[0], xs[0], c) + fx * img.at(ys[0], xs[1], c)) +
                         fy * ((1 - fx) * img.at(ys[1], xs[0], c) + fx * img.at(ys[1], xs[1], c));
        out.at(y, x, c) = v;
      }
    }
  }
  return out;
}

LabelMap warp_map(const LabelMap& m, const Warp& wp, int out_h, int out_w) {
  LabelMap out;
  out.h = out_h;
  out.w = out_w;
  out.v.resize(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double sx, sy;
      wp.source(x, y, &sx, &sy);
      const int xn = reflect(static_cast<int>(std::lround(sx)), m.w);
      const int yn = reflect(static_cast<int>(std::lround(sy)), m.h);
      out.at(y, x) = m.at(yn, xn);
    }
  }
  return out;
}

void color_jitter(Image& img, double brightness, double contrast, double saturation) {
  double mean = 0.0;
  for (double v : img.rgb) mean += v;
  mean /= static_cast<double>(img.rgb.size());
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double gray = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) {
        double v = img.at(y, x, c) * brightness;
        v = (v - mean) * contrast + mean;
        v = gray + (v - gray) * saturation;
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

Image pad_reflect(const Image& img, int h, int w) {
  if (img.h >= h && img.w >= w) return img;
  Image out;
  out.h = std::max(h, img.h);
  out.w = std::max(w, img.w);
  out.rgb.resize(static_cast<std::size_t>(out.h) * out.w * 3);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(reflect(y, img.h), reflect(x, img.w), c);
  return out;
}

LabelMap pad_reflect(const LabelMap& m, int h, int w) {
  if (m.h >= h && m.w >= w) return m;
  LabelMap out;
  out.h = std::max(h, m.h);
  out.w = std::max(w, m.w);
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = m.at(reflect(y, m.h), reflect(x, m.w));
  return out;
}

Image crop(const Image& img, int y0, int x0, int size) {
  Image out;
  out.h = size;
  out.w = size;
  out.rgb.resize(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

LabelMap crop(const LabelMap& m, int y0, int x0, int size) {
  LabelMap out;
  out.h = size;
  out.w = size;
  out.v.resize(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = m.at(y0 + y, x0 + x);
  return out;
}

}  // namespace

Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t step_seed) {
  Rng rng(mix64(cfg.seed, step_seed, fnv1a64(sample.id)));

  Image img = sample.image;
  LabelMap mask = sample.mask;

  if (rng.bernoulli(cfg.mirror_prob)) {
    img = mirror_image(img);
    mask = mirror_map(mask);
  }

  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double angle_deg = rng.uniform(cfg.rot_min_deg, cfg.rot_max_deg);
  if (scale != 1.0 || angle_deg != 0.0) {
    const int out_h = std::max(1, static_cast<int>(std::lround(img.h * scale)));
    const int out_w = std::max(1, static_cast<int>(std::lround(img.w * scale)));
    const double rad = angle_deg * 3.14159265358979323846 / 180.0;
    Warp wp;
    wp.inv_cos = std::cos(-rad);
    wp.inv_sin = std::sin(-rad);
    wp.inv_scale = 1.0 / scale;
    wp.cx_in = (img.w - 1) / 2.0;
    wp.cy_in = (img.h - 1) / 2.0;
    wp.cx_out = (out_w - 1) / 2.0;
    wp.cy_out = (out_h - 1) / 2.0;
    img = warp_image(img, wp, out_h, out_w);
    mask = warp_map(mask, wp, out_h, out_w);
  }

  if (rng.bernoulli(cfg.color_jitter_prob)) {
    const double b = rng.uniform(0.8, 1.2);
    const double c = rng.uniform(0.8, 1.2);
    const double s = rng.uniform(0.8, 1.2);
    color_jitter(img, b, c, s);
  }

  img = pad_reflect(img, cfg.crop_size, cfg.crop_size);
  mask = pad_reflect(mask, cfg.crop_size, cfg.crop_size);
  const int y0 = rng.uniform_int(0, img.h - cfg.crop_size);
  const int x0 = rng.uniform_int(0, img.w - cfg.crop_size);

  Sample out;
  out.image = crop(img, y0, x0, cfg.crop_size);
  out.mask = crop(mask, y0, x0, cfg.crop_size);
  out.edge = derive_edges(out.mask, cfg.edge_kernel);
  out.id = sample.id;
  return out;
}

Sample pad_to_multiple(const Sample& s, int multiple) {
  const int h = (s.image.h + multiple - 1) / multiple * multiple;
  const int w = (s.image.w + multiple - 1) / multiple * multiple;
  if (h == s.image.h && w == s.image.w) return s;
  Sample out;
  out.id = s.id;
  out.image = pad_reflect(s.image, h, w);
  out.mask = pad_reflect(s.mask, h, w);
  out.edge = pad_reflect(s.edge, h, w);
  return out;
}

std::vector<Sample> generate_synthetic(int n, int size, int classes, std::uint64_t seed) {
  if (classes != 2 && classes != 3) {
    throw std::invalid_argument("generate_synthetic: classes must be 2 or 3");
  }
  if (size < 16 || size % 16 != 0) {
    throw std::invalid_argument("generate_synthetic: size must be a positive multiple of 16");
  }

  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(i), fnv1a64("synthetic")));

    // outer ellipse fully inside the frame, inner one concentric and scaled
    const double a1 = rng.uniform(0.15, 0.35) * size;
    const double b1 = rng.uniform(0.15, 0.35) * size;
    const double cx = rng.uniform(0.36, 0.64) * size;
    const double cy = rng.uniform(0.36, 0.64) * size;
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    const double inner = rng.uniform(0.35, 0.6);
    const double a2 = a1 * inner, b2 = b1 * inner;
    const double ct = std::cos(theta), st = std::sin(theta);

    Sample s;
    s.id = "sample_" + std::to_string(i);
    s.mask.h = s.mask.w = size;
    s.mask.v.assign(static_cast<std::size_t>(size) * size, 0);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = ct * dx + st * dy;
        const double v = -st * dx + ct * dy;
        const double r1 = (u * u) / (a1 * a1) + (v * v) / (b1 * b1);
        if (r1 <= 1.0) {
          const double r2 = (u * u) / (a2 * a2) + (v * v) / (b2 * b2);
          s.mask.at(y, x) = (classes == 3 && r2 <= 1.0) ? 2 : 1;
        }
      }
    }

    // well-separated base colors per class, plus pixel noise
    double base[3][3];
    for (int c = 0; c < 3; ++c) base[0][c] = rng.uniform(0.05, 0.30);
    for (int c = 0; c < 3; ++c) base[1][c] = rng.uniform(0.40, 0.60);
    for (int c = 0; c < 3; ++c) base[2][c] = rng.uniform(0.70, 0.95);

    s.image.h = s.image.w = size;
    s.image.rgb.resize(static_cast<std::size_t>(size) * size * 3);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const int cls = s.mask.at(y, x);
        for (int c = 0; c < 3; ++c) {
          s.image.at(y, x, c) = std::clamp(base[cls][c] + 0.03 * rng.normal(), 0.0, 1.0);
        }
      }
    }
    s.edge = derive_edges(s.mask, 3);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_dataset(const fs::path& root, int classes, int edge_kernel) {
  const fs::path images_dir = root / "images";
  const fs::path masks_dir = root / "masks";
  if (!fs::exists(root)) throw std::runtime_error("dataset root not found: " + root.string());
  if (!fs::exists(images_dir)) throw std::runtime_error("missing images/ under " + root.string());

  std::vector<fs::path> image_files;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      image_files.push_back(entry.path());
    }
  }
  std::sort(image_files.begin(), image_files.end());

  std::vector<Sample> out;
  out.reserve(image_files.size());
  for (const auto& img_path : image_files) {
    const std::string stem = img_path.stem().string();
    const fs::path mask_path = masks_dir / (stem + ".png");
    if (!fs::exists(mask_path)) {
      throw std::runtime_error("no mask for image stem '" + stem + "'");
    }
    const PngImage img = read_png(img_path);
    const PngImage msk = read_png(mask_path);
    if (img.channels != 3) throw std::runtime_error("image is not RGB: " + img_path.string());
    if (msk.channels != 1) throw std::runtime_error("mask is not grayscale: " + mask_path.string());
    if (img.h != msk.h || img.w != msk.w) {
      throw std::runtime_error("image/mask dims differ for stem '" + stem + "'");
    }

    Sample s;
    s.id = stem;
    s.image.h = img.h;
    s.image.w = img.w;
    s.image.rgb.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) s.image.rgb[i] = img.pixels[i] / 255.0;
    s.mask.h = msk.h;
    s.mask.w = msk.w;
    s.mask.v = msk.pixels;
    for (std::uint8_t v : s.mask.v) {
      if (v >= classes) {
        throw std::runtime_error("mask value " + std::to_string(int(v)) + " >= classes in " +
                                 mask_path.string());
      }
    }
    s.edge = derive_edges(s.mask, edge_kernel);
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const fs::path& root, const std::vector<Sample>& samples) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    std::vector<std::uint8_t> rgb(s.image.rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
      rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.image.rgb[i], 0.0, 1.0) * 255.0));
    }
    write_png_rgb(root / "images" / (s.id + ".png"), s.image.h, s.image.w, rgb);
    write_png_gray(root / "masks" / (s.id + ".png"), s.mask.h, s.mask.w, s.mask.v);
  }
}

void write_manifest(const fs::path& root, int n, int size, int classes, std::uint64_t seed) {
  nlohmann::json j;
  j["generator"] = "nested-ellipses";
  j["version"] = 1;
  j["n"] = n;
  j["size"] = size;
  j["classes"] = classes;
  j["seed"] = seed;
  std::ofstream f(root / "manifest.json");
  f << j.dump(2) << "\n";
}

}  // namespace etnet::data
