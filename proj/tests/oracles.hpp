#pragma once

// Test-only reference implementations, written independently of the library
// code paths they check.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "etnet/losses.hpp"
#include "etnet/rng.hpp"

namespace oracle {

// Jaccard loss of a miss-set: pixels in the set are predicted wrong (their
// class-c membership flipped), everything else right.
inline double jaccard_loss_of_set(const std::vector<int>& labels, int cls,
                                  const std::vector<bool>& miss) {
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool fg = labels[i] == cls;
    const bool pred = fg ? !miss[i] : miss[i];
    if (fg && pred) ++inter;
    if (fg || pred) ++uni;
  }
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

// Lovasz extension evaluated from its sorted-interpolation definition:
// sum_k m_(k) * (J(S_k) - J(S_{k-1})) over prefixes of the descending order.
// Mirrors the spec's absent-class convention (zero term when the class has
// no foreground).
inline double lovasz_extension_loss(const etnet::losses::ProbMap& probs,
                                    const std::vector<int>& labels,
                                    bool present_only = false) {
  const int n = probs.pixels, classes = probs.classes;
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < classes; ++c) {
    bool present = false;
    for (int l : labels) present = present || l == c;
    if (!present) {
      if (!present_only) ++count;  // contributes zero
      continue;
    }
    std::vector<double> m(n);
    for (int i = 0; i < n; ++i) {
      const double p = probs.at(i, c);
      m[i] = labels[i] == c ? 1.0 - p : p;
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return m[a] > m[b]; });

    std::vector<bool> miss(n, false);
    double prev = jaccard_loss_of_set(labels, c, miss);  // empty set
    double term = 0.0;
    for (int k = 0; k < n; ++k) {
      miss[order[k]] = true;
      const double cur = jaccard_loss_of_set(labels, c, miss);
      term += m[order[k]] * (cur - prev);
      prev = cur;
    }
    sum += term;
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

// random probability rows on a 1/grid lattice (exactly summing to 1)
inline etnet::losses::ProbMap random_grid_probs(etnet::Rng& rng, int pixels, int classes,
                                                int grid = 20) {
  etnet::losses::ProbMap p;
  p.pixels = pixels;
  p.classes = classes;
  p.values.resize(static_cast<std::size_t>(pixels) * classes);
  for (int i = 0; i < pixels; ++i) {
    int remaining = grid;
    for (int c = 0; c < classes - 1; ++c) {
      const int k = rng.uniform_int(0, remaining);
      p.values[static_cast<std::size_t>(i) * classes + c] = static_cast<double>(k) / grid;
      remaining -= k;
    }
    p.values[static_cast<std::size_t>(i) * classes + classes - 1] =
        static_cast<double>(remaining) / grid;
  }
  return p;
}

inline std::vector<int> random_labels(etnet::Rng& rng, int pixels, int classes) {
  std::vector<int> labels(pixels);
  for (int& l : labels) l = rng.uniform_int(0, classes - 1);
  return labels;
}

// per-pixel metric counts, no confusion matrix involved
struct PixelMetrics {
  std::vector<double> dice, iou;
  double miou = 0.0, acc = 0.0;
};

inline PixelMetrics brute_force_metrics(const std::vector<std::uint8_t>& pred,
                                        const std::vector<std::uint8_t>& gt, int classes) {
  PixelMetrics out;
  double iou_sum = 0.0;
  int present = 0;
  long correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == gt[i]) ++correct;
  }
  out.acc = static_cast<double>(correct) / static_cast<double>(pred.size());
  for (int c = 0; c < classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == c, g = gt[i] == c;
      if (p && g) ++tp;
      if (p && !g) ++fp;
      if (!p && g) ++fn;
    }
    out.dice.push_back(tp + fp + fn == 0 ? 1.0
                                         : 2.0 * tp / static_cast<double>(2 * tp + fp + fn));
    out.iou.push_back(tp + fp + fn == 0 ? 1.0 : tp / static_cast<double>(tp + fp + fn));
    if (tp + fp + fn > 0) {
      iou_sum += tp / static_cast<double>(tp + fp + fn);
      ++present;
    }
  }
  out.miou = iou_sum / present;
  return out;
}

}  // namespace oracle
