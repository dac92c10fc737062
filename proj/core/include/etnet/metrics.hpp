#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace etnet::metrics {

// counts[t * classes + p] = pixels with true class t predicted as p.
// Values are immutable; accumulation returns a new matrix.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes);

  int classes() const { return classes_; }
  std::uint64_t at(int t, int p) const { return counts_[static_cast<std::size_t>(t) * classes_ + p]; }
  std::uint64_t total() const;
  ConfusionMatrix merged(const ConfusionMatrix& other) const;

  friend ConfusionMatrix accumulate(const ConfusionMatrix& cm,
                                    std::span<const std::uint8_t> pred,
                                    std::span<const std::uint8_t> gt);

 private:
  int classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix accumulate(const ConfusionMatrix& cm, std::span<const std::uint8_t> pred,
                           std::span<const std::uint8_t> gt);

// 2 TP / (2 TP + FP + FN); 1.0 when the class appears in neither stream.
double dice(const ConfusionMatrix& cm, int cls);
double iou(const ConfusionMatrix& cm, int cls);
// mean over classes of TP / (TP + FP + FN), absent classes excluded
double miou(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

struct MetricReport {
  int classes = 0;
  long samples = 0;
  std::vector<double> dice;
  std::vector<double> iou;
  double miou = 0.0;
  double acc = 0.0;
  bool has_edge = false;
  double edge_dice_fg = 0.0;  // foreground dice of the edge stream
  std::string config_hash;

  std::string to_text() const;
};

MetricReport report_from(const ConfusionMatrix& cm, long samples,
                         const std::string& config_hash);

}  // namespace etnet::metrics
