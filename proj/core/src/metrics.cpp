#include "etnet/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace etnet::metrics {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw std::invalid_argument("confusion matrix needs >= 1 class");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionMatrix ConfusionMatrix::merged(const ConfusionMatrix& other) const {
  if (classes_ != other.classes_) throw std::invalid_argument("merge: class count mismatch");
  ConfusionMatrix out(classes_);
  for (std::size_t i = 0; i < counts_.size(); ++i) out.counts_[i] = counts_[i] + other.counts_[i];
  return out;
}

ConfusionMatrix accumulate(const ConfusionMatrix& cm, std::span<const std::uint8_t> pred,
                           std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("accumulate: size mismatch");
  ConfusionMatrix out = cm;
  const int c = out.classes_;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= c || gt[i] >= c) throw std::invalid_argument("accumulate: label >= classes");
    ++out.counts_[static_cast<std::size_t>(gt[i]) * c + pred[i]];
  }
  return out;
}

namespace {
struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;
};
ClassCounts class_counts(const ConfusionMatrix& cm, int cls) {
  ClassCounts out;
  out.tp = cm.at(cls, cls);
  for (int k = 0; k < cm.classes(); ++k) {
    if (k == cls) continue;
    out.fp += cm.at(k, cls);
    out.fn += cm.at(cls, k);
  }
  return out;
}
}  // namespace

double dice(const ConfusionMatrix& cm, int cls) {
  if (cls < 0 || cls >= cm.classes()) throw std::invalid_argument("dice: class out of range");
  const auto c = class_counts(cm, cls);
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // absent from both streams
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou(const ConfusionMatrix& cm, int cls) {
  if (cls < 0 || cls >= cm.classes()) throw std::invalid_argument("iou: class out of range");
  const auto c = class_counts(cm, cls);
  const std::uint64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int present = 0;
  for (int cls = 0; cls < cm.classes(); ++cls) {
    const auto c = class_counts(cm, cls);
    if (c.tp + c.fp + c.fn == 0) continue;
    sum += static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
    ++present;
  }
  if (present == 0) throw std::invalid_argument("miou: all classes absent");
  return sum / present;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("accuracy: empty matrix");
  std::uint64_t trace = 0;
  for (int k = 0; k < cm.classes(); ++k) trace += cm.at(k, k);
  return static_cast<double>(trace) / static_cast<double>(total);
}

MetricReport report_from(const ConfusionMatrix& cm, long samples,
                         const std::string& config_hash) {
  MetricReport r;
  r.classes = cm.classes();
  r.samples = samples;
  r.config_hash = config_hash;
  for (int c = 0; c < cm.classes(); ++c) {
    r.dice.push_back(dice(cm, c));
    r.iou.push_back(iou(cm, c));
  }
  r.miou = miou(cm);
  r.acc = accuracy(cm);
  return r;
}

std::string MetricReport::to_text() const {
  std::string out;
  char line[128];
  auto put = [&out, &line](const char* fmt, auto... args) {
    std::snprintf(line, sizeof line, fmt, args...);
    out += line;
  };
  out += "etnet metric report v1\n";
  put("config_hash: %s\n", config_hash.c_str());
  put("samples: %ld\n", samples);
  put("classes: %d\n", classes);
  for (int c = 0; c < classes; ++c) put("dice[%d]: %.12g\n", c, dice[c]);
  for (int c = 0; c < classes; ++c) put("iou[%d]: %.12g\n", c, iou[c]);
  put("miou: %.12g\n", miou);
  put("acc: %.12g\n", acc);
  if (has_edge) put("edge_dice_fg: %.12g\n", edge_dice_fg);
  return out;
}

}  // namespace etnet::metrics
