#include "etnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace etnet::losses {

namespace {

void check_prob_map(const ProbMap& p) {
  if (p.pixels <= 0 || p.classes <= 0) throw std::invalid_argument("empty probability map");
  if (p.values.size() != static_cast<std::size_t>(p.pixels) * p.classes) {
    throw std::invalid_argument("probability map storage does not match dims");
  }
  for (int i = 0; i < p.pixels; ++i) {
    double s = 0.0;
    for (int c = 0; c < p.classes; ++c) {
      const double v = p.at(i, c);
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("probability outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-5) throw std::invalid_argument("probability row does not sum to 1");
  }
}

void check_labels(const GroundTruth& gt, int pixels, int classes) {
  if (static_cast<int>(gt.labels.size()) != pixels) {
    throw std::invalid_argument("ground truth length does not match pixel count");
  }
  for (int l : gt.labels) {
    if (l < 0 || l >= classes) throw std::invalid_argument("label out of range");
  }
}

// descending by error, ties broken by ascending pixel index
std::vector<int> descending_order(const std::vector<double>& m) {
  std::vector<int> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return m[a] > m[b]; });
  return idx;
}

struct ClassTerm {
  double value = 0.0;
  bool present = false;
  std::vector<int> order;    // sort permutation
  std::vector<double> grad;  // d(term)/d m_sorted, i.e. the Jaccard increments
};

ClassTerm class_term(const ProbMap& probs, const GroundTruth& gt, int cls) {
  ClassTerm out;
  const int n = probs.pixels;
  std::vector<double> m = pixel_errors(probs, gt, cls);
  out.order = descending_order(m);
  std::vector<int> sorted_fg(n);
  for (int k = 0; k < n; ++k) sorted_fg[k] = gt.labels[out.order[k]] == cls ? 1 : 0;
  out.present = std::find(sorted_fg.begin(), sorted_fg.end(), 1) != sorted_fg.end();
  out.grad = lovasz_grad(sorted_fg);
  for (int k = 0; k < n; ++k) out.value += m[out.order[k]] * out.grad[k];
  return out;
}

}  // namespace

ProbMap softmax(const std::vector<double>& logits, int pixels, int classes) {
  if (pixels <= 0 || classes <= 0) throw std::invalid_argument("softmax: empty input");
  if (logits.size() != static_cast<std::size_t>(pixels) * classes) {
    throw std::invalid_argument("softmax: storage does not match dims");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
  }
  ProbMap out;
  out.pixels = pixels;
  out.classes = classes;
  out.values.resize(logits.size());
  for (int i = 0; i < pixels; ++i) {
    const double* row = logits.data() + static_cast<std::size_t>(i) * classes;
    double* dst = out.values.data() + static_cast<std::size_t>(i) * classes;
    const double mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) {
      dst[c] = std::exp(row[c] - mx);
      denom += dst[c];
    }
    for (int c = 0; c < classes; ++c) dst[c] /= denom;
  }
  return out;
}

std::vector<double> pixel_errors(const ProbMap& probs, const GroundTruth& gt, int cls) {
  check_labels(gt, probs.pixels, probs.classes);
  if (cls < 0 || cls >= probs.classes) throw std::invalid_argument("pixel_errors: class out of range");
  std::vector<double> m(probs.pixels);
  for (int i = 0; i < probs.pixels; ++i) {
    const double p = probs.at(i, cls);
    m[i] = gt.labels[i] == cls ? 1.0 - p : p;
  }
  return m;
}

std::vector<double> lovasz_grad(const std::vector<int>& sorted_fg) {
  const int n = static_cast<int>(sorted_fg.size());
  std::vector<double> g(n, 0.0);
  long p = 0;
  for (int v : sorted_fg) p += v;
  if (p == 0) return g;  // class absent: zero contribution
  long inter = p, uni = p;
  double prev = 0.0;
  for (int k = 0; k < n; ++k) {
    inter -= sorted_fg[k];
    uni += 1 - sorted_fg[k];
    const double jac = 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
    g[k] = jac - prev;
    prev = jac;
  }
  return g;
}

double lovasz_softmax_loss(const ProbMap& probs, const GroundTruth& gt,
                           bool present_classes_only) {
  check_prob_map(probs);
  check_labels(gt, probs.pixels, probs.classes);
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < probs.classes; ++c) {
    const ClassTerm term = class_term(probs, gt, c);
    if (present_classes_only && !term.present) continue;
    sum += term.value;
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

TotalLoss total_loss(const ProbMap& seg_probs, const ProbMap& edge_probs,
                     const GroundTruth& seg_gt, const GroundTruth& edge_gt,
                     const LossWeights& w, bool present_classes_only) {
  if (!(w.alpha >= 0.0 && w.alpha <= 1.0)) {
    throw std::invalid_argument("total_loss: alpha outside [0, 1]");
  }
  if (edge_probs.classes != 2) throw std::invalid_argument("total_loss: edge stream must have 2 classes");
  TotalLoss out;
  out.seg = lovasz_softmax_loss(seg_probs, seg_gt, present_classes_only);
  out.edge = lovasz_softmax_loss(edge_probs, edge_gt, present_classes_only);
  out.total = w.alpha * out.seg + (1.0 - w.alpha) * out.edge;
  return out;
}

LossGrad lovasz_softmax_from_logits(const std::vector<double>& logits, int pixels,
                                    int classes, const GroundTruth& gt,
                                    bool present_classes_only) {
  const ProbMap probs = softmax(logits, pixels, classes);
  check_labels(gt, pixels, classes);

  // d(loss)/d p, accumulated per class term
  std::vector<double> dprob(logits.size(), 0.0);
  double sum = 0.0;
  int count = 0;
  std::vector<ClassTerm> terms;
  terms.reserve(classes);
  for (int c = 0; c < classes; ++c) {
    terms.push_back(class_term(probs, gt, c));
    if (!(present_classes_only && !terms.back().present)) {
      sum += terms.back().value;
      ++count;
    }
  }
  const double denom = count > 0 ? static_cast<double>(count) : 1.0;
  for (int c = 0; c < classes; ++c) {
    const ClassTerm& term = terms[c];
    if (present_classes_only && !term.present) continue;
    for (int k = 0; k < pixels; ++k) {
      const int i = term.order[k];
      const double sign = gt.labels[i] == c ? -1.0 : 1.0;
      dprob[static_cast<std::size_t>(i) * classes + c] += sign * term.grad[k] / denom;
    }
  }

  // softmax backward, rowwise: dz_j = p_j (dp_j - sum_k dp_k p_k)
  LossGrad out;
  out.loss = count > 0 ? sum / count : 0.0;
  out.dlogits.resize(logits.size());
  for (int i = 0; i < pixels; ++i) {
    const double* p = probs.values.data() + static_cast<std::size_t>(i) * classes;
    const double* dp = dprob.data() + static_cast<std::size_t>(i) * classes;
    double dot = 0.0;
    for (int c = 0; c < classes; ++c) dot += dp[c] * p[c];
    double* dz = out.dlogits.data() + static_cast<std::size_t>(i) * classes;
    for (int c = 0; c < classes; ++c) dz[c] = p[c] * (dp[c] - dot);
  }
  return out;
}

nn::Var lovasz_softmax_op(nn::Tape& t, nn::Var logits,
                          const std::vector<std::uint8_t>& labels,
                          bool present_classes_only, double* value_out) {
  const nn::Tensor& lv = t.value(logits);
  const int n = lv.n(), c = lv.c(), h = lv.h(), w = lv.w();
  const int pixels = n * h * w;
  if (static_cast<int>(labels.size()) != pixels) {
    throw std::invalid_argument("lovasz_softmax_op: label count does not match logits");
  }

  // flatten (n, c, h, w) -> rows (n*h*w) x c
  std::vector<double> rows(static_cast<std::size_t>(pixels) * c);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int ni = 0; ni < n; ++ni) {
    const double* src = lv.sample(ni);
    for (int ci = 0; ci < c; ++ci) {
      for (std::int64_t i = 0; i < plane; ++i) {
        rows[(static_cast<std::int64_t>(ni) * plane + i) * c + ci] = src[ci * plane + i];
      }
    }
  }
  GroundTruth gt;
  gt.labels.assign(labels.begin(), labels.end());
  auto lg = std::make_shared<LossGrad>(
      lovasz_softmax_from_logits(rows, pixels, c, gt, present_classes_only));
  if (value_out) *value_out = lg->loss;

  nn::Var out = t.leaf(nn::Tensor::scalar(lg->loss), t.needs_grad(logits));
  if (t.needs_grad(logits)) {
    t.record([&t, logits, out, lg, n, c, plane] {
      if (!t.has_grad(out)) return;
      const double g = t.grad(out).data()[0];
      nn::Tensor& gx = t.grad(logits);
      for (int ni = 0; ni < n; ++ni) {
        double* dst = gx.sample(ni);
        for (int ci = 0; ci < c; ++ci) {
          for (std::int64_t i = 0; i < plane; ++i) {
            dst[ci * plane + i] +=
                g * lg->dlogits[(static_cast<std::int64_t>(ni) * plane + i) * c + ci];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace etnet::losses
