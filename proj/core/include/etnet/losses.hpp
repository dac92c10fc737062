#pragma once

#include <cstdint>
#include <vector>

#include "etnet/autograd.hpp"

namespace etnet::losses {

// Per-pixel class probabilities, row-major pixels x classes.
struct ProbMap {
  int pixels = 0;
  int classes = 0;
  std::vector<double> values;

  double at(int i, int c) const { return values[static_cast<std::size_t>(i) * classes + c]; }
};

struct GroundTruth {
  std::vector<int> labels;  // class index per pixel
};

struct LossWeights {
  double alpha = 0.3;
};

struct TotalLoss {
  double total = 0.0;
  double seg = 0.0;
  double edge = 0.0;
};

ProbMap softmax(const std::vector<double>& logits, int pixels, int classes);

// m_i = 1 - p_i(c) where the pixel's label is c, p_i(c) otherwise
std::vector<double> pixel_errors(const ProbMap& probs, const GroundTruth& gt, int cls);

// Jaccard-loss increments along the descending-error order. sorted_fg is the
// foreground indicator for the class, already permuted by that order.
// All-zero input (class absent) yields an all-zero result.
std::vector<double> lovasz_grad(const std::vector<int>& sorted_fg);

double lovasz_softmax_loss(const ProbMap& probs, const GroundTruth& gt,
                           bool present_classes_only = false);

TotalLoss total_loss(const ProbMap& seg_probs, const ProbMap& edge_probs,
                     const GroundTruth& seg_gt, const GroundTruth& edge_gt,
                     const LossWeights& w, bool present_classes_only = false);

// Loss and its gradient with respect to the logits, composed through the
// softmax. Everything in double; the training op delegates here.
struct LossGrad {
  double loss = 0.0;
  std::vector<double> dlogits;  // pixels x classes
};
LossGrad lovasz_softmax_from_logits(const std::vector<double>& logits, int pixels,
                                    int classes, const GroundTruth& gt,
                                    bool present_classes_only = false);

// Tape op: logits are (N, C, H, W), labels row-major over (n, h, w).
// Returns a scalar var; *value_out (optional) receives the loss value.
nn::Var lovasz_softmax_op(nn::Tape& t, nn::Var logits,
                          const std::vector<std::uint8_t>& labels,
                          bool present_classes_only = false,
                          double* value_out = nullptr);

}  // namespace etnet::losses
