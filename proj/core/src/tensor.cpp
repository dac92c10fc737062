#include "etnet/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace etnet::nn {

Tensor::Tensor(int n, int c, int h, int w) : dims_{n, c, h, w} {
  if (n < 0 || c < 0 || h < 0 || w < 0) {
    throw std::invalid_argument("tensor dims must be nonnegative");
  }
  buf_ = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n) * c * h * w, 0.0);
}

Tensor Tensor::scalar(double v) {
  Tensor t(1, 1, 1, 1);
  t.data()[0] = v;
  return t;
}

std::int64_t Tensor::size() const {
  return static_cast<std::int64_t>(dims_[0]) * dims_[1] * dims_[2] * dims_[3];
}

Tensor Tensor::clone() const {
  Tensor out;
  out.dims_ = dims_;
  out.buf_ = buf_ ? std::make_shared<std::vector<double>>(*buf_) : nullptr;
  return out;
}

void Tensor::fill(double v) {
  if (buf_) std::fill(buf_->begin(), buf_->end(), v);
}

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("add_: shape mismatch");
  double* a = data();
  const double* b = other.data();
  const std::int64_t n = size();
  for (std::int64_t i = 0; i < n; ++i) a[i] += b[i];
}

bool Tensor::all_finite() const {
  const double* a = data();
  const std::int64_t n = size();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

}  // namespace etnet::nn
