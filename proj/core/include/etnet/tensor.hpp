#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace etnet::nn {

// Dense 4-D array in NCHW layout. Copies are shallow (shared storage);
// use clone() for an independent buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w);

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
  static Tensor scalar(double v);

  int n() const { return dims_[0]; }
  int c() const { return dims_[1]; }
  int h() const { return dims_[2]; }
  int w() const { return dims_[3]; }
  const std::array<int, 4>& dims() const { return dims_; }
  std::int64_t size() const;
  bool empty() const { return !buf_; }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }

  double& at(int n, int c, int h, int w) { return (*buf_)[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return (*buf_)[index(n, c, h, w)]; }
  std::int64_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::int64_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }

  // pointer to the start of sample n / channel c
  double* sample(int n) { return data() + static_cast<std::int64_t>(n) * dims_[1] * dims_[2] * dims_[3]; }
  const double* sample(int n) const { return data() + static_cast<std::int64_t>(n) * dims_[1] * dims_[2] * dims_[3]; }

  Tensor clone() const;
  void fill(double v);
  void add_(const Tensor& other);        // elementwise +=
  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
  bool all_finite() const;

 private:
  std::array<int, 4> dims_{0, 0, 0, 0};
  std::shared_ptr<std::vector<double>> buf_;
};

}  // namespace etnet::nn
