#pragma once

#include <functional>
#include <span>
#include <vector>

#include "etnet/tensor.hpp"

namespace etnet::nn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Trainable array plus its gradient accumulator and init recipe.
struct Param {
  enum class Init { Zero, One, HeNormal, Const };

  Tensor value;
  Tensor grad;
  Init init = Init::Zero;
  double init_const = 0.0;
  int fan_in = 0;
  bool decay = false;  // participates in weight decay

  void resize(int n, int c, int h, int w) {
    value = Tensor(n, c, h, w);
    grad = Tensor(n, c, h, w);
  }
  void zero_grad() { grad.fill(0.0); }
};

// Reverse-mode tape. Ops append values and backward closures during the
// forward pass; backward() replays the closures in reverse.
class Tape {
 public:
  Var leaf(Tensor value, bool needs_grad = false);
  Var use(Param& p);  // leaf view of p.value whose gradient lands in p.grad

  const Tensor& value(Var v) const { return slots_[v.id].value; }
  bool needs_grad(Var v) const { return slots_[v.id].needs_grad; }
  bool has_grad(Var v) const { return !slots_[v.id].grad.empty(); }
  Tensor& grad(Var v);  // lazily allocated zeros

  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
  void backward(Var scalar_loss);
  // seeds an arbitrary output gradient instead of a scalar loss
  void backward_from(Var v, const Tensor& seed);

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
  };
  std::vector<Slot> slots_;
  std::vector<std::function<void()>> steps_;
};

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

Var conv2d(Tape& t, Var x, Param& weight, Param* bias, const ConvSpec& spec);
Var batch_norm(Tape& t, Var x, Param& gamma, Param& beta, Tensor& running_mean,
               Tensor& running_var, bool training, double momentum = 0.1,
               double eps = 1e-5);
Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var max_pool_3x3_s2(Tape& t, Var x);
Var upsample_bilinear(Tape& t, Var x, int out_h, int out_w);
Var global_avg_pool(Tape& t, Var x);
Var scale_channels(Tape& t, Var x, Var w);  // w has shape (n, c, 1, 1)
Var concat_channels(Tape& t, std::span<const Var> xs);
Var add(Tape& t, Var a, Var b);
Var affine_combine(Tape& t, Var a, double ca, Var b, double cb);  // scalar vars

// Reference used by tests: plain direct convolution, no GEMM path.
Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor* bias,
                    const ConvSpec& spec);

}  // namespace etnet::nn
