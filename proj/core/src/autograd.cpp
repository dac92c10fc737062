#include "etnet/autograd.hpp"

#include <stdexcept>

namespace etnet::nn {

Var Tape::leaf(Tensor value, bool needs_grad) {
  Slot s;
  s.value = std::move(value);
  s.needs_grad = needs_grad;
  slots_.push_back(std::move(s));
  return Var{static_cast<int>(slots_.size()) - 1};
}

Var Tape::use(Param& p) {
  Var v = leaf(p.value, true);
  record([this, v, &p] {
    if (has_grad(v)) p.grad.add_(grad(v));
  });
  return v;
}

Tensor& Tape::grad(Var v) {
  Slot& s = slots_[v.id];
  if (s.grad.empty()) {
    const auto& d = s.value.dims();
    s.grad = Tensor(d[0], d[1], d[2], d[3]);
  }
  return s.grad;
}

void Tape::backward(Var scalar_loss) {
  const Tensor& lv = value(scalar_loss);
  if (lv.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  backward_from(scalar_loss, Tensor::scalar(1.0));
}

void Tape::backward_from(Var v, const Tensor& seed) {
  if (!seed.same_shape(value(v))) {
    throw std::invalid_argument("backward_from: seed shape mismatch");
  }
  grad(v).add_(seed);
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

}  // namespace etnet::nn
