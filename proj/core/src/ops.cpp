#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "etnet/autograd.hpp"

namespace etnet::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

int conv_out_dim(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// cols: (channels * k * k) rows x (out_h * out_w) columns, zero padding
void im2col(const double* x, int channels, int h, int w, int k, int stride,
            int pad, int dilation, int out_h, int out_w, double* cols) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int ci = 0; ci < channels; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * out_plane;
        const double* src = x + ci * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          double* dst = row + static_cast<std::int64_t>(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            dst[ox] = (ix >= 0 && ix < w) ? src[static_cast<std::int64_t>(iy) * w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int channels, int h, int w, int k, int stride,
                int pad, int dilation, int out_h, int out_w, double* x) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int ci = 0; ci < channels; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * out_plane;
        double* dst = x + ci * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::int64_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            if (ix >= 0 && ix < w) dst[static_cast<std::int64_t>(iy) * w + ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Tape& t, Var x, Param& weight, Param* bias, const ConvSpec& spec) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = weight.value;
  const int n = xv.n(), in_c = xv.c(), h = xv.h(), w = xv.w();
  const int out_c = wv.n(), k = wv.h();
  const int groups = spec.groups;
  if (in_c % groups != 0 || out_c % groups != 0) {
    throw std::invalid_argument("conv2d: channels not divisible by groups");
  }
  const int cg = in_c / groups;
  const int og = out_c / groups;
  if (wv.c() != cg || wv.w() != k) throw std::invalid_argument("conv2d: weight shape mismatch");
  const int out_h = conv_out_dim(h, k, spec.stride, spec.pad, spec.dilation);
  const int out_w = conv_out_dim(w, k, spec.stride, spec.pad, spec.dilation);
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("conv2d: empty output");

  const std::int64_t col_rows = static_cast<std::int64_t>(cg) * k * k;
  const std::int64_t out_plane = static_cast<std::int64_t>(out_h) * out_w;

  Tensor out(n, out_c, out_h, out_w);
#pragma omp parallel for schedule(static)
  for (int ni = 0; ni < n; ++ni) {
    std::vector<double> cols(col_rows * out_plane);
    for (int g = 0; g < groups; ++g) {
      im2col(xv.sample(ni) + static_cast<std::int64_t>(g) * cg * h * w, cg, h, w, k,
             spec.stride, spec.pad, spec.dilation, out_h, out_w, cols.data());
      CMapRM wm(wv.data() + static_cast<std::int64_t>(g) * og * col_rows, og, col_rows);
      CMapRM cm(cols.data(), col_rows, out_plane);
      MapRM ym(out.sample(ni) + static_cast<std::int64_t>(g) * og * out_plane, og, out_plane);
      ym.noalias() = wm * cm;
    }
    if (bias) {
      for (int oc = 0; oc < out_c; ++oc) {
        double* dst = out.sample(ni) + static_cast<std::int64_t>(oc) * out_plane;
        const double b = bias->value.data()[oc];
        for (std::int64_t i = 0; i < out_plane; ++i) dst[i] += b;
      }
    }
  }

  Var out_var = t.leaf(std::move(out), true);
  ConvSpec sp = spec;
  t.record([&t, x, out_var, &weight, bias, sp, n, in_c, h, w, out_c, k, groups, cg, og,
            out_h, out_w, col_rows, out_plane] {
    if (!t.has_grad(out_var)) return;
    const Tensor& go = t.grad(out_var);
    const Tensor& xv2 = t.value(x);
    const bool need_dx = t.needs_grad(x);
    Tensor* gx = need_dx ? &t.grad(x) : nullptr;

    // per-sample weight-gradient partials, reduced in index order
    std::vector<Tensor> wg_part(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> bg_part(
        static_cast<std::size_t>(n), std::vector<double>(bias ? out_c : 0, 0.0));

#pragma omp parallel for schedule(static)
    for (int ni = 0; ni < n; ++ni) {
      wg_part[ni] = Tensor(out_c, cg, k, k);
      std::vector<double> cols(col_rows * out_plane);
      std::vector<double> dcols(need_dx ? col_rows * out_plane : 0);
      for (int g = 0; g < groups; ++g) {
        im2col(xv2.sample(ni) + static_cast<std::int64_t>(g) * cg * h * w, cg, h, w, k,
               sp.stride, sp.pad, sp.dilation, out_h, out_w, cols.data());
        CMapRM gom(go.sample(ni) + static_cast<std::int64_t>(g) * og * out_plane, og, out_plane);
        CMapRM cm(cols.data(), col_rows, out_plane);
        MapRM wgm(wg_part[ni].data() + static_cast<std::int64_t>(g) * og * col_rows, og, col_rows);
        wgm.noalias() = gom * cm.transpose();
        if (need_dx) {
          CMapRM wm(weight.value.data() + static_cast<std::int64_t>(g) * og * col_rows, og, col_rows);
          MapRM dcm(dcols.data(), col_rows, out_plane);
          dcm.noalias() = wm.transpose() * gom;
          col2im_add(dcols.data(), cg, h, w, k, sp.stride, sp.pad, sp.dilation, out_h,
                     out_w, gx->sample(ni) + static_cast<std::int64_t>(g) * cg * h * w);
        }
      }
      if (bias) {
        for (int oc = 0; oc < out_c; ++oc) {
          const double* src = go.sample(ni) + static_cast<std::int64_t>(oc) * out_plane;
          double s = 0.0;
          for (std::int64_t i = 0; i < out_plane; ++i) s += src[i];
          bg_part[ni][oc] = s;
        }
      }
    }
    for (int ni = 0; ni < n; ++ni) {
      weight.grad.add_(wg_part[ni]);
      if (bias) {
        for (int oc = 0; oc < out_c; ++oc) bias->grad.data()[oc] += bg_part[ni][oc];
      }
    }
  });
  return out_var;
}

Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor* bias,
                    const ConvSpec& spec) {
  const int n = x.n(), in_c = x.c(), h = x.h(), wd = x.w();
  const int out_c = w.n(), k = w.h();
  const int cg = in_c / spec.groups;
  const int og = out_c / spec.groups;
  const int out_h = conv_out_dim(h, k, spec.stride, spec.pad, spec.dilation);
  const int out_w = conv_out_dim(wd, k, spec.stride, spec.pad, spec.dilation);
  Tensor out(n, out_c, out_h, out_w);
  for (int ni = 0; ni < n; ++ni)
    for (int oc = 0; oc < out_c; ++oc) {
      const int g = oc / og;
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          double acc = bias ? bias->data()[oc] : 0.0;
          for (int ci = 0; ci < cg; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * spec.stride - spec.pad + ky * spec.dilation;
                const int ix = ox * spec.stride - spec.pad + kx * spec.dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(ni, g * cg + ci, iy, ix) * w.at(oc, ci, ky, kx);
              }
          out.at(ni, oc, oy, ox) = acc;
        }
    }
  return out;
}

Var batch_norm(Tape& t, Var x, Param& gamma, Param& beta, Tensor& running_mean,
               Tensor& running_var, bool training, double momentum, double eps) {
  const Tensor& xv = t.value(x);
  const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t m = static_cast<std::int64_t>(n) * plane;

  std::vector<double> mean(c, 0.0), invstd(c, 0.0);
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* src = xv.sample(ni) + ci * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += src[i];
      }
      mean[ci] = s / static_cast<double>(m);
      double v = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* src = xv.sample(ni) + ci * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = src[i] - mean[ci];
          v += d * d;
        }
      }
      v /= static_cast<double>(m);
      invstd[ci] = 1.0 / std::sqrt(v + eps);
      const double unbiased = m > 1 ? v * static_cast<double>(m) / static_cast<double>(m - 1) : v;
      running_mean.data()[ci] = (1.0 - momentum) * running_mean.data()[ci] + momentum * mean[ci];
      running_var.data()[ci] = (1.0 - momentum) * running_var.data()[ci] + momentum * unbiased;
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = running_mean.data()[ci];
      invstd[ci] = 1.0 / std::sqrt(running_var.data()[ci] + eps);
    }
  }

  Tensor out(n, c, h, w);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const double* src = xv.sample(ni) + ci * plane;
      double* dst = out.sample(ni) + ci * plane;
      const double g = gamma.value.data()[ci], b = beta.value.data()[ci];
      for (std::int64_t i = 0; i < plane; ++i) {
        dst[i] = g * (src[i] - mean[ci]) * invstd[ci] + b;
      }
    }
  }

  Var out_var = t.leaf(std::move(out), true);
  t.record([&t, x, out_var, &gamma, &beta, mean, invstd, training, n, c, plane, m] {
    if (!t.has_grad(out_var)) return;
    const Tensor& go = t.grad(out_var);
    const Tensor& xv2 = t.value(x);
    const bool need_dx = t.needs_grad(x);
    Tensor* gx = need_dx ? &t.grad(x) : nullptr;
    for (int ci = 0; ci < c; ++ci) {
      double sum_go = 0.0, sum_go_xhat = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* gsrc = go.sample(ni) + ci * plane;
        const double* xsrc = xv2.sample(ni) + ci * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          sum_go += gsrc[i];
          sum_go_xhat += gsrc[i] * (xsrc[i] - mean[ci]) * invstd[ci];
        }
      }
      gamma.grad.data()[ci] += sum_go_xhat;
      beta.grad.data()[ci] += sum_go;
      if (!need_dx) continue;
      const double g = gamma.value.data()[ci];
      if (training) {
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int ni = 0; ni < n; ++ni) {
          const double* gsrc = go.sample(ni) + ci * plane;
          const double* xsrc = xv2.sample(ni) + ci * plane;
          double* gdst = gx->sample(ni) + ci * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double xhat = (xsrc[i] - mean[ci]) * invstd[ci];
            gdst[i] += g * invstd[ci] *
                       (gsrc[i] - inv_m * sum_go - inv_m * xhat * sum_go_xhat);
          }
        }
      } else {
        for (int ni = 0; ni < n; ++ni) {
          const double* gsrc = go.sample(ni) + ci * plane;
          double* gdst = gx->sample(ni) + ci * plane;
          for (std::int64_t i = 0; i < plane; ++i) gdst[i] += g * invstd[ci] * gsrc[i];
        }
      }
    }
  });
  return out_var;
}

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out = xv.clone();
  double* d = out.data();
  const std::int64_t sz = out.size();
  for (std::int64_t i = 0; i < sz; ++i) d[i] = d[i] > 0.0 ? d[i] : 0.0;
  Var out_var = t.leaf(std::move(out), t.needs_grad(x));
  if (t.needs_grad(x)) {
    t.record([&t, x, out_var] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      const Tensor& xv2 = t.value(x);
      Tensor& gx = t.grad(x);
      const std::int64_t sz2 = gx.size();
      for (std::int64_t i = 0; i < sz2; ++i) {
        if (xv2.data()[i] > 0.0) gx.data()[i] += go.data()[i];
      }
    });
  }
  return out_var;
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out = xv.clone();
  double* d = out.data();
  const std::int64_t sz = out.size();
  for (std::int64_t i = 0; i < sz; ++i) d[i] = 1.0 / (1.0 + std::exp(-d[i]));
  Var out_var = t.leaf(std::move(out), t.needs_grad(x));
  if (t.needs_grad(x)) {
    t.record([&t, x, out_var] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      const Tensor& yv = t.value(out_var);
      Tensor& gx = t.grad(x);
      const std::int64_t sz2 = gx.size();
      for (std::int64_t i = 0; i < sz2; ++i) {
        const double y = yv.data()[i];
        gx.data()[i] += go.data()[i] * y * (1.0 - y);
      }
    });
  }
  return out_var;
}

Var max_pool_3x3_s2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
  const int out_h = (h - 1) / 2 + 1, out_w = (w - 1) / 2 + 1;
  Tensor out(n, c, out_h, out_w);
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(n) * c * out_h * out_w);
  std::int64_t oi = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const double* src = xv.sample(ni) + static_cast<std::int64_t>(ci) * h * w;
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          std::int32_t best_idx = 0;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (ix < 0 || ix >= w) continue;
              const double v = src[static_cast<std::int64_t>(iy) * w + ix];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int32_t>(iy * w + ix);
              }
            }
          }
          out.data()[oi] = best;
          (*argmax)[oi] = best_idx;
        }
    }
  Var out_var = t.leaf(std::move(out), t.needs_grad(x));
  if (t.needs_grad(x)) {
    t.record([&t, x, out_var, argmax, n, c, h, w, out_h, out_w] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      Tensor& gx = t.grad(x);
      std::int64_t oi = 0;
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          double* gdst = gx.sample(ni) + static_cast<std::int64_t>(ci) * h * w;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(out_h) * out_w; ++i, ++oi) {
            gdst[(*argmax)[oi]] += go.data()[oi];
          }
        }
    });
  }
  return out_var;
}

namespace {
struct LerpCoef {
  int i0, i1;
  double w0, w1;
};
std::vector<LerpCoef> bilinear_coefs(int in, int out) {
  std::vector<LerpCoef> cs(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    double f = src - i0;
    int i1 = i0 + 1;
    if (i0 >= in - 1) {
      i0 = in - 1;
      i1 = in - 1;
      f = 0.0;
    }
    cs[o] = {i0, i1, 1.0 - f, f};
  }
  return cs;
}
}  // namespace

Var upsample_bilinear(Tape& t, Var x, int out_h, int out_w) {
  const Tensor& xv = t.value(x);
  const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
  const auto ys = bilinear_coefs(h, out_h);
  const auto xs = bilinear_coefs(w, out_w);
  Tensor out(n, c, out_h, out_w);
#pragma omp parallel for schedule(static)
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const double* src = xv.sample(ni) + static_cast<std::int64_t>(ci) * h * w;
      double* dst = out.sample(ni) + static_cast<std::int64_t>(ci) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& cy = ys[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& cx = xs[ox];
          dst[static_cast<std::int64_t>(oy) * out_w + ox] =
              cy.w0 * (cx.w0 * src[static_cast<std::int64_t>(cy.i0) * w + cx.i0] +
                       cx.w1 * src[static_cast<std::int64_t>(cy.i0) * w + cx.i1]) +
              cy.w1 * (cx.w0 * src[static_cast<std::int64_t>(cy.i1) * w + cx.i0] +
                       cx.w1 * src[static_cast<std::int64_t>(cy.i1) * w + cx.i1]);
        }
      }
    }
  }
  Var out_var = t.leaf(std::move(out), t.needs_grad(x));
  if (t.needs_grad(x)) {
    t.record([&t, x, out_var, ys, xs, n, c, h, w, out_h, out_w] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      Tensor& gx = t.grad(x);
#pragma omp parallel for schedule(static)
      for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
          const double* src = go.sample(ni) + static_cast<std::int64_t>(ci) * out_h * out_w;
          double* dst = gx.sample(ni) + static_cast<std::int64_t>(ci) * h * w;
          for (int oy = 0; oy < out_h; ++oy) {
            const auto& cy = ys[oy];
            for (int ox = 0; ox < out_w; ++ox) {
              const auto& cx = xs[ox];
              const double g = src[static_cast<std::int64_t>(oy) * out_w + ox];
              dst[static_cast<std::int64_t>(cy.i0) * w + cx.i0] += cy.w0 * cx.w0 * g;
              dst[static_cast<std::int64_t>(cy.i0) * w + cx.i1] += cy.w0 * cx.w1 * g;
              dst[static_cast<std::int64_t>(cy.i1) * w + cx.i0] += cy.w1 * cx.w0 * g;
              dst[static_cast<std::int64_t>(cy.i1) * w + cx.i1] += cy.w1 * cx.w1 * g;
            }
          }
        }
      }
    });
  }
  return out_var;
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out(n, c, 1, 1);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const double* src = xv.sample(ni) + ci * plane;
      double s = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) s += src[i];
      out.at(ni, ci, 0, 0) = s / static_cast<double>(plane);
    }
  Var out_var = t.leaf(std::move(out), t.needs_grad(x));
  if (t.needs_grad(x)) {
    t.record([&t, x, out_var, n, c, plane] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      Tensor& gx = t.grad(x);
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          const double g = go.at(ni, ci, 0, 0) / static_cast<double>(plane);
          double* dst = gx.sample(ni) + ci * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
        }
    });
  }
  return out_var;
}

Var scale_channels(Tape& t, Var x, Var w) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (wv.n() != xv.n() || wv.c() != xv.c() || wv.h() != 1 || wv.w() != 1) {
    throw std::invalid_argument("scale_channels: weight must be (n, c, 1, 1)");
  }
  const int n = xv.n(), c = xv.c();
  const std::int64_t plane = static_cast<std::int64_t>(xv.h()) * xv.w();
  Tensor out(n, c, xv.h(), xv.w());
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const double s = wv.at(ni, ci, 0, 0);
      const double* src = xv.sample(ni) + ci * plane;
      double* dst = out.sample(ni) + ci * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = s * src[i];
    }
  const bool needs = t.needs_grad(x) || t.needs_grad(w);
  Var out_var = t.leaf(std::move(out), needs);
  if (needs) {
    t.record([&t, x, w, out_var, n, c, plane] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      const Tensor& xv2 = t.value(x);
      const Tensor& wv2 = t.value(w);
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          const double* gsrc = go.sample(ni) + ci * plane;
          const double* xsrc = xv2.sample(ni) + ci * plane;
          if (t.needs_grad(x)) {
            const double s = wv2.at(ni, ci, 0, 0);
            double* dst = t.grad(x).sample(ni) + ci * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] += s * gsrc[i];
          }
          if (t.needs_grad(w)) {
            double s = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) s += gsrc[i] * xsrc[i];
            t.grad(w).at(ni, ci, 0, 0) += s;
          }
        }
    });
  }
  return out_var;
}

Var concat_channels(Tape& t, std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor& first = t.value(xs[0]);
  const int n = first.n(), h = first.h(), w = first.w();
  int total_c = 0;
  bool needs = false;
  for (Var v : xs) {
    const Tensor& xv = t.value(v);
    if (xv.n() != n || xv.h() != h || xv.w() != w) {
      throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    }
    total_c += xv.c();
    needs = needs || t.needs_grad(v);
  }
  Tensor out(n, total_c, h, w);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int ni = 0; ni < n; ++ni) {
    std::int64_t off = 0;
    for (Var v : xs) {
      const Tensor& xv = t.value(v);
      const std::int64_t len = static_cast<std::int64_t>(xv.c()) * plane;
      std::copy(xv.sample(ni), xv.sample(ni) + len, out.sample(ni) + off);
      off += len;
    }
  }
  Var out_var = t.leaf(std::move(out), needs);
  if (needs) {
    std::vector<Var> inputs(xs.begin(), xs.end());
    t.record([&t, inputs, out_var, n, plane] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      for (int ni = 0; ni < n; ++ni) {
        std::int64_t off = 0;
        for (Var v : inputs) {
          const Tensor& xv = t.value(v);
          const std::int64_t len = static_cast<std::int64_t>(xv.c()) * plane;
          if (t.needs_grad(v)) {
            double* dst = t.grad(v).sample(ni);
            const double* src = go.sample(ni) + off;
            for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
          }
          off += len;
        }
      }
    });
  }
  return out_var;
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = av.clone();
  out.add_(bv);
  const bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var out_var = t.leaf(std::move(out), needs);
  if (needs) {
    t.record([&t, a, b, out_var] {
      if (!t.has_grad(out_var)) return;
      const Tensor& go = t.grad(out_var);
      if (t.needs_grad(a)) t.grad(a).add_(go);
      if (t.needs_grad(b)) t.grad(b).add_(go);
    });
  }
  return out_var;
}

Var affine_combine(Tape& t, Var a, double ca, Var b, double cb) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.size() != 1 || bv.size() != 1) {
    throw std::invalid_argument("affine_combine: scalar inputs expected");
  }
  Tensor out = Tensor::scalar(ca * av.data()[0] + cb * bv.data()[0]);
  const bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var out_var = t.leaf(std::move(out), needs);
  if (needs) {
    t.record([&t, a, b, out_var, ca, cb] {
      if (!t.has_grad(out_var)) return;
      const double g = t.grad(out_var).data()[0];
      if (t.needs_grad(a)) t.grad(a).data()[0] += ca * g;
      if (t.needs_grad(b)) t.grad(b).data()[0] += cb * g;
    });
  }
  return out_var;
}

}  // namespace etnet::nn
