#include "corrmlp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "corrmlp/kernels.hpp"

namespace corrmlp::ops {

namespace {

using detail::finish;

struct AxisSplit {
  int64_t outer = 1, n = 1, inner = 1;
};

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("axis out of range");
  return axis;
}

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<size_t>(i)];
    else if (i == axis) s.n = shape[static_cast<size_t>(i)];
    else s.inner *= shape[static_cast<size_t>(i)];
  }
  return s;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

void require_rank(const Var& x, int rank, const char* op) {
  if (x.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(x.shape()));
  }
}

}  // namespace

// --- convolution -----------------------------------------------------------

Var conv3d(const Var& x, const Var& weight, const Var& bias, int64_t padding) {
  require_rank(x, 5, "conv3d");
  require_rank(weight, 5, "conv3d weight");
  const Shape& ws = weight.shape();
  const int64_t k = ws[2];
  if (ws[3] != k || ws[4] != k || k % 2 == 0) {
    throw std::invalid_argument("conv3d: kernel must be cubic with odd size, got " + shape_str(ws));
  }
  if (padding != (k - 1) / 2) {
    throw std::invalid_argument("conv3d: padding must be (k-1)/2 = " + std::to_string((k - 1) / 2));
  }
  if (x.shape()[1] != ws[1]) {
    throw std::invalid_argument("conv3d: input has " + std::to_string(x.shape()[1]) +
                                " channels but weight expects " + std::to_string(ws[1]));
  }
  if (bias.value().numel() != ws[0]) {
    throw std::invalid_argument("conv3d: bias length " + std::to_string(bias.value().numel()) +
                                " != output channels " + std::to_string(ws[0]));
  }
  kernels::ConvGeom g{x.shape()[0], ws[1], ws[0], x.shape()[2], x.shape()[3], x.shape()[4], k};
  Tensor y(Shape{g.batch, g.cout, g.d, g.h, g.w});
  kernels::conv3d_forward(g, x.value().ptr(), weight.value().ptr(), bias.value().ptr(), y.ptr());
  return finish(std::move(y), detail::any_requires_grad({&x, &weight, &bias}),
                [x, weight, bias, g](const Tensor& gy) mutable {
                  kernels::conv3d_backward(g, x.value().ptr(), weight.value().ptr(), gy.ptr(),
                                           x.requires_grad() ? x.grad_buffer().ptr() : nullptr,
                                           weight.requires_grad() ? weight.grad_buffer().ptr() : nullptr,
                                           bias.requires_grad() ? bias.grad_buffer().ptr() : nullptr);
                });
}

// --- pooling / resampling --------------------------------------------------

Var maxpool3d(const Var& x) {
  require_rank(x, 5, "maxpool3d");
  const Shape& s = x.shape();
  if (s[2] % 2 || s[3] % 2 || s[4] % 2) {
    throw std::invalid_argument("maxpool3d: spatial extents must be even, got " + shape_str(s));
  }
  const int64_t D = s[2] / 2, H = s[3] / 2, W = s[4] / 2;
  Tensor y(Shape{s[0], s[1], D, H, W});
  std::vector<int64_t> argmax(static_cast<size_t>(y.numel()));
  const Tensor& xv = x.value();
  int64_t oi = 0;
  for (int64_t bc = 0; bc < s[0] * s[1]; ++bc)
    for (int64_t z = 0; z < D; ++z)
      for (int64_t yy = 0; yy < H; ++yy)
        for (int64_t xx = 0; xx < W; ++xx, ++oi) {
          int64_t best = -1;
          double bv = 0.0;
          for (int64_t dz = 0; dz < 2; ++dz)
            for (int64_t dy = 0; dy < 2; ++dy)
              for (int64_t dx = 0; dx < 2; ++dx) {
                const int64_t ii = ((bc * s[2] + 2 * z + dz) * s[3] + 2 * yy + dy) * s[4] + 2 * xx + dx;
                if (best < 0 || xv[ii] > bv) {
                  best = ii;
                  bv = xv[ii];
                }
              }
          y[oi] = bv;
          argmax[static_cast<size_t>(oi)] = best;
        }
  return finish(std::move(y), x.requires_grad(), [x, argmax = std::move(argmax)](const Tensor& gy) mutable {
    Tensor& gx = x.grad_buffer();
    for (size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gy[static_cast<int64_t>(i)];
  });
}

namespace {

struct UpTap {
  int64_t i0, i1;
  double f;
};

std::vector<UpTap> upsample_taps(int64_t n) {
  std::vector<UpTap> taps(static_cast<size_t>(2 * n));
  for (int64_t t = 0; t < 2 * n; ++t) {
    double src = (static_cast<double>(t) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const int64_t i0 = static_cast<int64_t>(std::floor(src));
    taps[static_cast<size_t>(t)] = {i0, std::min(i0 + 1, n - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

Tensor upsample_axis(const Tensor& x, int axis) {
  const AxisSplit a = split_axis(x.shape(), axis);
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] *= 2;
  Tensor y(os);
  const auto taps = upsample_taps(a.n);
  for (int64_t o = 0; o < a.outer; ++o)
    for (int64_t t = 0; t < 2 * a.n; ++t) {
      const UpTap& tp = taps[static_cast<size_t>(t)];
      const double* r0 = x.ptr() + (o * a.n + tp.i0) * a.inner;
      const double* r1 = x.ptr() + (o * a.n + tp.i1) * a.inner;
      double* dst = y.ptr() + (o * 2 * a.n + t) * a.inner;
      for (int64_t i = 0; i < a.inner; ++i) dst[i] = (1.0 - tp.f) * r0[i] + tp.f * r1[i];
    }
  return y;
}

// Adjoint of upsample_axis; `in_shape` is the pre-upsampling shape.
Tensor upsample_axis_adjoint(const Tensor& gy, const Shape& in_shape, int axis) {
  const AxisSplit a = split_axis(in_shape, axis);
  Tensor gx(in_shape, 0.0);
  const auto taps = upsample_taps(a.n);
  for (int64_t o = 0; o < a.outer; ++o)
    for (int64_t t = 0; t < 2 * a.n; ++t) {
      const UpTap& tp = taps[static_cast<size_t>(t)];
      double* r0 = gx.ptr() + (o * a.n + tp.i0) * a.inner;
      double* r1 = gx.ptr() + (o * a.n + tp.i1) * a.inner;
      const double* src = gy.ptr() + (o * 2 * a.n + t) * a.inner;
      for (int64_t i = 0; i < a.inner; ++i) {
        r0[i] += (1.0 - tp.f) * src[i];
        r1[i] += tp.f * src[i];
      }
    }
  return gx;
}

}  // namespace

Var upsample_trilinear2x(const Var& x) {
  require_rank(x, 5, "upsample_trilinear2x");
  Tensor y = upsample_axis(upsample_axis(upsample_axis(x.value(), 2), 3), 4);
  return finish(std::move(y), x.requires_grad(), [x](const Tensor& gy) mutable {
    Shape s0 = x.shape();
    Shape s1 = s0;
    s1[2] *= 2;
    Shape s2 = s1;
    s2[3] *= 2;
    Tensor g2 = upsample_axis_adjoint(gy, s2, 4);
    Tensor g1 = upsample_axis_adjoint(g2, s1, 3);
    x.node()->accumulate(upsample_axis_adjoint(g1, s0, 2));
  });
}

// --- normalization ---------------------------------------------------------

namespace {

// Shared normalization core. Groups are strided runs of `n` elements: element
// j of group (o, i) lives at (o * n + j) * inner + i. Affine index is either
// the group's channel (per_group_affine) or j.
struct NormPlan {
  int64_t groups_outer, n, inner;
  // affine index for element j of group (o, i)
  bool affine_by_position;  // true: gamma[j]; false: gamma[channel_of(o)]
  int64_t channels;         // for instance norm: o % channels
};

void norm_forward(const Tensor& x, const double* gamma, const double* beta, double eps, const NormPlan& p,
                  Tensor& y, Tensor& xhat, std::vector<double>& rstd) {
  rstd.assign(static_cast<size_t>(p.groups_outer * p.inner), 0.0);
  for (int64_t o = 0; o < p.groups_outer; ++o)
    for (int64_t i = 0; i < p.inner; ++i) {
      double mean = 0.0;
      for (int64_t j = 0; j < p.n; ++j) mean += x[(o * p.n + j) * p.inner + i];
      mean /= static_cast<double>(p.n);
      double var = 0.0;
      for (int64_t j = 0; j < p.n; ++j) {
        const double d = x[(o * p.n + j) * p.inner + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(p.n);
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[static_cast<size_t>(o * p.inner + i)] = r;
      for (int64_t j = 0; j < p.n; ++j) {
        const int64_t idx = (o * p.n + j) * p.inner + i;
        const int64_t a = p.affine_by_position ? j : o % p.channels;
        xhat[idx] = (x[idx] - mean) * r;
        y[idx] = gamma[a] * xhat[idx] + beta[a];
      }
    }
}

void norm_backward(const Tensor& gy, const Tensor& xhat, const std::vector<double>& rstd, const double* gamma,
                   const NormPlan& p, double* gx, double* ggamma, double* gbeta) {
  for (int64_t o = 0; o < p.groups_outer; ++o)
    for (int64_t i = 0; i < p.inner; ++i) {
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (int64_t j = 0; j < p.n; ++j) {
        const int64_t idx = (o * p.n + j) * p.inner + i;
        const int64_t a = p.affine_by_position ? j : o % p.channels;
        const double dxh = gy[idx] * gamma[a];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[idx];
        if (ggamma) ggamma[a] += gy[idx] * xhat[idx];
        if (gbeta) gbeta[a] += gy[idx];
      }
      if (!gx) continue;
      mean_dxhat /= static_cast<double>(p.n);
      mean_dxhat_xhat /= static_cast<double>(p.n);
      const double r = rstd[static_cast<size_t>(o * p.inner + i)];
      for (int64_t j = 0; j < p.n; ++j) {
        const int64_t idx = (o * p.n + j) * p.inner + i;
        const int64_t a = p.affine_by_position ? j : o % p.channels;
        gx[idx] += r * (gy[idx] * gamma[a] - mean_dxhat - xhat[idx] * mean_dxhat_xhat);
      }
    }
}

Var normalize(const Var& x, const Var& gamma, const Var& beta, double eps, const NormPlan& plan) {
  if (eps <= 0.0) throw std::invalid_argument("normalization eps must be > 0");
  Tensor y(x.shape()), xhat(x.shape());
  std::vector<double> rstd;
  norm_forward(x.value(), gamma.value().ptr(), beta.value().ptr(), eps, plan, y, xhat, rstd);
  return finish(std::move(y), detail::any_requires_grad({&x, &gamma, &beta}),
                [x, gamma, beta, plan, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor& gy) mutable {
                  norm_backward(gy, xhat, rstd, gamma.value().ptr(), plan,
                                x.requires_grad() ? x.grad_buffer().ptr() : nullptr,
                                gamma.requires_grad() ? gamma.grad_buffer().ptr() : nullptr,
                                beta.requires_grad() ? beta.grad_buffer().ptr() : nullptr);
                });
}

}  // namespace

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 5, "instance_norm");
  const Shape& s = x.shape();
  if (gamma.value().numel() != s[1] || beta.value().numel() != s[1]) {
    throw std::invalid_argument("instance_norm: affine length must equal channel count " + std::to_string(s[1]));
  }
  NormPlan plan{s[0] * s[1], s[2] * s[3] * s[4], 1, false, s[1]};
  return normalize(x, gamma, beta, eps, plan);
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps, int axis) {
  axis = normalize_axis(axis, x.value().rank());
  const AxisSplit a = split_axis(x.shape(), axis);
  if (gamma.value().numel() != a.n || beta.value().numel() != a.n) {
    throw std::invalid_argument("layer_norm: affine length must equal normalized extent " + std::to_string(a.n));
  }
  NormPlan plan{a.outer, a.n, a.inner, true, 1};
  return normalize(x, gamma, beta, eps, plan);
}

// --- elementwise -----------------------------------------------------------

namespace {

// y = f(x); dy/dx computed from (x, y).
template <class F, class DF>
Var elementwise(const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) y[i] = f(xv[i]);
  Tensor yv = y;
  return finish(std::move(y), x.requires_grad(), [x, df, yv = std::move(yv)](const Tensor& gy) mutable {
    Tensor& gx = x.grad_buffer();
    const Tensor& xv = x.value();
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var leaky_relu(const Var& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
  return elementwise(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Var gelu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  Tensor th(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    // tanh(u) = 1 - 2 / (1 + e^{2u}); cheaper than std::tanh
    const double t = 1.0 - 2.0 / (1.0 + std::exp(2.0 * kGeluC * (v + kGeluA * v * v * v)));
    th[i] = t;
    y[i] = 0.5 * v * (1.0 + t);
  }
  return finish(std::move(y), x.requires_grad(), [x, th = std::move(th)](const Tensor& gy) mutable {
    Tensor& gx = x.grad_buffer();
    const Tensor& xv = x.value();
    for (int64_t i = 0; i < gx.numel(); ++i) {
      const double v = xv[i], t = th[i];
      gx[i] += gy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v));
    }
  });
}

Var sigmoid(const Var& x) {
  return elementwise(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var square(const Var& x) {
  return elementwise(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var div_scalar(const Var& x, double s) {
  if (s == 0.0) throw std::invalid_argument("div_scalar: division by zero");
  Tensor y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] / s;
  return finish(std::move(y), x.requires_grad(), [x, s](const Tensor& gy) mutable {
    Tensor& gx = x.grad_buffer();
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] / s;
  });
}

Var scale(const Var& x, double s) {
  return elementwise(
      x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return elementwise(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var softmax(const Var& x, int axis) {
  axis = normalize_axis(axis, x.value().rank());
  const AxisSplit a = split_axis(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (int64_t o = 0; o < a.outer; ++o)
    for (int64_t i = 0; i < a.inner; ++i) {
      double mx = xv[o * a.n * a.inner + i];
      for (int64_t j = 1; j < a.n; ++j) mx = std::max(mx, xv[(o * a.n + j) * a.inner + i]);
      double total = 0.0;
      for (int64_t j = 0; j < a.n; ++j) {
        const int64_t idx = (o * a.n + j) * a.inner + i;
        y[idx] = std::exp(xv[idx] - mx);
        total += y[idx];
      }
      for (int64_t j = 0; j < a.n; ++j) y[(o * a.n + j) * a.inner + i] /= total;
    }
  Tensor yv = y;
  return finish(std::move(y), x.requires_grad(), [x, a, yv = std::move(yv)](const Tensor& gy) mutable {
    Tensor& gx = x.grad_buffer();
    for (int64_t o = 0; o < a.outer; ++o)
      for (int64_t i = 0; i < a.inner; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < a.n; ++j) {
          const int64_t idx = (o * a.n + j) * a.inner + i;
          dot += gy[idx] * yv[idx];
        }
        for (int64_t j = 0; j < a.n; ++j) {
          const int64_t idx = (o * a.n + j) * a.inner + i;
          gx[idx] += yv[idx] * (gy[idx] - dot);
        }
      }
  });
}

// --- dense -----------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(weight, 2, "linear weight");
  const int64_t cout = weight.shape()[0], cin = weight.shape()[1];
  if (x.shape().back() != cin) {
    throw std::invalid_argument("linear: input last extent " + std::to_string(x.shape().back()) +
                                " != weight in-features " + std::to_string(cin));
  }
  if (bias.value().numel() != cout) throw std::invalid_argument("linear: bias length mismatch");
  const int64_t rows = x.value().numel() / cin;
  Shape os = x.shape();
  os.back() = cout;
  Tensor y(os);
  const double* bp = bias.value().ptr();
  for (int64_t m = 0; m < rows; ++m) std::copy(bp, bp + cout, y.ptr() + m * cout);
  std::vector<double> wt(static_cast<size_t>(cin * cout));
  for (int64_t o = 0; o < cout; ++o)
    for (int64_t i = 0; i < cin; ++i) wt[static_cast<size_t>(i * cout + o)] = weight.value()[o * cin + i];
  kernels::gemm_nn(rows, cout, cin, x.value().ptr(), cin, wt.data(), cout, y.ptr(), cout);
  return finish(std::move(y), detail::any_requires_grad({&x, &weight, &bias}),
                [x, weight, bias, rows, cin, cout](const Tensor& gy) mutable {
                  if (bias.requires_grad()) {
                    double* gb = bias.grad_buffer().ptr();
                    for (int64_t m = 0; m < rows; ++m)
                      for (int64_t o = 0; o < cout; ++o) gb[o] += gy[m * cout + o];
                  }
                  if (x.requires_grad()) {
                    kernels::gemm_nn(rows, cin, cout, gy.ptr(), cout, weight.value().ptr(), cin,
                                     x.grad_buffer().ptr(), cin);
                  }
                  if (weight.requires_grad()) {
                    // (cout, rows) x (cin, rows)^T
                    std::vector<double> gyt(static_cast<size_t>(cout * rows)), xt(static_cast<size_t>(cin * rows));
                    const double* xp = x.value().ptr();
                    for (int64_t m = 0; m < rows; ++m) {
                      for (int64_t o = 0; o < cout; ++o) gyt[static_cast<size_t>(o * rows + m)] = gy[m * cout + o];
                      for (int64_t i = 0; i < cin; ++i) xt[static_cast<size_t>(i * rows + m)] = xp[m * cin + i];
                    }
                    kernels::gemm_nt(cout, cin, rows, gyt.data(), rows, xt.data(), rows,
                                     weight.grad_buffer().ptr(), cin);
                  }
                });
}

Var global_avg_pool(const Var& x) {
  if (x.value().rank() < 3) throw std::invalid_argument("global_avg_pool: need (B,C,spatial...)");
  const int64_t B = x.shape()[0], C = x.shape()[1];
  const int64_t S = x.value().numel() / (B * C);
  Tensor y(Shape{B, C});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    const double* p = x.value().ptr() + bc * S;
    for (int64_t i = 0; i < S; ++i) acc += p[i];
    y[bc] = acc / static_cast<double>(S);
  }
  return finish(std::move(y), x.requires_grad(), [x, B, C, S](const Tensor& gy) mutable {
    double* gx = x.grad_buffer().ptr();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const double g = gy[bc] / static_cast<double>(S);
      for (int64_t i = 0; i < S; ++i) gx[bc * S + i] += g;
    }
  });
}

// --- structural ------------------------------------------------------------

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const int rank = xs[0].value().rank();
  axis = normalize_axis(axis, rank);
  Shape os = xs[0].shape();
  os[static_cast<size_t>(axis)] = 0;
  bool needs_grad = false;
  for (const Var& v : xs) {
    if (v.value().rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && v.shape()[static_cast<size_t>(i)] != xs[0].shape()[static_cast<size_t>(i)]) {
        throw std::invalid_argument("concat: operands disagree off the concat axis: " + shape_str(v.shape()) +
                                    " vs " + shape_str(xs[0].shape()));
      }
    }
    os[static_cast<size_t>(axis)] += v.shape()[static_cast<size_t>(axis)];
    needs_grad = needs_grad || v.requires_grad();
  }
  const AxisSplit total = split_axis(os, axis);
  Tensor y(os);
  int64_t offset = 0;
  for (const Var& v : xs) {
    const AxisSplit a = split_axis(v.shape(), axis);
    for (int64_t o = 0; o < a.outer; ++o) {
      std::copy_n(v.value().ptr() + o * a.n * a.inner, a.n * a.inner,
                  y.ptr() + (o * total.n + offset) * total.inner);
    }
    offset += a.n;
  }
  return finish(std::move(y), needs_grad, [xs, axis, total](const Tensor& gy) mutable {
    int64_t offset = 0;
    for (const Var& v : xs) {
      const AxisSplit a = split_axis(v.shape(), axis);
      if (v.requires_grad()) {
        double* gx = v.grad_buffer().ptr();
        for (int64_t o = 0; o < a.outer; ++o) {
          const double* src = gy.ptr() + (o * total.n + offset) * total.inner;
          double* dst = gx + o * a.n * a.inner;
          for (int64_t i = 0; i < a.n * a.inner; ++i) dst[i] += src[i];
        }
      }
      offset += a.n;
    }
  });
}

Var slice(const Var& x, int axis, int64_t start, int64_t length) {
  axis = normalize_axis(axis, x.value().rank());
  const AxisSplit a = split_axis(x.shape(), axis);
  if (start < 0 || length < 1 || start + length > a.n) throw std::invalid_argument("slice: range out of bounds");
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = length;
  Tensor y(os);
  for (int64_t o = 0; o < a.outer; ++o) {
    std::copy_n(x.value().ptr() + (o * a.n + start) * a.inner, length * a.inner,
                y.ptr() + o * length * a.inner);
  }
  return finish(std::move(y), x.requires_grad(), [x, a, start, length](const Tensor& gy) mutable {
    double* gx = x.grad_buffer().ptr();
    for (int64_t o = 0; o < a.outer; ++o) {
      const double* src = gy.ptr() + o * length * a.inner;
      double* dst = gx + (o * a.n + start) * a.inner;
      for (int64_t i = 0; i < length * a.inner; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return finish(std::move(y), x.requires_grad(), [x](const Tensor& gy) mutable {
    double* gx = x.grad_buffer().ptr();
    for (int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
  });
}

// --- binary ----------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
  return finish(std::move(y), detail::any_requires_grad({&a, &b}), [a, b](const Tensor& gy) mutable {
    if (a.requires_grad()) a.node()->accumulate(gy);
    if (b.requires_grad()) b.node()->accumulate(gy);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] - b.value()[i];
  return finish(std::move(y), detail::any_requires_grad({&a, &b}), [a, b](const Tensor& gy) mutable {
    if (a.requires_grad()) a.node()->accumulate(gy);
    if (b.requires_grad()) {
      Tensor& gb = b.grad_buffer();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= gy[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  return finish(std::move(y), detail::any_requires_grad({&a, &b}), [a, b](const Tensor& gy) mutable {
    if (a.requires_grad()) {
      Tensor& ga = a.grad_buffer();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gy[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = b.grad_buffer();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += gy[i] * a.value()[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] / b.value()[i];
  return finish(std::move(y), detail::any_requires_grad({&a, &b}), [a, b](const Tensor& gy) mutable {
    if (a.requires_grad()) {
      Tensor& ga = a.grad_buffer();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gy[i] / b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = b.grad_buffer();
      for (int64_t i = 0; i < gb.numel(); ++i) {
        const double bv = b.value()[i];
        gb[i] -= gy[i] * a.value()[i] / (bv * bv);
      }
    }
  });
}

Var mul_channels(const Var& x, const Var& g) {
  if (x.value().rank() < 2) throw std::invalid_argument("mul_channels: need (B,C,...)");
  const int64_t B = x.shape()[0], C = x.shape()[1];
  if (g.shape() != Shape{B, C}) {
    throw std::invalid_argument("mul_channels: gate shape " + shape_str(g.shape()) + " must be (B,C)");
  }
  const int64_t S = x.value().numel() / (B * C);
  Tensor y(x.shape());
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double gv = g.value()[bc];
    for (int64_t i = 0; i < S; ++i) y[bc * S + i] = x.value()[bc * S + i] * gv;
  }
  return finish(std::move(y), detail::any_requires_grad({&x, &g}), [x, g, B, C, S](const Tensor& gy) mutable {
    double* gx = x.requires_grad() ? x.grad_buffer().ptr() : nullptr;
    double* gg = g.requires_grad() ? g.grad_buffer().ptr() : nullptr;
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const double gv = g.value()[bc];
      double acc = 0.0;
      for (int64_t i = 0; i < S; ++i) {
        if (gx) gx[bc * S + i] += gy[bc * S + i] * gv;
        acc += gy[bc * S + i] * x.value()[bc * S + i];
      }
      if (gg) gg[bc] += acc;
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return finish(Tensor::scalar(acc), x.requires_grad(), [x](const Tensor& gy) mutable {
    Tensor& gx = x.grad_buffer();
    const double g = gy[0];
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

Var mean(const Var& x) { return div_scalar(sum(x), static_cast<double>(x.value().numel())); }

Var token_mix(const Var& z, const Var& weight, const Var& bias) {
  require_rank(z, 3, "token_mix");
  const int64_t T = z.shape()[1];
  if (weight.shape() != Shape{T, T} || bias.value().numel() != T) {
    throw std::invalid_argument("token_mix: weight must be (T,T) and bias (T) with T = " + std::to_string(T));
  }
  kernels::TokenGeom g{z.shape()[0], T, z.shape()[2]};
  Tensor y(z.shape());
  kernels::token_mix_forward(g, z.value().ptr(), weight.value().ptr(), bias.value().ptr(), y.ptr());
  return finish(std::move(y), detail::any_requires_grad({&z, &weight, &bias}),
                [z, weight, bias, g](const Tensor& gy) mutable {
                  kernels::token_mix_backward(g, z.value().ptr(), weight.value().ptr(), gy.ptr(),
                                              z.requires_grad() ? z.grad_buffer().ptr() : nullptr,
                                              weight.requires_grad() ? weight.grad_buffer().ptr() : nullptr,
                                              bias.requires_grad() ? bias.grad_buffer().ptr() : nullptr);
                });
}

Var forward_diff(const Var& x, int axis) {
  axis = normalize_axis(axis, x.value().rank());
  const AxisSplit a = split_axis(x.shape(), axis);
  if (a.n < 2) throw std::invalid_argument("forward_diff: axis extent must be >= 2");
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] -= 1;
  Tensor y(os);
  const double* xp = x.value().ptr();
  for (int64_t o = 0; o < a.outer; ++o)
    for (int64_t j = 0; j + 1 < a.n; ++j)
      for (int64_t i = 0; i < a.inner; ++i) {
        y[(o * (a.n - 1) + j) * a.inner + i] = xp[(o * a.n + j + 1) * a.inner + i] - xp[(o * a.n + j) * a.inner + i];
      }
  return finish(std::move(y), x.requires_grad(), [x, a](const Tensor& gy) mutable {
    double* gx = x.grad_buffer().ptr();
    for (int64_t o = 0; o < a.outer; ++o)
      for (int64_t j = 0; j + 1 < a.n; ++j)
        for (int64_t i = 0; i < a.inner; ++i) {
          const double g = gy[(o * (a.n - 1) + j) * a.inner + i];
          gx[(o * a.n + j + 1) * a.inner + i] += g;
          gx[(o * a.n + j) * a.inner + i] -= g;
        }
  });
}

namespace {

Tensor box_sum_axis(const Tensor& x, int axis, int64_t r) {
  const AxisSplit a = split_axis(x.shape(), axis);
  Tensor y(x.shape());
  for (int64_t o = 0; o < a.outer; ++o)
    for (int64_t j = 0; j < a.n; ++j) {
      double* dst = y.ptr() + (o * a.n + j) * a.inner;
      const int64_t lo = std::max<int64_t>(0, j - r), hi = std::min<int64_t>(a.n - 1, j + r);
      for (int64_t jj = lo; jj <= hi; ++jj) {
        const double* src = x.ptr() + (o * a.n + jj) * a.inner;
        for (int64_t i = 0; i < a.inner; ++i) dst[i] += src[i];
      }
    }
  return y;
}

Tensor box_sum_tensor(const Tensor& x, int64_t r) {
  return box_sum_axis(box_sum_axis(box_sum_axis(x, 2, r), 3, r), 4, r);
}

}  // namespace

Var box_sum(const Var& x, int64_t n) {
  require_rank(x, 5, "box_sum");
  if (n < 1 || n % 2 == 0) throw std::invalid_argument("box_sum: window must be odd and positive");
  const int64_t r = (n - 1) / 2;
  // The zero-padded symmetric box filter is self-adjoint.
  return finish(box_sum_tensor(x.value(), r), x.requires_grad(),
                [x, r](const Tensor& gy) mutable { x.node()->accumulate(box_sum_tensor(gy, r)); });
}

}  // namespace corrmlp::ops
