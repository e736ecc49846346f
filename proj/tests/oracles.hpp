#pragma once

// Naive loop oracles written straight from the definitions. Deliberately
// slow and independent of the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "corrmlp/rng.hpp"
#include "corrmlp/tensor.hpp"

namespace oracle {

using corrmlp::Shape;
using corrmlp::Tensor;

inline Tensor random_tensor(const Shape& s, corrmlp::Rng& rng, double scale = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline double get(const Tensor& t, int64_t b, int64_t c, int64_t z, int64_t y, int64_t x) {
  if (z < 0 || y < 0 || x < 0 || z >= t.dim(2) || y >= t.dim(3) || x >= t.dim(4)) return 0.0;
  return t.at(b, c, z, y, x);
}

inline Tensor conv3d(const Tensor& in, const Tensor& w, const Tensor& bias) {
  const int64_t B = in.dim(0), Ci = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
  const int64_t Co = w.dim(0), k = w.dim(2), p = (k - 1) / 2;
  Tensor out(Shape{B, Co, D, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W; ++x) {
            double s = bias[co];
            for (int64_t ci = 0; ci < Ci; ++ci)
              for (int64_t a = 0; a < k; ++a)
                for (int64_t bb = 0; bb < k; ++bb)
                  for (int64_t c = 0; c < k; ++c) {
                    s += w[(((co * Ci + ci) * k + a) * k + bb) * k + c] * get(in, b, ci, z + a - p, y + bb - p, x + c - p);
                  }
            out.at(b, co, z, y, x) = s;
          }
  return out;
}

inline Tensor correlation(const Tensor& f1, const Tensor& f2, int64_t d) {
  const int64_t B = f1.dim(0), C = f1.dim(1), D = f1.dim(2), H = f1.dim(3), W = f1.dim(4), r = (d - 1) / 2;
  Tensor out(Shape{B, d * d * d, D, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t dz = -r; dz <= r; ++dz)
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
          const int64_t o = ((dz + r) * d + (dy + r)) * d + (dx + r);
          for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y)
              for (int64_t x = 0; x < W; ++x) {
                double s = 0.0;
                for (int64_t c = 0; c < C; ++c) s += f1.at(b, c, z, y, x) * get(f2, b, c, z + dz, y + dy, x + dx);
                out.at(b, o, z, y, x) = s / double(C);
              }
        }
  return out;
}

inline Tensor maxpool(const Tensor& in) {
  const int64_t B = in.dim(0), C = in.dim(1), D = in.dim(2) / 2, H = in.dim(3) / 2, W = in.dim(4) / 2;
  Tensor out(Shape{B, C, D, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W; ++x) {
            double m = -INFINITY;
            for (int i = 0; i < 8; ++i) m = std::max(m, in.at(b, c, 2 * z + (i >> 2), 2 * y + ((i >> 1) & 1), 2 * x + (i & 1)));
            out.at(b, c, z, y, x) = m;
          }
  return out;
}

inline Tensor local_mean(const Tensor& in, int64_t n) {
  const int64_t r = (n - 1) / 2;
  Tensor out(in.shape());
  for (int64_t b = 0; b < in.dim(0); ++b)
    for (int64_t c = 0; c < in.dim(1); ++c)
      for (int64_t z = 0; z < in.dim(2); ++z)
        for (int64_t y = 0; y < in.dim(3); ++y)
          for (int64_t x = 0; x < in.dim(4); ++x) {
            double s = 0.0;
            for (int64_t a = -r; a <= r; ++a)
              for (int64_t bb = -r; bb <= r; ++bb)
                for (int64_t cc = -r; cc <= r; ++cc) s += get(in, b, c, z + a, y + bb, x + cc);
            out.at(b, c, z, y, x) = s / double(n * n * n);
          }
  return out;
}

/// Average over the three axes of the mean squared forward difference.
inline double diffusion(const Tensor& psi) {
  const int64_t C = psi.dim(1), D = psi.dim(2), H = psi.dim(3), W = psi.dim(4);
  double total = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    double s = 0.0;
    int64_t n = 0;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t z = 0; z < D - (axis == 0); ++z)
        for (int64_t y = 0; y < H - (axis == 1); ++y)
          for (int64_t x = 0; x < W - (axis == 2); ++x) {
            const double d = psi.at(0, c, z + (axis == 0), y + (axis == 1), x + (axis == 2)) - psi.at(0, c, z, y, x);
            s += d * d;
            ++n;
          }
    total += s / double(n);
  }
  return total / 3.0;
}

inline Tensor jacobian(const Tensor& psi) {
  const int64_t D = psi.dim(2), H = psi.dim(3), W = psi.dim(4);
  const int64_t ext[3] = {D, H, W};
  Tensor out(Shape{1, 1, D, H, W});
  for (int64_t z = 0; z < D; ++z)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double J[3][3];
        const int64_t p[3] = {z, y, x};
        for (int c = 0; c < 3; ++c)
          for (int a = 0; a < 3; ++a) {
            int64_t lo[3] = {z, y, x}, hi[3] = {z, y, x};
            double denom = 2.0;
            if (p[a] == 0) {
              hi[a] = p[a] + 1;
              denom = 1.0;
            } else if (p[a] == ext[a] - 1) {
              lo[a] = p[a] - 1;
              denom = 1.0;
            } else {
              lo[a] = p[a] - 1;
              hi[a] = p[a] + 1;
            }
            J[c][a] = (psi.at(0, c, hi[0], hi[1], hi[2]) - psi.at(0, c, lo[0], lo[1], lo[2])) / denom + (c == a ? 1.0 : 0.0);
          }
        out.at(0, 0, z, y, x) = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
      }
  return out;
}

/// x sampled at p + psi(p), trilinear, coordinates clamped to the grid.
inline Tensor warp(const Tensor& x, const Tensor& psi) {
  const int64_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  Tensor out(x.shape());
  for (int64_t c = 0; c < x.dim(1); ++c)
    for (int64_t z = 0; z < D; ++z)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          const double q[3] = {std::clamp(z + psi.at(0, 0, z, y, xx), 0.0, double(D - 1)),
                               std::clamp(y + psi.at(0, 1, z, y, xx), 0.0, double(H - 1)),
                               std::clamp(xx + psi.at(0, 2, z, y, xx), 0.0, double(W - 1))};
          const int64_t f[3] = {int64_t(std::floor(q[0])), int64_t(std::floor(q[1])), int64_t(std::floor(q[2]))};
          const int64_t ext[3] = {D, H, W};
          double s = 0.0;
          for (int corner = 0; corner < 8; ++corner) {
            double wgt = 1.0;
            int64_t idx[3];
            for (int a = 0; a < 3; ++a) {
              const int bit = (corner >> (2 - a)) & 1;
              idx[a] = std::min(f[a] + bit, ext[a] - 1);
              const double t = q[a] - double(f[a]);
              wgt *= bit ? t : 1.0 - t;
            }
            if (wgt != 0.0) s += wgt * x.at(0, c, idx[0], idx[1], idx[2]);
          }
          out.at(0, c, z, y, xx) = s;
        }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
