// Serial reference kernels. Straight loops over the defining sums; no
// blocking, no parallelism.

#include <cmath>

#include "corrmlp/kernels.hpp"

namespace corrmlp::kernels {

TrilinearSample trilinear_locate(double z, double y, double x, int64_t d, int64_t h, int64_t w) {
  TrilinearSample s{};
  const double raw[3] = {z, y, x};
  const int64_t ext[3] = {d, h, w};
  for (int a = 0; a < 3; ++a) {
    const double hi = static_cast<double>(ext[a] - 1);
    double c = raw[a];
    s.dcoord[a] = 1.0;
    if (c < 0.0) {
      c = 0.0;
      s.dcoord[a] = 0.0;
    } else if (c > hi) {
      c = hi;
      s.dcoord[a] = 0.0;
    }
    if (ext[a] == 1) {
      s.i0[a] = s.i1[a] = 0;
      s.f[a] = 0.0;
      s.dcoord[a] = 0.0;
      continue;
    }
    int64_t i0 = static_cast<int64_t>(std::floor(c));
    if (i0 > ext[a] - 2) i0 = ext[a] - 2;
    s.i0[a] = i0;
    s.i1[a] = i0 + 1;
    s.f[a] = c - static_cast<double>(i0);
  }
  return s;
}

namespace ref {

void conv3d_forward(const ConvGeom& g, const double* in, const double* weight, const double* bias, double* out) {
  const int64_t pad = (g.k - 1) / 2;
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t co = 0; co < g.cout; ++co)
      for (int64_t z = 0; z < g.d; ++z)
        for (int64_t y = 0; y < g.h; ++y)
          for (int64_t x = 0; x < g.w; ++x) {
            double acc = bias ? bias[co] : 0.0;
            for (int64_t ci = 0; ci < g.cin; ++ci)
              for (int64_t kz = 0; kz < g.k; ++kz)
                for (int64_t ky = 0; ky < g.k; ++ky)
                  for (int64_t kx = 0; kx < g.k; ++kx) {
                    const int64_t zz = z + kz - pad, yy = y + ky - pad, xx = x + kx - pad;
                    if (zz < 0 || zz >= g.d || yy < 0 || yy >= g.h || xx < 0 || xx >= g.w) continue;
                    acc += weight[(((co * g.cin + ci) * g.k + kz) * g.k + ky) * g.k + kx] *
                           in[(((b * g.cin + ci) * g.d + zz) * g.h + yy) * g.w + xx];
                  }
            out[(((b * g.cout + co) * g.d + z) * g.h + y) * g.w + x] = acc;
          }
}

void conv3d_backward(const ConvGeom& g, const double* in, const double* weight, const double* grad_out,
                     double* grad_in, double* grad_weight, double* grad_bias) {
  const int64_t pad = (g.k - 1) / 2;
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t co = 0; co < g.cout; ++co)
      for (int64_t z = 0; z < g.d; ++z)
        for (int64_t y = 0; y < g.h; ++y)
          for (int64_t x = 0; x < g.w; ++x) {
            const double go = grad_out[(((b * g.cout + co) * g.d + z) * g.h + y) * g.w + x];
            if (grad_bias) grad_bias[co] += go;
            for (int64_t ci = 0; ci < g.cin; ++ci)
              for (int64_t kz = 0; kz < g.k; ++kz)
                for (int64_t ky = 0; ky < g.k; ++ky)
                  for (int64_t kx = 0; kx < g.k; ++kx) {
                    const int64_t zz = z + kz - pad, yy = y + ky - pad, xx = x + kx - pad;
                    if (zz < 0 || zz >= g.d || yy < 0 || yy >= g.h || xx < 0 || xx >= g.w) continue;
                    const int64_t wi = (((co * g.cin + ci) * g.k + kz) * g.k + ky) * g.k + kx;
                    const int64_t ii = (((b * g.cin + ci) * g.d + zz) * g.h + yy) * g.w + xx;
                    if (grad_in) grad_in[ii] += weight[wi] * go;
                    if (grad_weight) grad_weight[wi] += in[ii] * go;
                  }
          }
}

void correlation3d_forward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2, double* out) {
  const int64_t r = (max_disp - 1) / 2;
  const int64_t S = g.voxels();
  int64_t o = 0;
  for (int64_t dz = -r; dz <= r; ++dz)
    for (int64_t dy = -r; dy <= r; ++dy)
      for (int64_t dx = -r; dx <= r; ++dx, ++o)
        for (int64_t b = 0; b < g.batch; ++b)
          for (int64_t z = 0; z < g.d; ++z)
            for (int64_t y = 0; y < g.h; ++y)
              for (int64_t x = 0; x < g.w; ++x) {
                const int64_t zz = z + dz, yy = y + dy, xx = x + dx;
                double acc = 0.0;
                if (zz >= 0 && zz < g.d && yy >= 0 && yy < g.h && xx >= 0 && xx < g.w) {
                  for (int64_t c = 0; c < g.channels; ++c) {
                    acc += f1[(b * g.channels + c) * S + (z * g.h + y) * g.w + x] *
                           f2[(b * g.channels + c) * S + (zz * g.h + yy) * g.w + xx];
                  }
                }
                const int64_t nd = max_disp * max_disp * max_disp;
                out[(b * nd + o) * S + (z * g.h + y) * g.w + x] = acc / static_cast<double>(g.channels);
              }
}

void correlation3d_backward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2,
                            const double* grad_out, double* grad_f1, double* grad_f2) {
  const int64_t r = (max_disp - 1) / 2;
  const int64_t S = g.voxels();
  const int64_t nd = max_disp * max_disp * max_disp;
  const double inv_c = 1.0 / static_cast<double>(g.channels);
  int64_t o = 0;
  for (int64_t dz = -r; dz <= r; ++dz)
    for (int64_t dy = -r; dy <= r; ++dy)
      for (int64_t dx = -r; dx <= r; ++dx, ++o)
        for (int64_t b = 0; b < g.batch; ++b)
          for (int64_t z = 0; z < g.d; ++z)
            for (int64_t y = 0; y < g.h; ++y)
              for (int64_t x = 0; x < g.w; ++x) {
                const int64_t zz = z + dz, yy = y + dy, xx = x + dx;
                if (zz < 0 || zz >= g.d || yy < 0 || yy >= g.h || xx < 0 || xx >= g.w) continue;
                const double go = grad_out[(b * nd + o) * S + (z * g.h + y) * g.w + x] * inv_c;
                for (int64_t c = 0; c < g.channels; ++c) {
                  const int64_t p = (b * g.channels + c) * S + (z * g.h + y) * g.w + x;
                  const int64_t q = (b * g.channels + c) * S + (zz * g.h + yy) * g.w + xx;
                  if (grad_f1) grad_f1[p] += go * f2[q];
                  if (grad_f2) grad_f2[q] += go * f1[p];
                }
              }
}

void token_mix_forward(const TokenGeom& g, const double* z, const double* weight, const double* bias, double* out) {
  for (int64_t n = 0; n < g.windows; ++n)
    for (int64_t t = 0; t < g.tokens; ++t)
      for (int64_t c = 0; c < g.channels; ++c) {
        double acc = bias[t];
        for (int64_t s = 0; s < g.tokens; ++s) {
          acc += weight[t * g.tokens + s] * z[(n * g.tokens + s) * g.channels + c];
        }
        out[(n * g.tokens + t) * g.channels + c] = acc;
      }
}

void token_mix_backward(const TokenGeom& g, const double* z, const double* weight, const double* grad_out,
                        double* grad_z, double* grad_weight, double* grad_bias) {
  for (int64_t n = 0; n < g.windows; ++n)
    for (int64_t t = 0; t < g.tokens; ++t)
      for (int64_t c = 0; c < g.channels; ++c) {
        const double go = grad_out[(n * g.tokens + t) * g.channels + c];
        if (grad_bias) grad_bias[t] += go;
        for (int64_t s = 0; s < g.tokens; ++s) {
          const int64_t zi = (n * g.tokens + s) * g.channels + c;
          if (grad_z) grad_z[zi] += weight[t * g.tokens + s] * go;
          if (grad_weight) grad_weight[t * g.tokens + s] += z[zi] * go;
        }
      }
}

namespace {

double sample(const double* ch, const TrilinearSample& s, int64_t h, int64_t w) {
  double acc = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int bb = 0; bb < 2; ++bb)
      for (int c = 0; c < 2; ++c) {
        const double wt = (a ? s.f[0] : 1.0 - s.f[0]) * (bb ? s.f[1] : 1.0 - s.f[1]) * (c ? s.f[2] : 1.0 - s.f[2]);
        const int64_t iz = a ? s.i1[0] : s.i0[0];
        const int64_t iy = bb ? s.i1[1] : s.i0[1];
        const int64_t ix = c ? s.i1[2] : s.i0[2];
        acc += wt * ch[(iz * h + iy) * w + ix];
      }
  return acc;
}

}  // namespace

void warp_trilinear_forward(const GridGeom& g, const double* x, const double* psi, double* out) {
  const int64_t S = g.voxels();
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t c = 0; c < g.channels; ++c)
      for (int64_t z = 0; z < g.d; ++z)
        for (int64_t y = 0; y < g.h; ++y)
          for (int64_t xx = 0; xx < g.w; ++xx) {
            const int64_t p = (z * g.h + y) * g.w + xx;
            const double* disp = psi + b * 3 * S;
            const auto s = trilinear_locate(z + disp[p], y + disp[S + p], xx + disp[2 * S + p], g.d, g.h, g.w);
            out[(b * g.channels + c) * S + p] = sample(x + (b * g.channels + c) * S, s, g.h, g.w);
          }
}

void warp_trilinear_backward(const GridGeom& g, const double* x, const double* psi, const double* grad_out,
                             double* grad_x, double* grad_psi) {
  const int64_t S = g.voxels();
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t c = 0; c < g.channels; ++c)
      for (int64_t z = 0; z < g.d; ++z)
        for (int64_t y = 0; y < g.h; ++y)
          for (int64_t xx = 0; xx < g.w; ++xx) {
            const int64_t p = (z * g.h + y) * g.w + xx;
            const double* disp = psi + b * 3 * S;
            const auto s = trilinear_locate(z + disp[p], y + disp[S + p], xx + disp[2 * S + p], g.d, g.h, g.w);
            const double go = grad_out[(b * g.channels + c) * S + p];
            const double* ch = x + (b * g.channels + c) * S;
            for (int a = 0; a < 2; ++a)
              for (int bb = 0; bb < 2; ++bb)
                for (int cc = 0; cc < 2; ++cc) {
                  const double wz = a ? s.f[0] : 1.0 - s.f[0];
                  const double wy = bb ? s.f[1] : 1.0 - s.f[1];
                  const double wx = cc ? s.f[2] : 1.0 - s.f[2];
                  const int64_t idx = ((a ? s.i1[0] : s.i0[0]) * g.h + (bb ? s.i1[1] : s.i0[1])) * g.w +
                                      (cc ? s.i1[2] : s.i0[2]);
                  const double v = ch[idx];
                  if (grad_x) grad_x[(b * g.channels + c) * S + idx] += go * wz * wy * wx;
                  if (grad_psi) {
                    const double sz = a ? 1.0 : -1.0, sy = bb ? 1.0 : -1.0, sx = cc ? 1.0 : -1.0;
                    grad_psi[b * 3 * S + p] += go * v * sz * wy * wx * s.dcoord[0];
                    grad_psi[b * 3 * S + S + p] += go * v * wz * sy * wx * s.dcoord[1];
                    grad_psi[b * 3 * S + 2 * S + p] += go * v * wz * wy * sx * s.dcoord[2];
                  }
                }
          }
}

}  // namespace ref
}  // namespace corrmlp::kernels
