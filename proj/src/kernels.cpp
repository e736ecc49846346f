// OpenMP-parallel kernels. Work is split over independent output slabs
// (batch x channel, token rows, z-planes), each reduced by one thread in a
// fixed order.

#include <algorithm>
#include <cstring>
#include <vector>

#include "corrmlp/kernels.hpp"

namespace corrmlp::kernels {

namespace {

// Eight doubles; maps to one AVX-512 register or two AVX2 registers.
typedef double v8d __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(double* p, v8d v) { std::memcpy(p, &v, sizeof v); }

inline double hsum(v8d v) {
  double s = 0.0;
  for (int i = 0; i < 8; ++i) s += v[i];
  return s;
}

constexpr int kCoBlock = 4;

// Zero-padded copy of (batch, c, d, h, w) with a halo of `pad` on every
// spatial side.
std::vector<double> pad_volume(const double* src, int64_t planes, int64_t d, int64_t h, int64_t w, int64_t pad) {
  const int64_t dp = d + 2 * pad, hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<double> out(static_cast<size_t>(planes * dp * hp * wp), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    for (int64_t z = 0; z < d; ++z)
      for (int64_t y = 0; y < h; ++y) {
        std::memcpy(out.data() + ((pl * dp + z + pad) * hp + y + pad) * wp + pad, src + ((pl * d + z) * h + y) * w,
                    sizeof(double) * static_cast<size_t>(w));
      }
  }
  return out;
}

// out[b,co] (+)= sum_ci sum_taps w[co,ci,tap] * P[b,ci](shifted), P padded by
// (k-1)/2. One task per (batch, output-channel block, z-plane).
template <int CB>
void conv_rows(const ConvGeom& g, const double* P, const double* weight, int64_t b, int64_t co0, int64_t z,
               double* out) {
  const int64_t k = g.k, kk = k * k * k;
  const int64_t hp = g.h + k - 1, wp = g.w + k - 1, dp = g.d + k - 1;
  const int64_t S = g.voxels();
  const int64_t full = g.w / 8 * 8;
  for (int64_t y = 0; y < g.h; ++y) {
    for (int64_t x0 = 0; x0 < full; x0 += 8) {
      v8d acc[CB] = {};
      for (int64_t ci = 0; ci < g.cin; ++ci) {
        const double* pc = P + (b * g.cin + ci) * dp * hp * wp;
        const double* wc = weight + ci * kk;
        for (int64_t kz = 0; kz < k; ++kz)
          for (int64_t ky = 0; ky < k; ++ky) {
            const double* prow = pc + ((z + kz) * hp + y + ky) * wp + x0;
            const int64_t t0 = (kz * k + ky) * k;
            for (int64_t kx = 0; kx < k; ++kx) {
              const v8d s = load8(prow + kx);
              for (int c = 0; c < CB; ++c) acc[c] += wc[(co0 + c) * g.cin * kk + t0 + kx] * s;
            }
          }
      }
      for (int c = 0; c < CB; ++c) {
        double* o = out + (b * g.cout + co0 + c) * S + (z * g.h + y) * g.w + x0;
        store8(o, load8(o) + acc[c]);
      }
    }
    for (int64_t x = full; x < g.w; ++x) {
      double acc[CB] = {};
      for (int64_t ci = 0; ci < g.cin; ++ci) {
        const double* pc = P + (b * g.cin + ci) * dp * hp * wp;
        const double* wc = weight + ci * kk;
        for (int64_t kz = 0; kz < k; ++kz)
          for (int64_t ky = 0; ky < k; ++ky) {
            const double* prow = pc + ((z + kz) * hp + y + ky) * wp + x;
            const int64_t t0 = (kz * k + ky) * k;
            for (int64_t kx = 0; kx < k; ++kx) {
              for (int c = 0; c < CB; ++c) acc[c] += wc[(co0 + c) * g.cin * kk + t0 + kx] * prow[kx];
            }
          }
      }
      for (int c = 0; c < CB; ++c) out[(b * g.cout + co0 + c) * S + (z * g.h + y) * g.w + x] += acc[c];
    }
  }
}

// Accumulates the same-padded convolution of P (already padded) into out.
void conv_padded_accumulate(const ConvGeom& g, const double* P, const double* weight, double* out) {
  const int64_t blocks = (g.cout + kCoBlock - 1) / kCoBlock;
  const int64_t tasks = g.batch * blocks * g.d;
#pragma omp parallel for schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const int64_t z = t % g.d;
    const int64_t blk = (t / g.d) % blocks;
    const int64_t b = t / (g.d * blocks);
    const int64_t co0 = blk * kCoBlock;
    switch (std::min<int64_t>(kCoBlock, g.cout - co0)) {
      case 1: conv_rows<1>(g, P, weight, b, co0, z, out); break;
      case 2: conv_rows<2>(g, P, weight, b, co0, z, out); break;
      case 3: conv_rows<3>(g, P, weight, b, co0, z, out); break;
      default: conv_rows<4>(g, P, weight, b, co0, z, out); break;
    }
  }
}

}  // namespace

void conv3d_forward(const ConvGeom& g, const double* in, const double* weight, const double* bias, double* out) {
  if (g.k > 3) {
    ref::conv3d_forward(g, in, weight, bias, out);
    return;
  }
  const int64_t S = g.voxels();
  const int64_t pad = (g.k - 1) / 2;
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t co = 0; co < g.cout; ++co) std::fill_n(out + (b * g.cout + co) * S, S, bias ? bias[co] : 0.0);
  const std::vector<double> P = pad_volume(in, g.batch * g.cin, g.d, g.h, g.w, pad);
  conv_padded_accumulate(g, P.data(), weight, out);
}

void conv3d_backward(const ConvGeom& g, const double* in, const double* weight, const double* grad_out,
                     double* grad_in, double* grad_weight, double* grad_bias) {
  if (g.k > 3) {
    ref::conv3d_backward(g, in, weight, grad_out, grad_in, grad_weight, grad_bias);
    return;
  }
  const int64_t S = g.voxels();
  const int64_t pad = (g.k - 1) / 2;
  const int64_t k = g.k, kk = k * k * k;

  if (grad_bias) {
    for (int64_t co = 0; co < g.cout; ++co) {
      double acc = 0.0;
      for (int64_t b = 0; b < g.batch; ++b) {
        const double* go = grad_out + (b * g.cout + co) * S;
        for (int64_t i = 0; i < S; ++i) acc += go[i];
      }
      grad_bias[co] += acc;
    }
  }

  if (grad_in) {
    // Same-padded convolution of grad_out with channel-transposed, spatially
    // flipped weights.
    std::vector<double> wt(static_cast<size_t>(g.cin * g.cout * kk));
    for (int64_t co = 0; co < g.cout; ++co)
      for (int64_t ci = 0; ci < g.cin; ++ci)
        for (int64_t t = 0; t < kk; ++t) {
          wt[static_cast<size_t>((ci * g.cout + co) * kk + t)] = weight[(co * g.cin + ci) * kk + (kk - 1 - t)];
        }
    const std::vector<double> G = pad_volume(grad_out, g.batch * g.cout, g.d, g.h, g.w, pad);
    const ConvGeom gt{g.batch, g.cout, g.cin, g.d, g.h, g.w, g.k};
    conv_padded_accumulate(gt, G.data(), wt.data(), grad_in);
  }

  if (grad_weight) {
    const std::vector<double> P = pad_volume(in, g.batch * g.cin, g.d, g.h, g.w, pad);
    const int64_t hp = g.h + k - 1, wp = g.w + k - 1, dp = g.d + k - 1;
    const int64_t full = g.w / 8 * 8;
    const int64_t pairs = g.cout * g.cin;
#pragma omp parallel for schedule(static)
    for (int64_t pair = 0; pair < pairs; ++pair) {
      const int64_t co = pair / g.cin, ci = pair % g.cin;
      v8d acc[27] = {};
      double tail[27] = {};
      for (int64_t b = 0; b < g.batch; ++b) {
        const double* go = grad_out + (b * g.cout + co) * S;
        const double* pc = P.data() + (b * g.cin + ci) * dp * hp * wp;
        for (int64_t z = 0; z < g.d; ++z)
          for (int64_t y = 0; y < g.h; ++y) {
            const double* grow = go + (z * g.h + y) * g.w;
            for (int64_t x0 = 0; x0 < full; x0 += 8) {
              const v8d gv = load8(grow + x0);
              for (int64_t kz = 0; kz < k; ++kz)
                for (int64_t ky = 0; ky < k; ++ky) {
                  const double* prow = pc + ((z + kz) * hp + y + ky) * wp + x0;
                  for (int64_t kx = 0; kx < k; ++kx) acc[(kz * k + ky) * k + kx] += gv * load8(prow + kx);
                }
            }
            for (int64_t x = full; x < g.w; ++x) {
              for (int64_t kz = 0; kz < k; ++kz)
                for (int64_t ky = 0; ky < k; ++ky) {
                  const double* prow = pc + ((z + kz) * hp + y + ky) * wp + x;
                  for (int64_t kx = 0; kx < k; ++kx) tail[(kz * k + ky) * k + kx] += grow[x] * prow[kx];
                }
            }
          }
      }
      double* gw = grad_weight + pair * kk;
      for (int64_t t = 0; t < kk; ++t) gw[t] += hsum(acc[t]) + tail[t];
    }
  }
}

void correlation3d_forward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2, double* out) {
  const int64_t r = (max_disp - 1) / 2;
  const int64_t S = g.voxels();
  const int64_t nd = max_disp * max_disp * max_disp;
  const int64_t slabs = g.batch * nd;
#pragma omp parallel for schedule(static)
  for (int64_t slab = 0; slab < slabs; ++slab) {
    const int64_t b = slab / nd, o = slab % nd;
    const int64_t dz = o / (max_disp * max_disp) - r;
    const int64_t dy = (o / max_disp) % max_disp - r;
    const int64_t dx = o % max_disp - r;
    double* dst = out + slab * S;
    std::memset(dst, 0, sizeof(double) * static_cast<size_t>(S));
    for (int64_t c = 0; c < g.channels; ++c) {
      const double* a = f1 + (b * g.channels + c) * S;
      const double* bb = f2 + (b * g.channels + c) * S;
      for (int64_t z = 0; z < g.d; ++z) {
        const int64_t zz = z + dz;
        if (zz < 0 || zz >= g.d) continue;
        for (int64_t y = 0; y < g.h; ++y) {
          const int64_t yy = y + dy;
          if (yy < 0 || yy >= g.h) continue;
          const double* arow = a + (z * g.h + y) * g.w;
          const double* brow = bb + (zz * g.h + yy) * g.w + dx;
          double* orow = dst + (z * g.h + y) * g.w;
          const int64_t lo = std::max<int64_t>(0, -dx), hi = std::min<int64_t>(g.w, g.w - dx);
          for (int64_t x = lo; x < hi; ++x) orow[x] += arow[x] * brow[x];
        }
      }
    }
    const double inv_c = 1.0 / static_cast<double>(g.channels);
    for (int64_t i = 0; i < S; ++i) dst[i] *= inv_c;
  }
}

void correlation3d_backward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2,
                            const double* grad_out, double* grad_f1, double* grad_f2) {
  const int64_t r = (max_disp - 1) / 2;
  const int64_t S = g.voxels();
  const int64_t nd = max_disp * max_disp * max_disp;
  const double inv_c = 1.0 / static_cast<double>(g.channels);
  const int64_t slabs = g.batch * g.channels;
#pragma omp parallel for schedule(static)
  for (int64_t slab = 0; slab < slabs; ++slab) {
    const int64_t b = slab / g.channels;
    const double* a = f1 + slab * S;
    const double* bb = f2 + slab * S;
    double* ga = grad_f1 ? grad_f1 + slab * S : nullptr;
    double* gb = grad_f2 ? grad_f2 + slab * S : nullptr;
    for (int64_t o = 0; o < nd; ++o) {
      const int64_t dz = o / (max_disp * max_disp) - r;
      const int64_t dy = (o / max_disp) % max_disp - r;
      const int64_t dx = o % max_disp - r;
      const double* go = grad_out + (b * nd + o) * S;
      const int64_t lo = std::max<int64_t>(0, -dx), hi = std::min<int64_t>(g.w, g.w - dx);
      for (int64_t z = 0; z < g.d; ++z) {
        const int64_t zz = z + dz;
        if (zz < 0 || zz >= g.d) continue;
        for (int64_t y = 0; y < g.h; ++y) {
          const int64_t yy = y + dy;
          if (yy < 0 || yy >= g.h) continue;
          const int64_t prow = (z * g.h + y) * g.w;
          const int64_t qrow = (zz * g.h + yy) * g.w + dx;
          if (ga) {
            for (int64_t x = lo; x < hi; ++x) ga[prow + x] += inv_c * go[prow + x] * bb[qrow + x];
          }
          if (gb) {
            for (int64_t x = lo; x < hi; ++x) gb[qrow + x] += inv_c * go[prow + x] * a[prow + x];
          }
        }
      }
    }
  }
}

void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, int64_t lda, const double* B, int64_t ldb, double* C,
             int64_t ldc) {
  const int64_t mblocks = (M + 3) / 4;
#pragma omp parallel for schedule(static)
  for (int64_t ib = 0; ib < mblocks; ++ib) {
    const int64_t i0 = ib * 4, rows = std::min<int64_t>(4, M - i0);
    int64_t j = 0;
    if (rows == 4) {
      for (; j + 16 <= N; j += 16) {
        v8d acc[4][2];
        for (int r = 0; r < 4; ++r) {
          acc[r][0] = load8(C + (i0 + r) * ldc + j);
          acc[r][1] = load8(C + (i0 + r) * ldc + j + 8);
        }
        for (int64_t k = 0; k < K; ++k) {
          const v8d b0 = load8(B + k * ldb + j), b1 = load8(B + k * ldb + j + 8);
          for (int r = 0; r < 4; ++r) {
            const double a = A[(i0 + r) * lda + k];
            acc[r][0] += a * b0;
            acc[r][1] += a * b1;
          }
        }
        for (int r = 0; r < 4; ++r) {
          store8(C + (i0 + r) * ldc + j, acc[r][0]);
          store8(C + (i0 + r) * ldc + j + 8, acc[r][1]);
        }
      }
    }
    for (int64_t r = 0; r < rows; ++r) {
      double* crow = C + (i0 + r) * ldc;
      const double* arow = A + (i0 + r) * lda;
      int64_t jj = j;
      for (; jj + 8 <= N; jj += 8) {
        v8d acc = load8(crow + jj);
        for (int64_t k = 0; k < K; ++k) acc += arow[k] * load8(B + k * ldb + jj);
        store8(crow + jj, acc);
      }
      for (; jj < N; ++jj) {
        double acc = crow[jj];
        for (int64_t k = 0; k < K; ++k) acc += arow[k] * B[k * ldb + jj];
        crow[jj] = acc;
      }
    }
  }
}

void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, int64_t lda, const double* B, int64_t ldb, double* C,
             int64_t ldc) {
  const int64_t kfull = K / 8 * 8;
  const int64_t mblocks = (M + 3) / 4;
#pragma omp parallel for schedule(static)
  for (int64_t ib = 0; ib < mblocks; ++ib) {
    const int64_t i0 = ib * 4, rows = std::min<int64_t>(4, M - i0);
    for (int64_t j0 = 0; j0 < N; j0 += 4) {
      const int64_t cols = std::min<int64_t>(4, N - j0);
      if (rows == 4 && cols == 4) {
        v8d acc[4][4] = {};
        for (int64_t k = 0; k < kfull; k += 8) {
          v8d a[4], b[4];
          for (int r = 0; r < 4; ++r) a[r] = load8(A + (i0 + r) * lda + k);
          for (int c = 0; c < 4; ++c) b[c] = load8(B + (j0 + c) * ldb + k);
          for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) acc[r][c] += a[r] * b[c];
        }
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) {
            double v = hsum(acc[r][c]);
            for (int64_t k = kfull; k < K; ++k) v += A[(i0 + r) * lda + k] * B[(j0 + c) * ldb + k];
            C[(i0 + r) * ldc + j0 + c] += v;
          }
        continue;
      }
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
          const double* ar = A + (i0 + r) * lda;
          const double* br = B + (j0 + c) * ldb;
          v8d acc = {};
          for (int64_t k = 0; k < kfull; k += 8) acc += load8(ar + k) * load8(br + k);
          double v = hsum(acc);
          for (int64_t k = kfull; k < K; ++k) v += ar[k] * br[k];
          C[(i0 + r) * ldc + j0 + c] += v;
        }
    }
  }
}

namespace {

// (N,T,C) <-> (T, N*C) so token mixing becomes one (T,T) x (T,N*C) product.
std::vector<double> tokens_major(const TokenGeom& g, const double* z) {
  const int64_t T = g.tokens, C = g.channels, NC = g.windows * C;
  std::vector<double> zt(static_cast<size_t>(T * NC));
  for (int64_t n = 0; n < g.windows; ++n)
    for (int64_t s = 0; s < T; ++s)
      std::memcpy(zt.data() + s * NC + n * C, z + (n * T + s) * C, sizeof(double) * static_cast<size_t>(C));
  return zt;
}

}  // namespace

void token_mix_forward(const TokenGeom& g, const double* z, const double* weight, const double* bias, double* out) {
  const int64_t T = g.tokens, C = g.channels, NC = g.windows * C;
  const std::vector<double> zt = tokens_major(g, z);
  std::vector<double> ot(static_cast<size_t>(T * NC));
  for (int64_t t = 0; t < T; ++t) std::fill_n(ot.begin() + t * NC, NC, bias[t]);
  gemm_nn(T, NC, T, weight, T, zt.data(), NC, ot.data(), NC);
  for (int64_t n = 0; n < g.windows; ++n)
    for (int64_t t = 0; t < T; ++t)
      std::memcpy(out + (n * T + t) * C, ot.data() + t * NC + n * C, sizeof(double) * static_cast<size_t>(C));
}

void token_mix_backward(const TokenGeom& g, const double* z, const double* weight, const double* grad_out,
                        double* grad_z, double* grad_weight, double* grad_bias) {
  const int64_t T = g.tokens, C = g.channels, NC = g.windows * C;
  const std::vector<double> gt = tokens_major(g, grad_out);

  if (grad_bias) {
    for (int64_t t = 0; t < T; ++t) {
      double acc = 0.0;
      const double* gr = gt.data() + t * NC;
      for (int64_t j = 0; j < NC; ++j) acc += gr[j];
      grad_bias[t] += acc;
    }
  }
  if (grad_weight) {
    const std::vector<double> zt = tokens_major(g, z);
    gemm_nt(T, T, NC, gt.data(), NC, zt.data(), NC, grad_weight, T);
  }
  if (grad_z) {
    std::vector<double> wt(static_cast<size_t>(T * T));
    for (int64_t t = 0; t < T; ++t)
      for (int64_t s = 0; s < T; ++s) wt[static_cast<size_t>(s * T + t)] = weight[t * T + s];
    std::vector<double> gzt(static_cast<size_t>(T * NC), 0.0);
    gemm_nn(T, NC, T, wt.data(), T, gt.data(), NC, gzt.data(), NC);
    for (int64_t n = 0; n < g.windows; ++n)
      for (int64_t s = 0; s < T; ++s) {
        double* dst = grad_z + (n * T + s) * C;
        const double* src = gzt.data() + s * NC + n * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
      }
  }
}

void warp_trilinear_forward(const GridGeom& g, const double* x, const double* psi, double* out) {
  const int64_t S = g.voxels();
  for (int64_t b = 0; b < g.batch; ++b) {
    const double* disp = psi + b * 3 * S;
#pragma omp parallel for schedule(static)
    for (int64_t z = 0; z < g.d; ++z)
      for (int64_t y = 0; y < g.h; ++y)
        for (int64_t xx = 0; xx < g.w; ++xx) {
          const int64_t p = (z * g.h + y) * g.w + xx;
          const auto s = trilinear_locate(z + disp[p], y + disp[S + p], xx + disp[2 * S + p], g.d, g.h, g.w);
          const double wz[2] = {1.0 - s.f[0], s.f[0]};
          const double wy[2] = {1.0 - s.f[1], s.f[1]};
          const double wx[2] = {1.0 - s.f[2], s.f[2]};
          const int64_t iz[2] = {s.i0[0], s.i1[0]}, iy[2] = {s.i0[1], s.i1[1]}, ix[2] = {s.i0[2], s.i1[2]};
          for (int64_t c = 0; c < g.channels; ++c) {
            const double* ch = x + (b * g.channels + c) * S;
            double acc = 0.0;
            for (int a = 0; a < 2; ++a)
              for (int bb = 0; bb < 2; ++bb)
                for (int cc = 0; cc < 2; ++cc)
                  acc += wz[a] * wy[bb] * wx[cc] * ch[(iz[a] * g.h + iy[bb]) * g.w + ix[cc]];
            out[(b * g.channels + c) * S + p] = acc;
          }
        }
  }
}

void warp_trilinear_backward(const GridGeom& g, const double* x, const double* psi, const double* grad_out,
                             double* grad_x, double* grad_psi) {
  const int64_t S = g.voxels();
  for (int64_t b = 0; b < g.batch; ++b) {
    const double* disp = psi + b * 3 * S;
    if (grad_psi) {
#pragma omp parallel for schedule(static)
      for (int64_t z = 0; z < g.d; ++z)
        for (int64_t y = 0; y < g.h; ++y)
          for (int64_t xx = 0; xx < g.w; ++xx) {
            const int64_t p = (z * g.h + y) * g.w + xx;
            const auto s = trilinear_locate(z + disp[p], y + disp[S + p], xx + disp[2 * S + p], g.d, g.h, g.w);
            const double wz[2] = {1.0 - s.f[0], s.f[0]};
            const double wy[2] = {1.0 - s.f[1], s.f[1]};
            const double wx[2] = {1.0 - s.f[2], s.f[2]};
            const int64_t iz[2] = {s.i0[0], s.i1[0]}, iy[2] = {s.i0[1], s.i1[1]}, ix[2] = {s.i0[2], s.i1[2]};
            double gz = 0.0, gy = 0.0, gx = 0.0;
            for (int64_t c = 0; c < g.channels; ++c) {
              const double* ch = x + (b * g.channels + c) * S;
              const double go = grad_out[(b * g.channels + c) * S + p];
              for (int a = 0; a < 2; ++a)
                for (int bb = 0; bb < 2; ++bb)
                  for (int cc = 0; cc < 2; ++cc) {
                    const double v = go * ch[(iz[a] * g.h + iy[bb]) * g.w + ix[cc]];
                    gz += v * (a ? 1.0 : -1.0) * wy[bb] * wx[cc];
                    gy += v * wz[a] * (bb ? 1.0 : -1.0) * wx[cc];
                    gx += v * wz[a] * wy[bb] * (cc ? 1.0 : -1.0);
                  }
            }
            grad_psi[b * 3 * S + p] += gz * s.dcoord[0];
            grad_psi[b * 3 * S + S + p] += gy * s.dcoord[1];
            grad_psi[b * 3 * S + 2 * S + p] += gx * s.dcoord[2];
          }
    }
    if (grad_x) {
      // Scatter; one thread owns each channel.
#pragma omp parallel for schedule(static)
      for (int64_t c = 0; c < g.channels; ++c) {
        double* gch = grad_x + (b * g.channels + c) * S;
        const double* go = grad_out + (b * g.channels + c) * S;
        for (int64_t z = 0; z < g.d; ++z)
          for (int64_t y = 0; y < g.h; ++y)
            for (int64_t xx = 0; xx < g.w; ++xx) {
              const int64_t p = (z * g.h + y) * g.w + xx;
              const auto s =
                  trilinear_locate(z + disp[p], y + disp[S + p], xx + disp[2 * S + p], g.d, g.h, g.w);
              const double wz[2] = {1.0 - s.f[0], s.f[0]};
              const double wy[2] = {1.0 - s.f[1], s.f[1]};
              const double wx[2] = {1.0 - s.f[2], s.f[2]};
              const int64_t iz[2] = {s.i0[0], s.i1[0]}, iy[2] = {s.i0[1], s.i1[1]}, ix[2] = {s.i0[2], s.i1[2]};
              for (int a = 0; a < 2; ++a)
                for (int bb = 0; bb < 2; ++bb)
                  for (int cc = 0; cc < 2; ++cc)
                    gch[(iz[a] * g.h + iy[bb]) * g.w + ix[cc]] += go[p] * wz[a] * wy[bb] * wx[cc];
            }
      }
    }
  }
}

}  // namespace corrmlp::kernels
