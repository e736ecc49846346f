#pragma once

// Raw compute kernels behind the heavy differentiable ops.
//
// Every kernel exists twice: `kernels::` holds the OpenMP-parallel versions
// used by the library, `kernels::ref::` holds plain serial loops kept as the
// reference for tests and benchmarks. Parallel kernels partition work so that
// each output element is reduced by exactly one thread in a fixed order, so
// results do not depend on the thread count.
//
// Gradient kernels accumulate (+=) into their outputs. Null gradient
// pointers are skipped.

#include <cstdint>

namespace corrmlp::kernels {

struct ConvGeom {
  int64_t batch = 1, cin = 1, cout = 1, d = 1, h = 1, w = 1;
  int64_t k = 3;  // odd; padding (k-1)/2
  int64_t voxels() const { return d * h * w; }
};

struct GridGeom {
  int64_t batch = 1, channels = 1, d = 1, h = 1, w = 1;
  int64_t voxels() const { return d * h * w; }
};

struct TokenGeom {
  int64_t windows = 1, tokens = 1, channels = 1;
};

// in (B,Cin,D,H,W), weight (Cout,Cin,k,k,k), bias (Cout) -> out (B,Cout,D,H,W), overwritten.
void conv3d_forward(const ConvGeom& g, const double* in, const double* weight, const double* bias, double* out);
void conv3d_backward(const ConvGeom& g, const double* in, const double* weight, const double* grad_out,
                     double* grad_in, double* grad_weight, double* grad_bias);

// f1,f2 (B,C,D,H,W) -> out (B,d^3,D,H,W), overwritten. Offsets enumerated
// lexicographically over (dz,dy,dx) in [-r,r]^3, r = (d-1)/2.
void correlation3d_forward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2, double* out);
void correlation3d_backward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2,
                            const double* grad_out, double* grad_f1, double* grad_f2);

// Row-major products accumulated into C (M,N): gemm_nn adds A (M,K) B (K,N),
// gemm_nt adds A (M,K) B^T with B stored (N,K). Each entry of C is reduced by
// one thread in a fixed order.
void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, int64_t lda, const double* B, int64_t ldb, double* C,
             int64_t ldc);
void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, int64_t lda, const double* B, int64_t ldb, double* C,
             int64_t ldc);

// z (N,T,C), weight (T,T), bias (T): out[n,t,c] = sum_s weight[t,s] z[n,s,c] + bias[t], overwritten.
void token_mix_forward(const TokenGeom& g, const double* z, const double* weight, const double* bias, double* out);
void token_mix_backward(const TokenGeom& g, const double* z, const double* weight, const double* grad_out,
                        double* grad_z, double* grad_weight, double* grad_bias);

// x (B,C,D,H,W), psi (B,3,D,H,W): out(p) = x(p + psi(p)), trilinear, border clamped.
void warp_trilinear_forward(const GridGeom& g, const double* x, const double* psi, double* out);
void warp_trilinear_backward(const GridGeom& g, const double* x, const double* psi, const double* grad_out,
                             double* grad_x, double* grad_psi);

namespace ref {

void conv3d_forward(const ConvGeom& g, const double* in, const double* weight, const double* bias, double* out);
void conv3d_backward(const ConvGeom& g, const double* in, const double* weight, const double* grad_out,
                     double* grad_in, double* grad_weight, double* grad_bias);
void correlation3d_forward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2, double* out);
void correlation3d_backward(const GridGeom& g, int64_t max_disp, const double* f1, const double* f2,
                            const double* grad_out, double* grad_f1, double* grad_f2);
void token_mix_forward(const TokenGeom& g, const double* z, const double* weight, const double* bias, double* out);
void token_mix_backward(const TokenGeom& g, const double* z, const double* weight, const double* grad_out,
                        double* grad_z, double* grad_weight, double* grad_bias);
void warp_trilinear_forward(const GridGeom& g, const double* x, const double* psi, double* out);
void warp_trilinear_backward(const GridGeom& g, const double* x, const double* psi, const double* grad_out,
                             double* grad_x, double* grad_psi);

}  // namespace ref

/// Trilinear sample of one channel at continuous (z,y,x), clamped to the grid.
/// Shared by both kernel families so they interpolate identically.
struct TrilinearSample {
  int64_t i0[3], i1[3];
  double f[3];      // fractional offsets toward i1
  double dcoord[3]; // d(clamped coord)/d(raw coord): 1 inside, 0 when clamped
};

TrilinearSample trilinear_locate(double z, double y, double x, int64_t d, int64_t h, int64_t w);

}  // namespace corrmlp::kernels
