// OpenMP kernels against their serial references at desk-scale sizes.

#include <benchmark/benchmark.h>

#include <omp.h>

#include <vector>

#include "corrmlp/kernels.hpp"
#include "corrmlp/rng.hpp"

using namespace corrmlp;
namespace k = corrmlp::kernels;

namespace {

std::vector<double> noise(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void set_threads(benchmark::State& state) {
  if (state.range(0) > 0) omp_set_num_threads(int(state.range(0)));
}

const k::ConvGeom kConv{1, 8, 8, 32, 32, 32, 3};
const k::GridGeom kCorr{1, 16, 16, 16, 16};
const k::TokenGeom kTok{64, 125, 8};
const k::GridGeom kWarp{1, 1, 32, 32, 32};

template <bool Fast>
void BM_conv3d_forward(benchmark::State& state) {
  set_threads(state);
  const auto& g = kConv;
  auto in = noise(size_t(g.cin * g.voxels()), 1), w = noise(size_t(g.cout * g.cin * 27), 2), b = noise(size_t(g.cout), 3);
  std::vector<double> out(size_t(g.cout * g.voxels()));
  for (auto _ : state) {
    if constexpr (Fast) k::conv3d_forward(g, in.data(), w.data(), b.data(), out.data());
    else k::ref::conv3d_forward(g, in.data(), w.data(), b.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Fast>
void BM_conv3d_backward(benchmark::State& state) {
  set_threads(state);
  const auto& g = kConv;
  auto in = noise(size_t(g.cin * g.voxels()), 1), w = noise(size_t(g.cout * g.cin * 27), 2);
  auto go = noise(size_t(g.cout * g.voxels()), 4);
  std::vector<double> gi(in.size()), gw(w.size()), gb(size_t(g.cout));
  for (auto _ : state) {
    if constexpr (Fast) k::conv3d_backward(g, in.data(), w.data(), go.data(), gi.data(), gw.data(), gb.data());
    else k::ref::conv3d_backward(g, in.data(), w.data(), go.data(), gi.data(), gw.data(), gb.data());
    benchmark::DoNotOptimize(gi.data());
  }
}

template <bool Fast>
void BM_correlation3d(benchmark::State& state) {
  set_threads(state);
  const auto& g = kCorr;
  const size_t n = size_t(g.channels * g.voxels());
  auto f1 = noise(n, 5), f2 = noise(n, 6);
  std::vector<double> out(size_t(27 * g.voxels()));
  for (auto _ : state) {
    if constexpr (Fast) k::correlation3d_forward(g, 3, f1.data(), f2.data(), out.data());
    else k::ref::correlation3d_forward(g, 3, f1.data(), f2.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Fast>
void BM_token_mix_backward(benchmark::State& state) {
  set_threads(state);
  const auto& g = kTok;
  const size_t n = size_t(g.windows * g.tokens * g.channels);
  auto z = noise(n, 7), w = noise(size_t(g.tokens * g.tokens), 8), go = noise(n, 9);
  std::vector<double> gz(n), gw(w.size()), gb(size_t(g.tokens));
  for (auto _ : state) {
    if constexpr (Fast) k::token_mix_backward(g, z.data(), w.data(), go.data(), gz.data(), gw.data(), gb.data());
    else k::ref::token_mix_backward(g, z.data(), w.data(), go.data(), gz.data(), gw.data(), gb.data());
    benchmark::DoNotOptimize(gz.data());
  }
}

template <bool Fast>
void BM_warp_trilinear(benchmark::State& state) {
  set_threads(state);
  const auto& g = kWarp;
  auto x = noise(size_t(g.voxels()), 10), psi = noise(size_t(3 * g.voxels()), 11);
  for (double& v : psi) v *= 4.0;
  std::vector<double> out(x.size());
  for (auto _ : state) {
    if constexpr (Fast) k::warp_trilinear_forward(g, x.data(), psi.data(), out.data());
    else k::ref::warp_trilinear_forward(g, x.data(), psi.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void naive_gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C) {
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      double s = C[i * N + j];
      for (int64_t p = 0; p < K; ++p) s += A[i * K + p] * B[p * N + j];
      C[i * N + j] = s;
    }
}

template <bool Fast>
void BM_gemm_nn(benchmark::State& state) {
  set_threads(state);
  const int64_t M = 125, N = 512, K = 125;
  auto a = noise(size_t(M * K), 12), b = noise(size_t(K * N), 13);
  std::vector<double> c(size_t(M * N));
  for (auto _ : state) {
    if constexpr (Fast) k::gemm_nn(M, N, K, a.data(), K, b.data(), N, c.data(), N);
    else naive_gemm_nn(M, N, K, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
}

// Arg: OpenMP thread count for the fast kernels (0 = runtime default).
#define CORRMLP_PAIR(fn)                                  \
  BENCHMARK(fn<true>)->Name(#fn "/omp")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond); \
  BENCHMARK(fn<false>)->Name(#fn "/serial_ref")->Arg(0)->Unit(benchmark::kMillisecond)

CORRMLP_PAIR(BM_conv3d_forward);
CORRMLP_PAIR(BM_conv3d_backward);
CORRMLP_PAIR(BM_correlation3d);
CORRMLP_PAIR(BM_token_mix_backward);
CORRMLP_PAIR(BM_warp_trilinear);
CORRMLP_PAIR(BM_gemm_nn);

}  // namespace

BENCHMARK_MAIN();
