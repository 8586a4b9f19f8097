// SPDX-License-Identifier: Apache-2.0
//
// Serial reference loops against the blocked/OpenMP kernels.
// Run with --benchmark_filter=... ; the thread argument selects the worker count.

#include <benchmark/benchmark.h>

#include <vector>

#include "cvm/core/rng.hpp"
#include "cvm/kernels/kernels.hpp"

namespace k = cvm::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  cvm::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

void BM_GemmReference(benchmark::State& st) {
  const std::int64_t n = st.range(0);
  auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    k::reference::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2 * n * n * n);
}

void BM_GemmParallel(benchmark::State& st) {
  const std::int64_t n = st.range(0);
  k::set_num_threads(static_cast<int>(st.range(1)));
  auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    k::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2 * n * n * n);
  k::set_num_threads(1);
}

// Cost-volume shaped workload: C channels, P pixels, D depth planes.
struct SweepData {
  std::int64_t C = 32, H = 24, W = 32, D = 32;
  std::vector<double> ref, src, grid, out;
  SweepData() {
    const std::int64_t P = H * W;
    ref = random_vec(C * P, 3);
    src = random_vec(C * P, 4);
    cvm::Rng rng(5);
    grid.resize(2 * D * P);
    for (std::int64_t i = 0; i < D * P; ++i) {
      grid[2 * i] = rng.uniform(-2, W + 1);
      grid[2 * i + 1] = rng.uniform(-2, H + 1);
    }
    out.resize(D * P);
  }
};

void BM_PlaneSweepReference(benchmark::State& st) {
  SweepData s;
  for (auto _ : st) {
    k::reference::plane_sweep_correlation(s.C, s.H * s.W, s.D, s.ref.data(), s.H, s.W, s.src.data(), s.grid.data(),
                                          1.0, s.out.data(), nullptr);
    benchmark::DoNotOptimize(s.out.data());
  }
}

void BM_PlaneSweepParallel(benchmark::State& st) {
  SweepData s;
  k::set_num_threads(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    k::plane_sweep_correlation(s.C, s.H * s.W, s.D, s.ref.data(), s.H, s.W, s.src.data(), s.grid.data(), 1.0,
                               s.out.data(), nullptr);
    benchmark::DoNotOptimize(s.out.data());
  }
  k::set_num_threads(1);
}

void BM_ConvDirect(benchmark::State& st) {
  const k::Conv2dGeometry g{16, 32, 32, 3, 3, 1, 1};
  const std::int64_t O = 16;
  auto x = random_vec(16 * 32 * 32, 6), w = random_vec(O * 16 * 9, 7);
  std::vector<double> y(O * g.out_h() * g.out_w());
  for (auto _ : st) {
    k::reference::conv2d(1, O, g, x.data(), w.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ConvIm2colGemm(benchmark::State& st) {
  const k::Conv2dGeometry g{16, 32, 32, 3, 3, 1, 1};
  const std::int64_t O = 16, P = g.out_h() * g.out_w(), CK = 16 * 9;
  k::set_num_threads(static_cast<int>(st.range(0)));
  auto x = random_vec(16 * 32 * 32, 6), w = random_vec(O * CK, 7);
  std::vector<double> cols(CK * P), y(O * P);
  for (auto _ : st) {
    k::im2col(g, x.data(), cols.data());
    k::gemm(false, false, O, P, CK, w.data(), cols.data(), y.data(), false);
    benchmark::DoNotOptimize(y.data());
  }
  k::set_num_threads(1);
}

}  // namespace

BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmParallel)->Args({64, 1})->Args({256, 1})->Args({256, 2})->Args({256, 4});
BENCHMARK(BM_PlaneSweepReference);
BENCHMARK(BM_PlaneSweepParallel)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_ConvDirect);
BENCHMARK(BM_ConvIm2colGemm)->Arg(1)->Arg(2);

BENCHMARK_MAIN();
