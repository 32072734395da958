// Serial reference versus OpenMP gemm at model-relevant shapes.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "ecdiff/kernels.hpp"

namespace {

using ecdiff::MatrixD;
using ecdiff::kernels::Op;

MatrixD random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixD m(r, c);
  for (auto& v : m.flat()) v = u(rng);
  return m;
}

// Args: rows of A, inner dimension, columns of B.
void shape_args(benchmark::internal::Benchmark* b) {
  b->Args({90, 90, 187})     // propagation times features at N=90, q=187
      ->Args({90, 192, 192})  // linear layer at full width
      ->Args({187, 90, 187})  // temporal attention scores
      ->Args({256, 256, 256});
}

void BM_GemmSerial(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  const MatrixD a = random_matrix(m, k, 1), b = random_matrix(k, n, 2);
  MatrixD c(m, n);
  for (auto _ : state) {
    ecdiff::kernels::serial::gemm(a, Op::None, b, Op::None, c);
    benchmark::DoNotOptimize(c.flat().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

void BM_GemmParallel(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  const MatrixD a = random_matrix(m, k, 1), b = random_matrix(k, n, 2);
  MatrixD c(m, n);
  for (auto _ : state) {
    ecdiff::kernels::parallel::gemm(a, Op::None, b, Op::None, c);
    benchmark::DoNotOptimize(c.flat().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
  state.counters["threads"] = omp_get_max_threads();
}

void BM_GemmParallelTransposedB(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  const MatrixD a = random_matrix(m, k, 1), b = random_matrix(n, k, 2);
  MatrixD c(m, n);
  for (auto _ : state) {
    ecdiff::kernels::parallel::gemm(a, Op::None, b, Op::Transpose, c);
    benchmark::DoNotOptimize(c.flat().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

BENCHMARK(BM_GemmSerial)->Apply(shape_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemmParallel)->Apply(shape_args)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_GemmParallelTransposedB)->Apply(shape_args)->Unit(benchmark::kMicrosecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
