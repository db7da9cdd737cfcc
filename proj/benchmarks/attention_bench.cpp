#include <benchmark/benchmark.h>

#include "axiseg/flops.hpp"

// Wall-clock comparison of the two attention variants on the instrumented
// forward kernels. The multiply-add counters are reported as a complexity
// counter per iteration; assertions about them live in the test suite, not
// here (timings are hardware-dependent, counts are not).

namespace {

void BM_FullAttention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  double checksum = 0.0;
  axiseg::StageFlops flops{};
  for (auto _ : state) {
    flops = axiseg::instrumented_forward(axiseg::BenchVariant::Full2D, n, n, 16, 2, 42, &checksum);
    benchmark::DoNotOptimize(checksum);
  }
  state.counters["multiply_adds"] = static_cast<double>(flops.total());
  state.SetComplexityN(n);
}
BENCHMARK(BM_FullAttention)->RangeMultiplier(2)->Range(8, 64)->Complexity();

void BM_AxialPair(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  double checksum = 0.0;
  axiseg::StageFlops flops{};
  for (auto _ : state) {
    flops = axiseg::instrumented_forward(axiseg::BenchVariant::AxialPair, n, n, 16, 2, 42, &checksum);
    benchmark::DoNotOptimize(checksum);
  }
  state.counters["multiply_adds"] = static_cast<double>(flops.total());
  state.SetComplexityN(n);
}
BENCHMARK(BM_AxialPair)->RangeMultiplier(2)->Range(8, 64)->Complexity();

}  // namespace

BENCHMARK_MAIN();
