// OpenMP kernels against the serial reference on network-sized problems.
// Threads follow OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "volgen/kernels.hpp"

using namespace volgen;

namespace {

std::vector<float> random_vec(int64_t n, uint32_t seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = d(gen);
  return v;
}

// Args: channels, spatial extent (cube), kernel size.
Conv3dGeometry geometry(const benchmark::State& st) {
  const int64_t c = st.range(0), s = st.range(1), k = st.range(2);
  return Conv3dGeometry::same(4, c, c, {s, s, s}, {k, k, k});
}

void set_flops(benchmark::State& st, const Conv3dGeometry& g) {
  const double macs = static_cast<double>(g.output_numel()) * (g.in_channels / g.groups) *
                      g.kernel[0] * g.kernel[1] * g.kernel[2];
  st.counters["GFLOP/s"] = benchmark::Counter(2 * macs, benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& st) {
  const auto g = geometry(st);
  auto x = random_vec(g.input_numel(), 1), w = random_vec(g.weight_numel(), 2);
  std::vector<float> y(static_cast<size_t>(g.output_numel()));
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::conv3d_forward<float>(g, x, w, y);
    else
      reference::conv3d_forward<float>(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  set_flops(st, g);
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& st) {
  const auto g = geometry(st);
  auto gy = random_vec(g.output_numel(), 3), w = random_vec(g.weight_numel(), 2);
  std::vector<float> gx(static_cast<size_t>(g.input_numel()));
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::conv3d_backward_input<float>(g, gy, w, gx);
    else
      reference::conv3d_backward_input<float>(g, gy, w, gx);
    benchmark::DoNotOptimize(gx.data());
  }
  set_flops(st, g);
}

template <bool Parallel>
void BM_ConvBackwardWeight(benchmark::State& st) {
  const auto g = geometry(st);
  auto x = random_vec(g.input_numel(), 1), gy = random_vec(g.output_numel(), 3);
  std::vector<float> gw(static_cast<size_t>(g.weight_numel()));
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::conv3d_backward_weight<float>(g, x, gy, gw);
    else
      reference::conv3d_backward_weight<float>(g, x, gy, gw);
    benchmark::DoNotOptimize(gw.data());
  }
  set_flops(st, g);
}

template <bool Parallel>
void BM_Matmul(benchmark::State& st) {
  const int64_t n = st.range(0);
  auto a = random_vec(n * n, 4), b = random_vec(n * n, 5);
  std::vector<float> c(static_cast<size_t>(n * n));
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::matmul<float>(n, n, n, a, b, c);
    else
      reference::matmul<float>(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 8, 3})->Args({16, 16, 3})->Args({8, 32, 3})->Args({32, 8, 1})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvBackwardInput<true>)->Name("conv_backward_input/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackwardInput<false>)->Name("conv_backward_input/reference")->Apply(conv_args);
BENCHMARK(BM_ConvBackwardWeight<true>)->Name("conv_backward_weight/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackwardWeight<false>)->Name("conv_backward_weight/reference")->Apply(conv_args);
BENCHMARK(BM_Matmul<true>)->Name("matmul/parallel")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Matmul<false>)->Name("matmul/reference")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
