// Parallel kernels against their serial references, at the shapes a desk
// training step actually uses.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "datn/kernels.hpp"
#include "datn/reference.hpp"

namespace {

std::vector<float> random_values(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  auto a = random_values(m * k, 1), b = random_values(k * n, 2);
  std::vector<float> c(m * n);
  const datn::MatrixRef<const float> av{a.data(), m, k, k}, bv{b.data(), k, n, n};
  for (auto _ : state) {
    if constexpr (Parallel) {
      datn::kernels::gemm<float>(datn::Trans::no, datn::Trans::no, 1.f, av, bv, 0.f,
                                 datn::matrix_ref(c.data(), m, n));
    } else {
      datn::reference::gemm<float>(datn::Trans::no, datn::Trans::no, 1.f, av, bv, 0.f,
                                   datn::matrix_ref(c.data(), m, n));
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * m * n * k, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::OneK::kIs1000);
}

template <bool Parallel>
void BM_SoftmaxCausal(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const auto src = random_values(l * l, 3);
  std::vector<float> s(l * l);
  for (auto _ : state) {
    s = src;
    if constexpr (Parallel) {
      datn::kernels::softmax_causal_rows<float>(datn::matrix_ref(s.data(), l, l));
    } else {
      datn::reference::softmax_causal_rows<float>(datn::matrix_ref(s.data(), l, l));
    }
    benchmark::DoNotOptimize(s.data());
  }
}

template <bool Parallel>
void BM_RmsNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 64;
  auto x = random_values(rows * cols, 4), g = random_values(cols, 5);
  std::vector<float> y(rows * cols), inv(rows);
  for (auto _ : state) {
    if constexpr (Parallel) {
      datn::kernels::rms_norm_rows<float>(x, g, 1e-6f, y, inv, cols);
    } else {
      datn::reference::rms_norm_rows<float>(x, g, 1e-6f, y, inv, cols);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_CrossEntropy(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t vocab = 257;
  auto logits = random_values(rows * vocab, 6);
  std::vector<int> targets(rows);
  for (std::size_t i = 0; i < rows; ++i) targets[i] = static_cast<int>(i % vocab);
  std::vector<double> loss(rows);
  std::vector<float> grad(rows * vocab);
  for (auto _ : state) {
    if constexpr (Parallel) {
      datn::kernels::cross_entropy_rows<float>(logits, targets, vocab, loss, grad, 1.f);
    } else {
      datn::reference::cross_entropy_rows<float>(logits, targets, vocab, loss, grad, 1.f);
    }
    benchmark::DoNotOptimize(grad.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Args({4096, 64, 64})->Args({4096, 257, 64})->Args({256, 256, 32});
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Args({4096, 64, 64})->Args({4096, 257, 64})->Args({256, 256, 32});
BENCHMARK(BM_SoftmaxCausal<true>)->Name("softmax_causal/parallel")->Arg(256);
BENCHMARK(BM_SoftmaxCausal<false>)->Name("softmax_causal/reference")->Arg(256);
BENCHMARK(BM_RmsNorm<true>)->Name("rms_norm/parallel")->Arg(4096);
BENCHMARK(BM_RmsNorm<false>)->Name("rms_norm/reference")->Arg(4096);
BENCHMARK(BM_CrossEntropy<true>)->Name("cross_entropy/parallel")->Arg(4096);
BENCHMARK(BM_CrossEntropy<false>)->Name("cross_entropy/reference")->Arg(4096);

BENCHMARK_MAIN();
