// Serial reference vs OpenMP path for the kernels that dominate a training
// step. Shapes match the default model (d = 64, 4 heads, ff 256, B = 32,
// max_len 32). Run with OMP_NUM_THREADS to vary the thread count.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "cmlm/kernels.hpp"

using cmlm::kernels::Exec;

namespace {

std::vector<float> filled(std::size_t n, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

// range(0): 0 serial, 1 parallel; range(1..3): m, n, k.
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(1)), n = static_cast<std::size_t>(state.range(2)),
             k = static_cast<std::size_t>(state.range(3));
  const auto a = filled(m * k, 1), b = filled(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    cmlm::kernels::gemm(exec_of(state), false, false, m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * n * k));
  state.SetLabel(exec_of(state) == Exec::serial ? "serial" : "parallel");
}

void BM_Attention(benchmark::State& state) {
  const cmlm::kernels::AttentionShape shape{static_cast<std::size_t>(state.range(1)),
                                            static_cast<std::size_t>(state.range(2)), 4, 16};
  const std::size_t rows = shape.batch * shape.seq, w = shape.width();
  const auto q = filled(rows * w, 3), k = filled(rows * w, 4), v = filled(rows * w, 5), dout = filled(rows * w, 6);
  const std::vector<std::uint8_t> mask(rows, 1);
  std::vector<float> probs(shape.batch * shape.heads * shape.seq * shape.seq), out(rows * w), dq(rows * w),
      dk(rows * w), dv(rows * w);
  for (auto _ : state) {
    cmlm::kernels::attention_forward(exec_of(state), shape, q.data(), k.data(), v.data(), mask.data(), probs.data(),
                                     out.data());
    cmlm::kernels::attention_backward(exec_of(state), shape, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                                      dq.data(), dk.data(), dv.data());
    benchmark::DoNotOptimize(dv.data());
  }
  state.SetLabel(exec_of(state) == Exec::serial ? "serial" : "parallel");
}

void BM_Cosine(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto a = filled(n * 64, 7), b = filled(n * 64, 8);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    cmlm::kernels::cosine_matrix(exec_of(state), n, n, 64, a.data(), b.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetLabel(exec_of(state) == Exec::serial ? "serial" : "parallel");
}

}  // namespace

// Token-level projections, the FFN, the tied MLM output and a large square.
BENCHMARK(BM_Gemm)
    ->ArgsProduct({{0, 1}, {1024}, {64}, {64}})
    ->ArgsProduct({{0, 1}, {1024}, {256}, {64}})
    ->ArgsProduct({{0, 1}, {320}, {4096}, {64}})
    ->ArgsProduct({{0, 1}, {512}, {512}, {512}});
BENCHMARK(BM_Attention)->ArgsProduct({{0, 1}, {32}, {32, 64}});
BENCHMARK(BM_Cosine)->ArgsProduct({{0, 1}, {1000}});

BENCHMARK_MAIN();
