#include <benchmark/benchmark.h>

#include <random>

#include "calf/ops.hpp"

using namespace calf;

namespace {

Tensor<float> random(std::size_t r, std::size_t c, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  auto t = Tensor<float>::randn({r, c}, rng, 1.0f);
  t.set_requires_grad(grad);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random(n, n, 1), b = random(n, n, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_LinearBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto x = random(n, 64, 3, true), w = random(64, 64, 4, true), b = random(1, 64, 5, true);
  for (auto _ : state) {
    x.clear_grad();
    w.clear_grad();
    b.clear_grad();
    backward(sum(linear(x, w, b)));
  }
}
BENCHMARK(BM_LinearBackward)->Arg(96)->Arg(384);

void BM_LayerNormGelu(benchmark::State& state) {
  auto x = random(384, 64, 6);
  Tensor<float> gain({64}, 1.0f), bias({64}, 0.0f);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(gelu(layer_norm(x, gain, bias)));
}
BENCHMARK(BM_LayerNormGelu);

// Causal self-attention over batches of C-token groups, as in the backbone.
void BM_GroupedCausalAttention(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const std::size_t rows = 32 * channels;
  auto q = random(rows, 64, 7), k = random(rows, 64, 8), v = random(rows, 64, 9);
  AttentionSpec spec{.heads = 4, .scale = 0.25, .query_group = channels, .key_group = channels, .causal = true};
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(attention(q, k, v, spec));
}
BENCHMARK(BM_GroupedCausalAttention)->Arg(3)->Arg(7)->Arg(21);

// Cross-attention of every token over a shared principal dictionary.
void BM_DictionaryAttention(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  auto q = random(96, 64, 10), k = random(d, 64, 11), v = random(d, 64, 12);
  AttentionSpec spec{.heads = 4, .scale = 0.25};
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(attention(q, k, v, spec));
}
BENCHMARK(BM_DictionaryAttention)->Arg(32)->Arg(500);

}  // namespace
