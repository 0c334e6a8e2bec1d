#include <benchmark/benchmark.h>

#include <memory>
#include <numeric>

#include "calf/data.hpp"
#include "calf/pca.hpp"
#include "calf/trainer.hpp"

using namespace calf;

namespace {

struct Fixture {
  CalfModel<float> model;
  WindowSet windows;
};

Fixture make_fixture(std::size_t width) {
  BackboneConfig bc;
  bc.layers = 2;
  bc.width = width;
  bc.heads = 4;
  bc.vocab_size = 1000;
  bc.max_positions = 64;
  auto backbone = std::make_shared<const Backbone<float>>(random_backbone<float>(bc, 1));
  auto principal = extract_principal_embeddings(backbone->token_embedding, 32);
  ModelConfig mc;
  mc.backbone = bc;
  mc.input_len = 96;
  mc.horizon = 24;
  SyntheticSpec s;
  s.rows = 600;
  return {make_model<float>(mc, backbone, principal, 2), windows(synthetic_series(s), WindowSpec{96, 24})};
}

Batch<float> batch_of(const WindowSet& w, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch<float>(w, idx, NormMode::instance, 1);
}

void BM_Predict(benchmark::State& state) {
  auto f = make_fixture(64);
  auto batch = batch_of(f.windows, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(predict(f.model, batch.input, batch.channels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Predict)->Arg(1)->Arg(32);

void BM_TrainStep(benchmark::State& state) {
  auto f = make_fixture(static_cast<std::size_t>(state.range(0)));
  auto batch = batch_of(f.windows, 32);
  TrainConfig cfg;
  Adam<float> opt(cfg.adam);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(f.model, batch, cfg, opt));
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_PrincipalExtraction(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  auto dict = Tensor<double>::randn({2000, width}, rng, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(extract_principal_embeddings(dict, width / 2));
}
BENCHMARK(BM_PrincipalExtraction)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
