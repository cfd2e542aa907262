#include <benchmark/benchmark.h>

#include <vector>

#include "bssard/analysis.hpp"
#include "bssard/backbone.hpp"
#include "bssard/synthdata.hpp"
#include "bssard/trainer.hpp"

using namespace bssard;

namespace {

CorpusConfig small_corpus() {
  CorpusConfig c;
  c.sizes = {64, 16, 16, 16};
  c.seed = 5;
  c.rules = default_rules(c, 0.9);
  return c;
}

const Corpus& corpus() {
  static const Corpus c = generate_corpus(small_corpus());
  return c;
}

void BM_BackbonePredict(benchmark::State& state) {
  TrainConfig cfg = resolve_dimensions(TrainConfig{}, corpus().config);
  Rng rng(1);
  Backbone<float> model(cfg.model, rng);
  const auto& s = *corpus().split(Split::kTrain).front();
  const GroundingInput in{&s.video, s.query, s.n_true};
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(in));
}
BENCHMARK(BM_BackbonePredict)->Unit(benchmark::kMicrosecond);

// One optimizer step on a batch of 16 for each phase the mode uses.
void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.mode = static_cast<TrainMode>(state.range(0));
  cfg = resolve_dimensions(cfg, corpus().config);
  Trainer trainer(cfg);
  const auto train = corpus().split(Split::kTrain);
  const std::vector<const GroundingSample*> batch(train.begin(), train.begin() + 16);
  const Phase phase = cfg.mode == TrainMode::kBaseline ? Phase::kBaseline : Phase::kVisual;
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch, phase));
  state.SetLabel(std::string(to_string(cfg.mode)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(TrainMode::kBaseline))
    ->Arg(static_cast<int>(TrainMode::kBssard))
    ->Unit(benchmark::kMillisecond);

void BM_KdeDensity(benchmark::State& state) {
  Rng rng(3);
  std::vector<MomentPoint> pts(static_cast<std::size_t>(state.range(0)));
  for (auto& p : pts) p = {rng.uniform(), rng.uniform()};
  for (auto _ : state) benchmark::DoNotOptimize(kde_density(pts, std::nullopt, 100));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KdeDensity)->RangeMultiplier(4)->Range(64, 4096)->Unit(benchmark::kMillisecond)->Complexity(benchmark::oN);

}  // namespace
BENCHMARK_MAIN();
