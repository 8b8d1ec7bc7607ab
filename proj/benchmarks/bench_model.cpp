#include <benchmark/benchmark.h>

#include <vector>

#include "lcms/pipeline.hpp"

using namespace lcms;

namespace {

struct Setup {
  model::Model model;
  std::vector<model::Example> batch;
  sim::Image image;

  explicit Setup(int batch_size) {
    const model::ModelConfig c;
    model = pipeline::untrained_model(c, 1, pipeline::make_embeddings(lang::Lexicon::standard(), c.word_dim));
    pipeline::GenerateOptions o;
    for (int i = 0; i < batch_size; ++i) {
      const auto s = pipeline::generate_sample(i, o);
      model::Example ex;
      ex.sentence = model.embed(s.record.sentence);
      ex.image = s.image;
      ex.label.theta = s.record.label.weights;
      ex.label.goal = s.record.label.goal;
      batch.push_back(std::move(ex));
    }
    image = batch.front().image;
  }
};

void BM_Forward(benchmark::State& state) {
  const Setup s(1);
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(s.model.forward("move towards the red bowl", s.image, false, rng));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)));
  std::vector<const model::Example*> ptrs;
  for (const auto& e : s.batch) ptrs.push_back(&e);
  auto adam = model::AdamState::zeros(s.model.params);
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(model::train_step(ptrs, s.model.params, adam, {}, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_McDropout(benchmark::State& state) {
  const Setup s(1);
  const auto arm = sim::ArmModel::standard();
  Rng rng(3);
  for (auto _ : state)
    benchmark::DoNotOptimize(model::mc_dropout_goals(s.model, "move towards the red bowl", s.image, 50, rng, arm));
}
BENCHMARK(BM_McDropout)->Unit(benchmark::kMillisecond);

}  // namespace
