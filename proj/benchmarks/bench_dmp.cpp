#include <benchmark/benchmark.h>

#include "lcms/pipeline.hpp"

using namespace lcms;

namespace {

dmp::Trajectory generator_demo() { return pipeline::generate_sample(0, pipeline::GenerateOptions{}).trajectory; }

void BM_Rollout(benchmark::State& state) {
  dmp::DmpConfig c;
  c.substeps = static_cast<int>(state.range(0));
  const auto basis = dmp::build_basis(c);
  const auto params = dmp::fit(generator_demo(), c, basis);
  for (auto _ : state) benchmark::DoNotOptimize(dmp::rollout(params, c, basis));
}
BENCHMARK(BM_Rollout)->Arg(5)->Arg(10);

void BM_Fit(benchmark::State& state) {
  const dmp::DmpConfig c;
  const auto basis = dmp::build_basis(c);
  const auto demo = generator_demo();
  for (auto _ : state) benchmark::DoNotOptimize(dmp::fit(demo, c, basis));
}
BENCHMARK(BM_Fit);

void BM_GenerateSample(benchmark::State& state) {
  const pipeline::GenerateOptions o;
  int i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(pipeline::generate_sample(i++, o));
}
BENCHMARK(BM_GenerateSample)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
