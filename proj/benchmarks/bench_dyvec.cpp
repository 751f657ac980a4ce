#include "dyvec/dyvec.hpp"
#include "dyvec/intervene.hpp"
#include "dyvec/optimize.hpp"
#include "dyvec/taskgen.hpp"

#include <benchmark/benchmark.h>

using namespace dyvec;

namespace {

const model::Model& bench_model() {
  static const model::Model m(model::ModelConfig{});
  return m;
}

const taskgen::TaskSpec& bench_task() {
  static const auto t =
      taskgen::make_task(taskgen::Family::kBijection, 1, taskgen::Alphabets::split({}, 30, 30));
  return t;
}

const taskgen::ExampleSet& bench_examples() {
  static const auto e = taskgen::sample_examples(bench_task(), 8, 0);
  return e;
}

const SegmentGrid& bench_grid() {
  static const auto g = segment(
      extract::aggregate(extract::extract_latents(bench_model(), taskgen::build_rotation_prompts(bench_examples()),
                                                  extract::Source::kSar)),
      4);
  return g;
}

void BM_ZeroShotPredict(benchmark::State& state) {
  Token q = 4;
  for (auto _ : state) {
    benchmark::DoNotOptimize(intervene::infer_zero_shot(bench_model(), q));
    q = q == 33 ? 4 : q + 1;
  }
}
BENCHMARK(BM_ZeroShotPredict);

void BM_IclPredict(benchmark::State& state) {
  const auto demos = taskgen::sample_examples(bench_task(), static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(intervene::infer_icl(bench_model(), demos.examples, 4));
}
BENCHMARK(BM_IclPredict)->Arg(4)->Arg(8)->Arg(16);

void BM_DyVecPredict(benchmark::State& state) {
  const auto art = assemble(bench_grid(), all_positions(4, 4), Strategy{0, 1});
  intervene::MethodSpec spec;
  spec.method = intervene::Method::kDyVec;
  spec.artifact = &art;
  const auto predict = intervene::make_predictor(bench_model(), spec);
  for (auto _ : state) benchmark::DoNotOptimize(predict(4));
}
BENCHMARK(BM_DyVecPredict);

void BM_ExtractRotation(benchmark::State& state) {
  const auto prompts = taskgen::build_rotation_prompts(bench_examples());
  for (auto _ : state) {
    benchmark::DoNotOptimize(extract::extract_latents(bench_model(), prompts, extract::Source::kSar));
  }
}
BENCHMARK(BM_ExtractRotation);

void BM_ReinforceStep(benchmark::State& state) {
  const opt::InjectionObjective objective(bench_model(), bench_grid(), Strategy{0, 1}, bench_examples());
  opt::PolicyOptions options;
  auto policy = opt::BernoulliPolicy::make(4, 4, options);
  std::mt19937_64 rng(0);
  int step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(opt::reinforce_step(policy, std::cref(objective), rng, ++step));
}
BENCHMARK(BM_ReinforceStep);

}  // namespace
BENCHMARK_MAIN();
