#include <benchmark/benchmark.h>

#include "symcad/eval.hpp"
#include "symcad/rng.hpp"

using namespace symcad;

namespace {

eval::EvalData synthetic_eval(int n_exams, uint64_t seed) {
  Rng rng(seed);
  eval::EvalData data;
  data.models = {"m"};
  for (int e = 0; e < n_exams; ++e) {
    eval::EvalExam ex;
    ex.exam_id = "E" + std::to_string(e);
    for (int i = 0; i < 4; ++i) {
      eval::EvalImage img;
      img.image_id = ex.exam_id + "_" + std::to_string(i);
      img.lesion_count = rng.bernoulli(0.3) ? 1 : 0;
      if (img.lesion_count)
        img.cands.push_back({true, 0, false, {0.5 + 0.5 * rng.uniform()}});
      const int negs = 2 + static_cast<int>(rng.below(5));
      for (int k = 0; k < negs; ++k) img.cands.push_back({false, -1, false, {0.8 * rng.uniform()}});
      ex.images.push_back(std::move(img));
    }
    data.exams.push_back(std::move(ex));
  }
  return data;
}

}  // namespace

static void BM_RocAuc(benchmark::State& state) {
  const auto data = synthetic_eval(static_cast<int>(state.range(0)), 1);
  eval::ExamSample all;
  for (const auto& e : data.exams) all.push_back(&e);
  const auto cands = eval::flatten_candidates(all, 0);
  for (auto _ : state) benchmark::DoNotOptimize(eval::roc_auc(cands));
  state.counters["cands"] = static_cast<double>(cands.size());
}
BENCHMARK(BM_RocAuc)->Arg(100)->Arg(500);

static void BM_FrocExam(benchmark::State& state) {
  const auto data = synthetic_eval(500, 2);
  eval::ExamSample all;
  for (const auto& e : data.exams) all.push_back(&e);
  for (auto _ : state) {
    const auto units = eval::make_units(all, 0, eval::FrocUnit::exam);
    benchmark::DoNotOptimize(eval::cpm(eval::froc(units, eval::FrocUnit::exam)));
  }
}
BENCHMARK(BM_FrocExam);

static void BM_BootstrapAucCI(benchmark::State& state) {
  const auto data = synthetic_eval(500, 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(eval::bootstrap_ci(data, eval::metric_auc(0), 1000, 0.95, 4));
}
BENCHMARK(BM_BootstrapAucCI);

BENCHMARK_MAIN();
