#include <benchmark/benchmark.h>

#include "symcad/nnet.hpp"
#include "symcad/rng.hpp"

using namespace symcad;
using namespace symcad::nnet;

namespace {

Tensor<float> random_tensor(int n, int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(n, c, h, w);
  for (auto& v : t.v) v = static_cast<float>(rng.uniform());
  return t;
}

NetworkSpec desk_spec(ModelKind kind) {
  NetworkSpec spec;
  spec.kind = kind;
  spec.conv_filters = {8, 16, 32};
  spec.dense_units = {64, 64, 2};
  spec.input_size_px = 96;
  spec.validate();
  return spec;
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto x = random_tensor(batch, 8, 94, 94, 1);
  const auto w = random_tensor(16, 8, 3, 3, 2);
  const Tensor<float> b(16, 1, 1, 1, 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, w, b));
  const double flops = 2.0 * batch * 16 * 8 * 9 * 92 * 92;
  state.counters["GFLOP/s"] =
      benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(64);

static void BM_Conv2dBackward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto x = random_tensor(batch, 8, 94, 94, 3);
  const auto w = random_tensor(16, 8, 3, 3, 4);
  const Tensor<float> b(16, 1, 1, 1, 0.0f);
  const auto y = conv2d_forward(x, w, b);
  const auto dy = random_tensor(y.shape[0], y.shape[1], y.shape[2], y.shape[3], 5);
  for (auto _ : state) {
    Tensor<float> dx, dw, db;
    conv2d_backward(x, w, dy, &dx, &dw, &db);
    benchmark::DoNotOptimize(dx);
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(64);

static void BM_MaxPool(benchmark::State& state) {
  const auto x = random_tensor(64, 16, 44, 44, 6);
  for (auto _ : state) {
    Tensor<int32_t> amax;
    benchmark::DoNotOptimize(maxpool_forward(x, 3, 2, &amax));
  }
}
BENCHMARK(BM_MaxPool);

static void BM_BaselineForward(benchmark::State& state) {
  const auto spec = desk_spec(ModelKind::baseline);
  Rng rng(7);
  const auto params = glorot_init<float>(spec, rng);
  const auto x = random_tensor(64, 1, 96, 96, 8);
  for (auto _ : state) benchmark::DoNotOptimize(baseline_forward(spec, params, x, Mode::infer));
  state.counters["samples/s"] =
      benchmark::Counter(64, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_BaselineForward);

static void BM_SymmetryTrainStep(benchmark::State& state) {
  const auto spec = desk_spec(ModelKind::symmetry);
  Rng rng(9);
  auto params = glorot_init<float>(spec, rng);
  const auto x1 = random_tensor(64, 1, 96, 96, 10);
  const auto x2 = random_tensor(64, 1, 96, 96, 11);
  std::vector<int> labels(64);
  for (int i = 0; i < 64; ++i) labels[i] = i % 2;
  Rng drop(12);
  for (auto _ : state) {
    ForwardCache<float> cache;
    symmetry_forward(spec, params, x1, x2, Mode::train, &drop, &cache);
    benchmark::DoNotOptimize(network_backward(spec, params, cache, labels));
  }
  state.counters["steps/s"] = benchmark::Counter(1, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_SymmetryTrainStep);
