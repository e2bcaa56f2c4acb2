#include <benchmark/benchmark.h>

#include "symcad/candidates.hpp"
#include "symcad/phantom.hpp"

using namespace symcad;

namespace {

phantom::BreastImage desk_image(uint64_t seed) {
  phantom::RenderParams params;
  params.rows = 600;
  params.cols = 450;
  phantom::Lesion les;
  les.row = 300;
  les.col = 180;
  les.radius_px = 35;
  les.contrast = 0.3;
  les.shape_seed = seed;
  Rng tex(seed), asym(seed + 1);
  phantom::BreastImage img;
  img.image_id = "bench";
  img.pixels = phantom::render_breast(params, tex, asym, {les});
  img.pixel_spacing_cm = 0.02;
  return img;
}

}  // namespace

static void BM_RenderBreast(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(desk_image(state.iterations()));
}
BENCHMARK(BM_RenderBreast);

static void BM_MassLikelihood(benchmark::State& state) {
  const auto img = desk_image(42);
  candidates::DetectorParams det;
  det.radius_min_px = 18;
  det.radius_max_px = 55;
  det.radius_step = 3;
  for (auto _ : state) benchmark::DoNotOptimize(candidates::mass_likelihood(img, det));
}
BENCHMARK(BM_MassLikelihood);

static void BM_ThresholdCandidates(benchmark::State& state) {
  const auto img = desk_image(43);
  candidates::DetectorParams det;
  det.radius_min_px = 18;
  det.radius_max_px = 55;
  det.radius_step = 3;
  const auto map = candidates::mass_likelihood(img, det);
  for (auto _ : state)
    benchmark::DoNotOptimize(candidates::threshold_candidates(map, 0.3, 70));
}
BENCHMARK(BM_ThresholdCandidates);
