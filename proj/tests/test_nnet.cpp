#include "doctest.h"

#include <omp.h>

#include <cmath>
#include <filesystem>

#include "symcad/nnet.hpp"
#include "symcad/rng.hpp"

using namespace symcad;
using namespace symcad::nnet;

TEST_CASE("spec: paper configuration closes at 381 px and fails at 300 px") {
  auto spec = NetworkSpec::paper_baseline();
  CHECK(spec.conv_filters == std::vector<int>{16, 32, 32, 64, 64, 128, 128});
  CHECK(spec.dense_units == std::vector<int>{300, 300, 2});
  spec.validate();
  const auto trace = spec.spatial_trace();
  CHECK(trace.front() == 381);
  CHECK(trace.back() == 1);

  spec.input_size_px = 300;
  try {
    spec.validate();
    FAIL("expected spatial-arithmetic failure at 300 px");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("conv") != std::string::npos);
  }
}

TEST_CASE("spec: field validation") {
  NetworkSpec spec;
  spec.conv_kernel = 4;
  CHECK_THROWS(spec.validate());
  spec = NetworkSpec{};
  spec.dense_units = {300, 3};
  CHECK_THROWS(spec.validate());
  spec = NetworkSpec{};
  spec.dropout_rate = 1.0;
  CHECK_THROWS(spec.validate());
}

TEST_CASE("glorot: dense bound sqrt(6/302), zero biases, deterministic") {
  NetworkSpec spec;
  spec.kind = ModelKind::baseline;
  spec.conv_filters = {4};
  spec.dense_units = {300, 2};
  spec.input_size_px = 8;
  spec.validate();

  Rng rng(9);
  const auto p = glorot_init<double>(spec, rng);
  // Last dense layer is 300 -> 2.
  const double bound = std::sqrt(6.0 / 302.0);
  CHECK(bound == doctest::Approx(0.1410).epsilon(1e-3));
  double mean = 0.0;
  for (double v : p.head.back().w.v) {
    CHECK(std::abs(v) <= bound);
    mean += v;
  }
  mean /= static_cast<double>(p.head.back().w.size());
  CHECK(std::abs(mean) < 0.02);
  for (const auto& layer : p.head)
    for (double b : layer.b.v) CHECK(b == 0.0);
  for (double b : p.stream1[0].b.v) CHECK(b == 0.0);

  Rng rng2(9);
  const auto q = glorot_init<double>(spec, rng2);
  CHECK(q.head[0].w.v == p.head[0].w.v);
  CHECK(q.stream1[0].w.v == p.stream1[0].w.v);
}

TEST_CASE("conv2d: all-ones 3x3 kernel sums the window") {
  Tensor<double> x(1, 1, 3, 3, 1.0);
  Tensor<double> w(1, 1, 3, 3, 1.0);
  Tensor<double> b(1, 1, 1, 1, 0.0);
  const auto y = conv2d_forward(x, w, b);
  CHECK(y.shape == std::array<int, 4>{1, 1, 1, 1});
  CHECK(y.v[0] == 9.0);
}

TEST_CASE("conv2d: identity kernel crops the center") {
  Rng rng(3);
  Tensor<double> x(1, 1, 6, 6);
  for (auto& v : x.v) v = rng.uniform();
  Tensor<double> w(1, 1, 3, 3, 0.0);
  w.at(0, 0, 1, 1) = 1.0;
  Tensor<double> b(1, 1, 1, 1, 0.0);
  const auto y = conv2d_forward(x, w, b);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(y.at(0, 0, r, c) == x.at(0, 0, r + 1, c + 1));
}

TEST_CASE("conv2d: undersized input throws") {
  Tensor<double> x(1, 1, 2, 2, 1.0);
  Tensor<double> w(1, 1, 3, 3, 1.0);
  Tensor<double> b(1, 1, 1, 1, 0.0);
  CHECK_THROWS(conv2d_forward(x, w, b));
}

TEST_CASE("maxpool: constant input routes gradient to the first window element") {
  Tensor<double> x(1, 1, 5, 5, 0.7);
  Tensor<int32_t> amax;
  const auto y = maxpool_forward(x, 3, 2, &amax);
  CHECK(y.shape == std::array<int, 4>{1, 1, 2, 2});
  for (double v : y.v) CHECK(v == 0.7);
  CHECK(amax.at(0, 0, 0, 0) == 0);       // window (0..2, 0..2) -> flat 0
  CHECK(amax.at(0, 0, 0, 1) == 2);       // window (0..2, 2..4) -> flat 2
  CHECK(amax.at(0, 0, 1, 0) == 2 * 5);   // window (2..4, 0..2)
  CHECK(amax.at(0, 0, 1, 1) == 2 * 5 + 2);

  Tensor<double> dy(1, 1, 2, 2, 1.0);
  const auto dx = maxpool_backward(dy, amax, x.shape);
  CHECK(dx.at(0, 0, 0, 0) == 1.0);
  CHECK(dx.at(0, 0, 0, 2) == 1.0);
  CHECK(dx.at(0, 0, 2, 0) == 1.0);
  CHECK(dx.at(0, 0, 2, 2) == 1.0);
  double total = 0.0;
  for (double v : dx.v) total += v;
  CHECK(total == 4.0);
}

TEST_CASE("maxpool: single spike dominates every window") {
  Tensor<double> x(1, 1, 5, 5, 0.0);
  x.at(0, 0, 2, 2) = 3.5;
  const auto y = maxpool_forward(x, 3, 2, nullptr);
  for (double v : y.v) CHECK(v == 3.5);
  Tensor<double> small(1, 1, 2, 2, 0.0);
  CHECK_THROWS(maxpool_forward(small, 3, 2, nullptr));
}

TEST_CASE("gap: spatial means and uniform backward spread") {
  Tensor<double> x(1, 1, 2, 2);
  x.v = {1.0, 2.0, 3.0, 4.0};
  const auto y = gap_forward(x);
  CHECK(y.v[0] == 2.5);

  Tensor<double> c(2, 3, 4, 4, 0.25);
  const auto yc = gap_forward(c);
  for (double v : yc.v) CHECK(v == 0.25);

  Tensor<double> dy(1, 1, 1, 1, 8.0);
  const auto dx = gap_backward(dy, x.shape);
  for (double v : dx.v) CHECK(v == 2.0);
}

TEST_CASE("softmax: [0,0] -> [0.5,0.5]; rows sum to one; stable at large logits") {
  Tensor<double> x(1, 2, 1, 1, 0.0);
  const auto y = softmax_rows(x);
  CHECK(y.v[0] == 0.5);
  CHECK(y.v[1] == 0.5);

  Tensor<double> big(1, 2, 1, 1);
  big.v = {1000.0, 999.0};
  const auto yb = softmax_rows(big);
  CHECK(yb.v[0] + yb.v[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(yb.v[0] > yb.v[1]);
}

TEST_CASE("cross_entropy: perfect one-hot prediction is 0 within 1e-12") {
  Tensor<double> p(2, 2, 1, 1);
  p.v = {1.0, 0.0, 0.0, 1.0};
  CHECK(cross_entropy(p, {0, 1}) <= 1e-12);
  // Clamping keeps the loss finite for a zero probability.
  CHECK(std::isfinite(cross_entropy(p, {1, 0})));
}

TEST_CASE("dropout: inference is the exact identity; training scales survivors") {
  Rng rng(4);
  Tensor<double> x(2, 3, 4, 4);
  for (auto& v : x.v) v = rng.uniform();
  const auto y = dropout_forward(x, 0.5, Mode::infer, nullptr, nullptr);
  CHECK(y.v == x.v);

  Tensor<uint8_t> mask;
  Rng r2(11);
  const auto yt = dropout_forward(x, 0.5, Mode::train, &r2, &mask);
  int dropped = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (mask.v[i]) {
      CHECK(yt.v[i] == doctest::Approx(2.0 * x.v[i]));
    } else {
      CHECK(yt.v[i] == 0.0);
      ++dropped;
    }
  }
  CHECK(dropped > 0);
  CHECK(dropped < static_cast<int>(x.size()));
}

namespace {

NetworkSpec tiny_spec(ModelKind kind) {
  NetworkSpec spec;
  spec.kind = kind;
  spec.conv_filters = {4, 6};
  spec.dense_units = {8, 8, 2};
  spec.input_size_px = 24;
  spec.validate();
  return spec;
}

}  // namespace

TEST_CASE("baseline_forward: probability rows sum to 1; zero input gives [0.5, 0.5]") {
  const auto spec = tiny_spec(ModelKind::baseline);
  Rng rng(5);
  const auto params = glorot_init<double>(spec, rng);
  Rng xr(6);
  Tensor<double> x(3, 1, 24, 24);
  for (auto& v : x.v) v = xr.uniform();
  const auto probs = baseline_forward(spec, params, x, Mode::infer);
  for (int i = 0; i < 3; ++i) {
    const double s = probs.at(i, 0, 0, 0) + probs.at(i, 1, 0, 0);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(probs.at(i, 0, 0, 0) >= 0.0);
  }
  // Zero input with zero biases: conv/relu/gap/dense chain stays zero.
  Tensor<double> zero(2, 1, 24, 24, 0.0);
  const auto pz = baseline_forward(spec, params, zero, Mode::infer);
  for (double v : pz.v) CHECK(v == 0.5);
}

TEST_CASE("baseline_forward: wrong input shape throws") {
  const auto spec = tiny_spec(ModelKind::baseline);
  Rng rng(5);
  const auto params = glorot_init<double>(spec, rng);
  Tensor<double> bad(1, 1, 16, 16, 0.0);
  CHECK_THROWS(baseline_forward(spec, params, bad, Mode::infer));
}

TEST_CASE("symmetry_forward: zero contralateral with zero biases zeroes stream 2 features") {
  const auto spec = tiny_spec(ModelKind::symmetry);
  Rng rng(7);
  const auto params = glorot_init<double>(spec, rng);
  Rng xr(8);
  Tensor<double> x1(2, 1, 24, 24);
  for (auto& v : x1.v) v = xr.uniform();
  Tensor<double> x2(2, 1, 24, 24, 0.0);
  ForwardCache<double> cache;
  symmetry_forward(spec, params, x1, x2, Mode::infer, nullptr, &cache);
  for (double v : cache.s2.gap_out.v) CHECK(v == 0.0);
  for (double v : cache.s1.gap_out.v) CHECK(std::isfinite(v));
}

TEST_CASE("symmetry_forward: relabeling both streams and the head's column blocks is exact") {
  const auto spec = tiny_spec(ModelKind::symmetry);
  Rng rng(17);
  auto params = glorot_init<double>(spec, rng);
  // Make the two streams genuinely different.
  for (auto& v : params.stream2[0].w.v) v *= 1.3;

  Rng xr(18);
  Tensor<double> x1(2, 1, 24, 24), x2(2, 1, 24, 24);
  for (auto& v : x1.v) v = xr.uniform();
  for (auto& v : x2.v) v = xr.uniform();

  const auto out = symmetry_forward(spec, params, x1, x2, Mode::infer);

  // Swap the streams, the inputs, and the first head layer's column halves;
  // the full relabeling computes the same function (the dot products
  // accumulate in a different order, so compare to float reassociation).
  auto swapped = params;
  std::swap(swapped.stream1, swapped.stream2);
  const int fd = spec.feature_dim();
  auto& w = swapped.head[0].w;
  for (int o = 0; o < w.shape[0]; ++o)
    for (int c = 0; c < fd; ++c) std::swap(w.at(o, c, 0, 0), w.at(o, fd + c, 0, 0));
  const auto out_swapped = symmetry_forward(spec, swapped, x2, x1, Mode::infer);
  REQUIRE(out.v.size() == out_swapped.v.size());
  for (size_t i = 0; i < out.v.size(); ++i)
    CHECK(out.v[i] == doctest::Approx(out_swapped.v[i]).epsilon(1e-12));
}

TEST_CASE("parameter count: symmetry = 2x feature extractor + widened head") {
  const auto base_spec = tiny_spec(ModelKind::baseline);
  const auto sym_spec = tiny_spec(ModelKind::symmetry);
  Rng r1(1), r2(2);
  const auto base = glorot_init<double>(base_spec, r1);
  const auto sym = glorot_init<double>(sym_spec, r2);

  size_t base_stream = 0;
  for (const auto& l : base.stream1) base_stream += l.w.size() + l.b.size();
  size_t base_head = 0;
  for (const auto& l : base.head) base_head += l.w.size() + l.b.size();
  CHECK(base.count() == base_stream + base_head);

  const int fd = base_spec.feature_dim();
  const size_t widened_head = base_head + static_cast<size_t>(base_spec.dense_units[0]) * fd;
  CHECK(sym.count() == 2 * base_stream + widened_head);
}

TEST_CASE("forward: permuting a batch permutes outputs bitwise") {
  const auto spec = tiny_spec(ModelKind::baseline);
  Rng rng(31);
  const auto params = glorot_init<double>(spec, rng);
  Rng xr(32);
  Tensor<double> x(4, 1, 24, 24);
  for (auto& v : x.v) v = xr.uniform();
  Tensor<double> perm(4, 1, 24, 24);
  const int order[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    std::copy(x.plane(order[i], 0), x.plane(order[i], 0) + 24 * 24, perm.plane(i, 0));
  const auto probs = baseline_forward(spec, params, x, Mode::infer);
  const auto probs_perm = baseline_forward(spec, params, perm, Mode::infer);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 2; ++k) CHECK(probs_perm.at(i, k, 0, 0) == probs.at(order[i], k, 0, 0));
}

TEST_CASE("checkpoint: float round trip preserves everything") {
  const auto spec = tiny_spec(ModelKind::symmetry);
  Rng rng(77);
  const auto params = glorot_init<float>(spec, rng);
  Provenance prov;
  prov.config_hash = 0xC0FFEE;
  prov.seed = 9;
  const auto path = std::filesystem::temp_directory_path() / "symcad_ckpt_test.bin";
  save_checkpoint(path, spec, params, 17, 0.912345, prov);
  const auto ckpt = load_checkpoint(path);
  CHECK(ckpt.epoch == 17);
  CHECK(ckpt.val_auc == 0.912345);
  CHECK(ckpt.spec.kind == ModelKind::symmetry);
  CHECK(ckpt.spec.input_size_px == 24);
  CHECK(ckpt.prov.config_hash == 0xC0FFEE);
  REQUIRE(ckpt.params.stream1.size() == params.stream1.size());
  CHECK(ckpt.params.stream1[0].w.v == params.stream1[0].w.v);
  CHECK(ckpt.params.stream2[1].w.v == params.stream2[1].w.v);
  CHECK(ckpt.params.head[2].b.v == params.head[2].b.v);
  std::filesystem::remove(path);
}

TEST_CASE("paper-scale graphs: the 381 px seven-stage forward/backward runs") {
  for (const auto kind : {ModelKind::baseline, ModelKind::symmetry}) {
    auto spec = kind == ModelKind::baseline ? NetworkSpec::paper_baseline()
                                            : NetworkSpec::paper_symmetry();
    Rng rng(99);
    const auto params = glorot_init<float>(spec, rng);
    Rng xr(100);
    Tensor<float> x1(1, 1, 381, 381), x2(1, 1, 381, 381);
    for (auto& v : x1.v) v = static_cast<float>(xr.uniform());
    for (auto& v : x2.v) v = static_cast<float>(xr.uniform());
    ForwardCache<float> cache;
    Rng drop(5);
    const auto probs = kind == ModelKind::baseline
                           ? baseline_forward(spec, params, x1, Mode::train, &drop, &cache)
                           : symmetry_forward(spec, params, x1, x2, Mode::train, &drop, &cache);
    CHECK(probs.at(0, 0, 0, 0) + probs.at(0, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-5));
    const auto grads = network_backward(spec, params, cache, {1});
    CHECK(grads.count() == params.count());
    // Feature map entering the last conv is 3x3, so GAP sees 1x1.
    CHECK(cache.s1.gap_out.shape[1] == 128);
  }
}

TEST_CASE("conv2d: results do not depend on the OpenMP thread count") {
  Rng rng(7);
  Tensor<float> x(4, 3, 20, 20), w(5, 3, 3, 3), b(5, 1, 1, 1);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& v : w.v) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto y1 = conv2d_forward(x, w, b);
  Tensor<float> dx1, dw1, db1;
  conv2d_backward(x, w, y1, &dx1, &dw1, &db1);
  omp_set_num_threads(4);
  const auto y4 = conv2d_forward(x, w, b);
  Tensor<float> dx4, dw4, db4;
  conv2d_backward(x, w, y4, &dx4, &dw4, &db4);
  omp_set_num_threads(saved);
  CHECK(y1.v == y4.v);
  CHECK(dx1.v == dx4.v);
  CHECK(dw1.v == dw4.v);
}
