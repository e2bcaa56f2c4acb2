#include "doctest.h"

#include <filesystem>

#include "symcad/config.hpp"
#include "symcad/raster.hpp"
#include "symcad/rng.hpp"

using namespace symcad;

TEST_CASE("rng: deterministic and in-range") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next() == b.next());
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto k = r.uniform_int(-3, 5);
    CHECK(k >= -3);
    CHECK(k <= 5);
  }
}

TEST_CASE("rng: distinct streams from mix_seed") {
  Rng a(mix_seed(1, "alpha"));
  Rng b(mix_seed(1, "beta"));
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next() == b.next() ? 1 : 0;
  CHECK(same == 0);
}

TEST_CASE("rng: shuffle is a permutation") {
  Rng r(3);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("raster: horizontal flip is an involution") {
  Raster img(5, 7);
  Rng r(1);
  for (auto& v : img.data) v = static_cast<float>(r.uniform());
  const auto once = flip_horizontal(img);
  const auto twice = flip_horizontal(once);
  CHECK(twice.data == img.data);
  CHECK(once.at(2, 0) == img.at(2, 6));
}

TEST_CASE("raster: 16-bit PGM round trip") {
  Raster img(9, 13);
  Rng r(5);
  for (auto& v : img.data) v = static_cast<float>(r.uniform());
  const auto path = std::filesystem::temp_directory_path() / "symcad_test.pgm";
  write_pgm16(path, img, {"test comment"});
  const auto back = read_pgm16(path);
  REQUIRE(back.rows == img.rows);
  REQUIRE(back.cols == img.cols);
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 65535.0f + 1e-7f);
  std::filesystem::remove(path);
}

TEST_CASE("raster: bilinear sampling at integer coords is exact, zero outside") {
  Raster img(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) img.at(r, c) = static_cast<float>(r * 10 + c);
  CHECK(bilinear_sample(img, 2.0, 3.0) == doctest::Approx(23.0));
  CHECK(bilinear_sample(img, 1.5, 1.5) == doctest::Approx((11.0 + 12.0 + 21.0 + 22.0) / 4.0));
  CHECK(bilinear_sample(img, -5.0, 1.0) == 0.0f);
}

TEST_CASE("config: parse, typed getters, canonical hash") {
  const auto cfg = ConfigMap::parse_string(
      "# comment\n"
      "a.x = 3\n"
      "a.y = 0.5\n"
      "b.list = 1, 2, 3\n"
      "b.flag = true\n");
  CHECK(cfg.get_i64("a.x") == 3);
  CHECK(cfg.get_f64("a.y") == doctest::Approx(0.5));
  CHECK(cfg.get_bool("b.flag"));
  CHECK(cfg.get_f64_list("b.list").size() == 3);
  CHECK(cfg.get_i64("missing.key", 9) == 9);

  const auto cfg2 = ConfigMap::parse_string("b.flag = true\nb.list = 1, 2, 3\na.y = 0.5\na.x = 3\n");
  CHECK(cfg.canonical_text() == cfg2.canonical_text());
  CHECK(cfg.hash() == cfg2.hash());
}

TEST_CASE("config: missing key error names the key") {
  const auto cfg = ConfigMap::parse_string("a.x = 1\n");
  try {
    cfg.get_str("train.seed");
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("train.seed") != std::string::npos);
  }
}

TEST_CASE("config: duplicate keys and untouched keys are detected") {
  CHECK_THROWS(ConfigMap::parse_string("a.x = 1\na.x = 2\n"));
  const auto cfg = ConfigMap::parse_string("a.x = 1\nzz.typo = 4\n");
  (void)cfg.get_i64("a.x");
  const auto unknown = cfg.unknown_keys();
  REQUIRE(unknown.size() == 1);
  CHECK(unknown[0] == "zz.typo");
}
