#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "symcad/patches.hpp"
#include "symcad/phantom.hpp"

using namespace symcad;
using namespace symcad::patches;

namespace {

phantom::BreastImage smooth_image(int rows, int cols, uint64_t seed,
                                  phantom::Laterality lat = phantom::Laterality::left) {
  phantom::RenderParams params;
  params.rows = rows;
  params.cols = cols;
  params.laterality = lat;
  Rng tex(seed), asym(seed + 1);
  phantom::BreastImage img;
  img.image_id = lat == phantom::Laterality::left ? "L" : "R";
  img.pixels = phantom::render_breast(params, tex, asym, {});
  img.laterality = lat;
  img.pixel_spacing_cm = 0.02;
  return img;
}

PatchPair disc_pair(int size, double radius, bool positive) {
  PatchPair pair;
  pair.primary = Raster(size, size, 0.0f);
  pair.contralateral = Raster(size, size, 0.0f);
  pair.has_contralateral = true;
  pair.positive = positive;
  const double cy = 0.5 * (size - 1), cx = 0.5 * (size - 1);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      if (std::hypot(r - cy, c - cx) <= radius) {
        pair.primary.at(r, c) = 1.0f;
        pair.contralateral.at(r, c) = 1.0f;
      }
  return pair;
}

candidates::Candidate neg_at(int row, int col, double score) {
  candidates::Candidate c;
  c.row = row;
  c.col = col;
  c.score = score;
  c.label = candidates::Label::negative;
  return c;
}

}  // namespace

TEST_CASE("mirror_contralateral: involution and coordinate remap") {
  auto img = smooth_image(60, 40, 4);
  phantom::Lesion les;
  les.row = 20;
  les.col = 5;
  les.radius_px = 3;
  img.lesions = {les};

  const auto mirrored = mirror_contralateral(img);
  CHECK(mirrored.pixels.at(10, 0) == img.pixels.at(10, 39));
  CHECK(mirrored.lesions[0].col == 34);
  const auto twice = mirror_contralateral(mirrored);
  CHECK(twice.pixels.data == img.pixels.data);
  CHECK(twice.lesions[0].col == 5);
}

TEST_CASE("mirror_contralateral: symmetric phantom pair maps onto itself") {
  const auto left = smooth_image(120, 90, 7, phantom::Laterality::left);
  auto right = smooth_image(120, 90, 7, phantom::Laterality::right);
  CHECK(mirror_contralateral(right).pixels.data == left.pixels.data);
}

TEST_CASE("extract_patch: corner centering zero-pads about three quarters") {
  Raster img(100, 100, 1.0f);
  const auto patch = extract_patch(img, 0, 0, 50);
  int zeros = 0;
  for (float v : patch.data) zeros += v == 0.0f ? 1 : 0;
  const double frac = static_cast<double>(zeros) / patch.data.size();
  CHECK(frac >= 0.70);
  CHECK(frac <= 0.80);
}

TEST_CASE("extract_patch: interior of a constant image is constant") {
  Raster img(400, 400, 0.5f);
  const auto patch = extract_patch(img, 200, 200, 300);
  CHECK(patch.rows == 300);
  CHECK(patch.cols == 300);
  for (float v : patch.data) CHECK(v == 0.5f);
}

TEST_CASE("extract_patch: 300 px at 0.02 cm/px spans 6 cm") {
  const double spacing_cm = 0.02;
  CHECK(300 * spacing_cm == doctest::Approx(6.0));
}

TEST_CASE("extract_pair: missing contralateral becomes a zero raster") {
  const auto img = smooth_image(120, 90, 3);
  const auto pair = extract_pair(img, nullptr, 60, 45, 64);
  CHECK(!pair.has_contralateral);
  for (float v : pair.contralateral.data) CHECK(v == 0.0f);
}

TEST_CASE("extract_pair: contralateral read at the same coords in the mirrored frame") {
  const auto left = smooth_image(120, 90, 21, phantom::Laterality::left);
  const auto right = smooth_image(120, 90, 22, phantom::Laterality::right);
  const int r = 60, c = 30, size = 33;
  const auto pair = extract_pair(left, &right, r, c, size);
  REQUIRE(pair.has_contralateral);
  // Center pixel of the contralateral patch equals right(r, W-1-c).
  CHECK(pair.contralateral.at(size / 2, size / 2) == right.pixels.at(r, 89 - c));
}

TEST_CASE("extract_pair: symmetric exam, unilateral lesion shows only in the primary") {
  phantom::RenderParams params;
  params.rows = 300;
  params.cols = 225;
  params.distractor_count_min = 0;
  params.distractor_count_max = 0;

  phantom::Lesion les;
  les.row = 150;
  les.col = 225 - 1 - 80;  // right-breast coordinates for canonical col 80
  les.radius_px = 20;
  les.contrast = 0.4;
  les.shape_seed = 3;

  params.laterality = phantom::Laterality::right;
  Rng tex_r(55), asym_r(1);
  phantom::BreastImage right;
  right.pixels = phantom::render_breast(params, tex_r, asym_r, {les});
  right.image_id = "R";

  params.laterality = phantom::Laterality::left;
  Rng tex_l(55), asym_l(2);
  phantom::BreastImage left;
  left.pixels = phantom::render_breast(params, tex_l, asym_l, {});
  left.image_id = "L";

  const auto pair = extract_pair(right, &left, les.row, les.col, 100);
  REQUIRE(pair.has_contralateral);
  // Same tissue everywhere except the mass: center difference is the lesion
  // contrast, annulus difference is ~0.
  double center_diff = 0.0, ring_diff = 0.0;
  int n_center = 0, n_ring = 0;
  for (int r = 0; r < 100; ++r) {
    for (int c = 0; c < 100; ++c) {
      const double d = std::hypot(r - 50.0, c - 50.0);
      const double diff = pair.primary.at(r, c) - pair.contralateral.at(r, c);
      if (d <= 10) {
        center_diff += diff;
        ++n_center;
      } else if (d >= 35 && d <= 48) {
        ring_diff += std::abs(diff);
        ++n_ring;
      }
    }
  }
  CHECK(center_diff / n_center >= 0.25);
  CHECK(ring_diff / n_ring <= 0.01);
}

TEST_CASE("extract_pair: mismatched shapes throw") {
  const auto a = smooth_image(120, 90, 1);
  const auto b = smooth_image(100, 90, 2);
  CHECK_THROWS(extract_pair(a, &b, 10, 10, 16));
}

TEST_CASE("sample_negatives: the two distance rules") {
  Rng rng(5);
  const double spacing = 0.02;  // 50 px per cm

  SUBCASE("two negatives 1.0 cm apart keep exactly one") {
    std::vector<candidates::Candidate> cands{neg_at(100, 100, 0.9), neg_at(100, 150, 0.8)};
    const auto kept = sample_negatives(cands, {}, spacing, 2.0, 1.4, rng);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
  }

  SUBCASE("negative 1.5 cm from a lesion center is removed") {
    phantom::Lesion les;
    les.row = 100;
    les.col = 100;
    les.radius_px = 10;
    std::vector<candidates::Candidate> cands{neg_at(100, 175, 0.9)};  // 75 px = 1.5 cm
    CHECK(sample_negatives(cands, {les}, spacing, 2.0, 1.4, rng).empty());
    std::vector<candidates::Candidate> far{neg_at(100, 201, 0.9)};  // 2.02 cm
    CHECK(sample_negatives(far, {les}, spacing, 2.0, 1.4, rng).size() == 1);
  }

  SUBCASE("unlabeled candidates are rejected") {
    candidates::Candidate c;
    c.label = candidates::Label::unknown;
    CHECK_THROWS(sample_negatives({c}, {}, spacing, 2.0, 1.4, rng));
  }
}

TEST_CASE("sample_negatives: greedy result is a maximal feasible subset") {
  // Five equal-score negatives on a line. At 1.5 cm intervals every pair
  // already satisfies the 1.4 cm rule, so the unique maximal subset is all
  // five; at 1.0 cm intervals the maximal subsets are sparser.
  const double spacing = 0.02;
  for (const double interval_cm : {1.5, 1.0, 0.7}) {
    const int step_px = static_cast<int>(interval_cm / spacing);
    std::vector<candidates::Candidate> cands;
    std::vector<oracles::Point> pts;
    for (int i = 0; i < 5; ++i) {
      cands.push_back(neg_at(100, 100 + i * step_px, 0.5));
      pts.push_back({100.0, 100.0 + i * step_px});
    }
    for (uint64_t seed = 0; seed < 8; ++seed) {
      Rng rng(seed);
      const auto kept = sample_negatives(cands, {}, spacing, 2.0, 1.4, rng);
      uint32_t mask = 0;
      for (const auto& k : kept)
        for (size_t i = 0; i < pts.size(); ++i)
          if (k.row == static_cast<int>(pts[i].row) && k.col == static_cast<int>(pts[i].col))
            mask |= 1u << i;
      const auto maximal = oracles::maximal_feasible_subsets(pts, {}, 2.0 / spacing, 1.4 / spacing);
      CHECK(std::find(maximal.begin(), maximal.end(), mask) != maximal.end());
    }
  }
}

TEST_CASE("sample_negatives: random fields satisfy both constraints under O(n^2) scan") {
  Rng field_rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<candidates::Candidate> cands;
    for (int i = 0; i < 60; ++i) {
      auto c = neg_at(static_cast<int>(field_rng.below(400)), static_cast<int>(field_rng.below(300)),
                      field_rng.uniform());
      cands.push_back(c);
    }
    std::vector<phantom::Lesion> lesions(2);
    lesions[0].row = static_cast<int>(field_rng.below(400));
    lesions[0].col = static_cast<int>(field_rng.below(300));
    lesions[0].radius_px = 20;
    lesions[1].row = static_cast<int>(field_rng.below(400));
    lesions[1].col = static_cast<int>(field_rng.below(300));
    lesions[1].radius_px = 25;

    Rng rng(rep);
    const auto kept = sample_negatives(cands, lesions, 0.02, 2.0, 1.4, rng);
    for (size_t a = 0; a < kept.size(); ++a) {
      for (const auto& les : lesions)
        CHECK(std::hypot(kept[a].row - les.row, kept[a].col - les.col) >= 2.0 / 0.02);
      for (size_t b = a + 1; b < kept.size(); ++b)
        CHECK(std::hypot(kept[a].row - kept[b].row, kept[a].col - kept[b].col) >= 1.4 / 0.02);
    }
  }
}

TEST_CASE("augment: apply_probability 0 on a negative is the identity") {
  auto pair = disc_pair(64, 20, false);
  AugmentConfig cfg;
  cfg.apply_probability = 0.0;
  Rng rng(1);
  const auto out = augment(pair, cfg, rng);
  CHECK(out.primary.data == pair.primary.data);
  CHECK(out.contralateral.data == pair.contralateral.data);
  CHECK(out.positive == pair.positive);
  CHECK(out.has_contralateral == pair.has_contralateral);
}

TEST_CASE("augment: degenerate geometric draws are identities up to interpolation") {
  auto pair = disc_pair(64, 20, false);
  for (auto& v : pair.primary.data) v = 0.3f + 0.001f * static_cast<float>(std::rand() % 100);
  AugmentConfig cfg;
  cfg.apply_probability = 1.0;
  cfg.rotate_min_deg = cfg.rotate_max_deg = 0.0;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.translate_min_px = cfg.translate_max_px = 0.0;
  Rng rng(3);
  const auto out = augment(pair, cfg, rng);
  for (size_t i = 0; i < out.primary.data.size(); ++i)
    CHECK(std::abs(out.primary.data[i] - pair.primary.data[i]) < 1e-6f);
}

TEST_CASE("augment: scale 1.25 grows a 40 px disc to 50 +- 1 px") {
  auto pair = disc_pair(128, 40, false);
  AugmentConfig cfg;
  cfg.apply_probability = 1.0;
  cfg.scale_min = cfg.scale_max = 1.25;
  // Force the scale branch by drawing until `which == 0`.
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng probe(seed);
    probe.bernoulli(1.0);
    if (probe.uniform_int(0, 2) != 0) continue;
    Rng rng(seed);
    const auto out = augment(pair, cfg, rng);
    // Measure the radius of the thresholded support along the center row.
    const int mid = 64;
    int count = 0;
    for (int c = 0; c < 128; ++c) count += out.primary.at(mid, c) > 0.5f ? 1 : 0;
    const double radius = count / 2.0;
    CHECK(radius >= 49.0);
    CHECK(radius <= 51.0);
    return;
  }
  FAIL("no seed selected the scale branch");
}

TEST_CASE("augment: positives are blurred, zero contralateral stays zero") {
  auto pair = disc_pair(64, 12, true);
  pair.has_contralateral = false;
  pair.contralateral = Raster(64, 64, 0.0f);
  AugmentConfig cfg;
  cfg.apply_probability = 0.5;
  Rng rng(9);
  const auto out = augment(pair, cfg, rng);
  CHECK(out.positive);
  CHECK(!out.has_contralateral);
  for (float v : out.contralateral.data) CHECK(v == 0.0f);
  // Blur must smear the hard disc edge.
  CHECK(out.primary.data != pair.primary.data);
}

TEST_CASE("augment: label, flag and shape always preserved") {
  AugmentConfig cfg;
  Rng rng(123);
  for (int rep = 0; rep < 20; ++rep) {
    auto pair = disc_pair(48, 10, rep % 2 == 0);
    const auto out = augment(pair, cfg, rng);
    CHECK(out.positive == pair.positive);
    CHECK(out.has_contralateral == pair.has_contralateral);
    CHECK(out.primary.rows == 48);
    CHECK(out.contralateral.cols == 48);
  }
}

TEST_CASE("patch archive: round trip") {
  std::vector<PatchPair> pairs;
  Rng rng(6);
  for (int i = 0; i < 5; ++i) {
    PatchPair p;
    p.primary = Raster(16, 16);
    p.contralateral = Raster(16, 16);
    for (auto& v : p.primary.data) v = static_cast<float>(rng.uniform());
    p.has_contralateral = i % 2 == 0;
    if (p.has_contralateral)
      for (auto& v : p.contralateral.data) v = static_cast<float>(rng.uniform());
    p.positive = i < 2;
    p.exam_id = "E" + std::to_string(i);
    p.image_id = p.exam_id + "_L_MLO";
    p.center_row = 10 * i;
    p.center_col = 5 * i;
    pairs.push_back(std::move(p));
  }
  Provenance prov;
  prov.config_hash = 0xFEED;
  prov.seed = 4;
  const auto dir = std::filesystem::temp_directory_path();
  write_patch_archive(dir / "symcad_t.bin", dir / "symcad_t.json", pairs, prov);
  const auto back = read_patch_archive(dir / "symcad_t.bin", dir / "symcad_t.json");
  REQUIRE(back.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].primary.data == pairs[i].primary.data);
    CHECK(back[i].contralateral.data == pairs[i].contralateral.data);
    CHECK(back[i].positive == pairs[i].positive);
    CHECK(back[i].has_contralateral == pairs[i].has_contralateral);
    CHECK(back[i].exam_id == pairs[i].exam_id);
    CHECK(back[i].center_row == pairs[i].center_row);
  }
  std::filesystem::remove(dir / "symcad_t.bin");
  std::filesystem::remove(dir / "symcad_t.json");
}
