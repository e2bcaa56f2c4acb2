#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "symcad/candidates.hpp"
#include "symcad/phantom.hpp"
#include "symcad/raster.hpp"
#include "symcad/rng.hpp"
#include "symcad/version.hpp"

namespace symcad::patches {

/// Primary patch plus the patch at the same location in the horizontally
/// mirrored contra-lateral image; the contralateral raster is identically
/// zero when that image does not exist.
struct PatchPair {
  Raster primary;
  Raster contralateral;
  bool has_contralateral = false;
  bool positive = false;
  std::string exam_id;
  std::string image_id;
  int center_row = 0;
  int center_col = 0;
};

struct AugmentConfig {
  double blur_sigma_min = 0.2;
  double blur_sigma_max = 3.0;
  double apply_probability = 0.5;
  double scale_min = 0.88;
  double scale_max = 1.25;
  double translate_min_px = -25.0;
  double translate_max_px = 25.0;
  double rotate_min_deg = -30.0;
  double rotate_max_deg = 30.0;

  void validate() const;
};

/// Column-reversed copy with lesion coordinates remapped; an involution.
phantom::BreastImage mirror_contralateral(const phantom::BreastImage& image);

/// size_px window centered at (row, col); out-of-bounds regions are zero.
Raster extract_patch(const Raster& img, int center_row, int center_col, int size_px);

/// Contralateral may be null (missing laterality). It is mirrored
/// internally; both patches are read at the same (row, col). Throws when the
/// two images disagree in shape.
PatchPair extract_pair(const phantom::BreastImage& primary,
                       const phantom::BreastImage* contralateral, int center_row, int center_col,
                       int size_px);

/// Greedy negative subsampling in descending score order (random tie-break):
/// keeps only negatives at >= min_lesion_dist_cm from every lesion center
/// and >= min_inter_dist_cm from every already kept negative.
std::vector<candidates::Candidate> sample_negatives(
    const std::vector<candidates::Candidate>& cands, const std::vector<phantom::Lesion>& lesions,
    double pixel_spacing_cm, double min_lesion_dist_cm, double min_inter_dist_cm, Rng& rng);

/// Positive pairs first get an independently sampled horizontal flip and a
/// Gaussian blur with sigma ~ U[blur range]; then, with apply_probability,
/// exactly one of {scale, translate, rotate} is applied to both members with
/// a uniformly drawn parameter. A zero contralateral stays exactly zero.
PatchPair augment(const PatchPair& pair, const AugmentConfig& cfg, Rng& rng);

// Binary patch archive: fixed header (magic, version, count, patch size,
// dtype=float32 little-endian) followed by one record per pair:
// label byte, has_contralateral byte, primary raster, contralateral raster.
void write_patch_archive(const std::filesystem::path& bin_path,
                         const std::filesystem::path& index_path,
                         const std::vector<PatchPair>& pairs, const Provenance& prov);
std::vector<PatchPair> read_patch_archive(const std::filesystem::path& bin_path,
                                          const std::filesystem::path& index_path);

}  // namespace symcad::patches
