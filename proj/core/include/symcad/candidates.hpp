#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "symcad/phantom.hpp"
#include "symcad/raster.hpp"
#include "symcad/version.hpp"

namespace symcad::candidates {

/// Per-pixel mass likelihood in [0,1], same shape as the source image.
struct LikelihoodMap {
  RasterD values;
  std::string source_image_id;
};

struct DetectorParams {
  double radius_min_px = 18.0;
  double radius_max_px = 55.0;
  int radius_step = 3;
  /// Half-angle of the gradient-convergence cone.
  double angle_tol_rad = 0.55;
  /// Pixels with weaker gradients do not vote.
  double grad_magnitude_min = 0.004;
  /// Large-scale background estimate (3-pass box blur of this radius) is
  /// subtracted before gradients are taken, so tissue-scale intensity
  /// slopes do not tilt the vote directions. 0 disables.
  int background_radius_px = 45;
  /// Smoothing of the vote accumulator before normalization (0 disables).
  double vote_smooth_sigma = 8.0;
  /// Scale of the oriented second-derivative (line) response.
  double line_sigma = 6.0;
  /// Weight of the line response in the combined score; the rest is the
  /// gradient-convergence vote fraction.
  double line_weight = 0.35;
  /// Raw intensities at or below this are treated as background.
  double intensity_floor = 0.02;
};

/// Combined gradient-convergence + line-response likelihood. Each component
/// is normalized by its own maximum and the blend is rescaled by its
/// maximum, so a constant image yields an all-zero map. The construction is
/// mirror-equivariant: flipping the input horizontally flips the map (the
/// voting term bit-exactly, the smoothed term to ~1e-15).
LikelihoodMap mass_likelihood(const phantom::BreastImage& image, const DetectorParams& params);

enum class Label { unknown, positive, negative };

std::string to_string(Label l);
Label label_from(const std::string& s);

struct Candidate {
  int row = 0;
  int col = 0;
  double score = 0.0;
  Label label = Label::unknown;
  int lesion_id = -1;  // index into the image's lesion list; -1 if none
  std::string image_id;
  std::string exam_id;
};

/// One candidate per peak plateau of {value >= threshold, value > 0} (an
/// 8-connected equal-value set with no higher neighbor), anchored at the
/// plateau's first row-major pixel; candidates closer than min_separation_px
/// are merged keeping the higher score. Result is sorted by descending
/// score. Because the peak set itself is threshold-independent, raising the
/// threshold never increases the candidate count.
std::vector<Candidate> threshold_candidates(const LikelihoodMap& map, double threshold,
                                            int min_separation_px);

/// Positive iff the center lies within some lesion's equivalent-circle disc;
/// lesion_id is the nearest such lesion.
void label_candidates(std::vector<Candidate>& cands, const std::vector<phantom::Lesion>& lesions);

// CSV: exam_id,image_id,row,col,score,label with provenance header comments;
// an optional trailing model_score column carries CNN scores.
void write_candidates_csv(const std::filesystem::path& path, const std::vector<Candidate>& cands,
                          const Provenance& prov, const std::vector<double>* model_scores = nullptr);

struct CandidateCsv {
  std::vector<Candidate> cands;
  std::vector<double> model_scores;  // empty unless the column is present
  Provenance prov;
};
CandidateCsv read_candidates_csv(const std::filesystem::path& path);

}  // namespace symcad::candidates
