#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "symcad/rng.hpp"

namespace symcad::eval {

/// One scored detection. `lesion_id` keys the lesion the candidate hits and
/// must be unique within the FROC unit the candidate belongs to; it is < 0
/// exactly when the candidate is negative.
struct ScoredCandidate {
  double score = 0.0;
  bool positive = false;
  int lesion_id = -1;
};

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie), computed via
/// average ranks. All intermediate sums are half-integers, so the result is
/// bit-identical to the O(n^2) pairwise count divided by n_pos * n_neg.
/// Throws if either class is absent.
double roc_auc(const std::vector<ScoredCandidate>& cands);
double roc_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};
std::vector<RocPoint> roc_curve(const std::vector<ScoredCandidate>& cands);

enum class FrocUnit { image, exam };

struct FrocPoint {
  double threshold = 0.0;
  double fp_per_unit = 0.0;
  double sensitivity = 0.0;
};

struct FrocCurve {
  FrocUnit unit = FrocUnit::image;
  int n_units = 0;
  int n_lesions = 0;
  std::vector<FrocPoint> points;  // descending threshold; fp and sensitivity nondecreasing
};

/// Candidates grouped by FROC unit (one image or one exam). `lesion_count`
/// counts ground-truth lesions in the unit whether or not any candidate hits
/// them; units without candidates still widen the FP denominator.
struct UnitCandidates {
  std::string unit_id;
  int lesion_count = 0;
  std::vector<ScoredCandidate> cands;
};

/// Threshold sweep over all distinct scores (descending). At threshold t:
/// sensitivity = distinct lesions hit by a candidate scoring >= t / total
/// lesions; fp_per_unit = negatives scoring >= t / number of units.
/// Throws when the unit set carries zero lesions.
FrocCurve froc(const std::vector<UnitCandidates>& units, FrocUnit unit);

/// Mean sensitivity at 1/8, 1/4, 1/2, 1, 2, 4, 8 FPs per unit, each read off
/// the step curve at the rightmost point with fp_per_unit <= the operating
/// point (0 when no such point exists).
double cpm(const FrocCurve& curve);

// ---------------------------------------------------------------------------
// Bootstrap over exams
// ---------------------------------------------------------------------------

struct EvalCand {
  bool positive = false;
  int lesion_id = -1;                  // unique within the exam
  bool missing_contralateral = false;
  std::vector<double> scores;          // parallel to EvalData::models
};

struct EvalImage {
  std::string image_id;
  int lesion_count = 0;
  std::vector<EvalCand> cands;
};

struct EvalExam {
  std::string exam_id;
  std::vector<EvalImage> images;
};

struct EvalData {
  std::vector<std::string> models;
  std::vector<EvalExam> exams;

  int model_index(const std::string& name) const;
};

using ExamSample = std::vector<const EvalExam*>;

/// Metric over a bag of exams (with repetition). Returns nullopt when the
/// metric is undefined on the sample, in which case the resample is redrawn.
using Metric = std::function<std::optional<double>(const ExamSample&)>;

Metric metric_auc(int model);
Metric metric_cpm(int model, FrocUnit unit);
/// AUC restricted to candidates whose contralateral image is absent.
Metric metric_auc_missing_contralateral(int model);

std::optional<double> apply_metric(const EvalData& data, const Metric& m);

struct BootstrapInterval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile interval over `n` exam-level resamples (type-7 quantiles).
/// Deterministic for a fixed seed.
BootstrapInterval bootstrap_ci(const EvalData& data, const Metric& metric, int n, double level,
                               uint64_t seed);

/// Paired one-sided bootstrap p-value for "model B improves on model A":
/// the fraction of shared resamples where metric_b <= metric_a (ties count
/// as non-improvement). Resolution is 1/n.
double bootstrap_pvalue(const EvalData& data, const Metric& metric_a, const Metric& metric_b,
                        int n, uint64_t seed);

/// Build FROC unit groups from an exam sample; exam-unit lesion ids are
/// remapped so that repeated exams in a bootstrap sample stay distinct.
std::vector<UnitCandidates> make_units(const ExamSample& sample, int model, FrocUnit unit);
std::vector<ScoredCandidate> flatten_candidates(const ExamSample& sample, int model);

}  // namespace symcad::eval
