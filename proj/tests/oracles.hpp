// Test-only reference implementations, kept independent of the library code
// paths they are used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "symcad/eval.hpp"
#include "symcad/nnet.hpp"

namespace oracles {

/// O(n^2) pairwise Mann-Whitney AUC.
inline double auc_bruteforce(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  double num = 0.0;
  size_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    ++n_pos;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  for (uint8_t l : labels) n_neg += l ? 0 : 1;
  return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// FROC by exhaustive enumeration: for every distinct score taken as the
/// threshold, count detected lesions and false positives directly.
inline symcad::eval::FrocCurve froc_bruteforce(
    const std::vector<symcad::eval::UnitCandidates>& units, symcad::eval::FrocUnit unit) {
  symcad::eval::FrocCurve curve;
  curve.unit = unit;
  curve.n_units = static_cast<int>(units.size());
  curve.n_lesions = 0;
  for (const auto& u : units) curve.n_lesions += u.lesion_count;

  std::set<double, std::greater<double>> thresholds;
  for (const auto& u : units)
    for (const auto& c : u.cands) thresholds.insert(c.score);

  for (double t : thresholds) {
    std::set<std::pair<int, int>> detected;
    int fp = 0;
    for (size_t ui = 0; ui < units.size(); ++ui) {
      for (const auto& c : units[ui].cands) {
        if (c.score < t) continue;
        if (c.positive)
          detected.insert({static_cast<int>(ui), c.lesion_id});
        else
          ++fp;
      }
    }
    curve.points.push_back({t, static_cast<double>(fp) / curve.n_units,
                            static_cast<double>(detected.size()) / curve.n_lesions});
  }
  return curve;
}

/// CPM by direct scan at each operating point.
inline double cpm_bruteforce(const symcad::eval::FrocCurve& curve) {
  const double ops[7] = {1.0 / 8, 1.0 / 4, 1.0 / 2, 1, 2, 4, 8};
  double total = 0.0;
  for (double op : ops) {
    double best = 0.0;
    for (const auto& p : curve.points)
      if (p.fp_per_unit <= op) best = std::max(best, p.sensitivity);
    total += best;
  }
  return total / 7.0;
}

/// All maximal subsets of negatives satisfying the two distance rules, by
/// exhaustive enumeration (n <= ~15).
struct Point {
  double row, col;
};
inline bool feasible_subset(const std::vector<Point>& pts, const std::vector<Point>& lesions,
                            uint32_t mask, double min_lesion_px, double min_inter_px) {
  std::vector<int> idx;
  for (size_t i = 0; i < pts.size(); ++i)
    if (mask & (1u << i)) idx.push_back(static_cast<int>(i));
  for (int i : idx) {
    for (const auto& l : lesions) {
      const double d = std::hypot(pts[static_cast<size_t>(i)].row - l.row,
                                  pts[static_cast<size_t>(i)].col - l.col);
      if (d < min_lesion_px) return false;
    }
  }
  for (size_t a = 0; a < idx.size(); ++a)
    for (size_t b = a + 1; b < idx.size(); ++b) {
      const double d = std::hypot(pts[static_cast<size_t>(idx[a])].row - pts[static_cast<size_t>(idx[b])].row,
                                  pts[static_cast<size_t>(idx[a])].col - pts[static_cast<size_t>(idx[b])].col);
      if (d < min_inter_px) return false;
    }
  return true;
}

inline std::vector<uint32_t> maximal_feasible_subsets(const std::vector<Point>& pts,
                                                      const std::vector<Point>& lesions,
                                                      double min_lesion_px, double min_inter_px) {
  const uint32_t full = 1u << pts.size();
  std::vector<uint32_t> feasible;
  for (uint32_t m = 0; m < full; ++m)
    if (feasible_subset(pts, lesions, m, min_lesion_px, min_inter_px)) feasible.push_back(m);
  std::vector<uint32_t> maximal;
  for (uint32_t m : feasible) {
    bool is_max = true;
    for (uint32_t other : feasible) {
      if (other != m && (other & m) == m) {
        is_max = false;
        break;
      }
    }
    if (is_max) maximal.push_back(m);
  }
  return maximal;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (64-bit, central differences)
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

/// rel = |analytic - fd| / max(1, |analytic|, |fd|)
inline double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

/// Central-difference gradient of `loss` w.r.t. every element of `theta`,
/// compared against `analytic`.
inline GradCheckResult fd_check(std::vector<double*> theta, const std::vector<double>& analytic,
                                const std::function<double()>& loss, const std::string& tag,
                                double h = 1e-6) {
  GradCheckResult res;
  for (size_t i = 0; i < theta.size(); ++i) {
    const double orig = *theta[i];
    *theta[i] = orig + h;
    const double up = loss();
    *theta[i] = orig - h;
    const double down = loss();
    *theta[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double err = rel_err(analytic[i], fd);
    if (err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst = tag + "[" + std::to_string(i) + "]";
    }
  }
  return res;
}

/// Collect raw element pointers of a tensor.
inline std::vector<double*> tensor_ptrs(symcad::nnet::Tensor<double>& t) {
  std::vector<double*> out;
  out.reserve(t.size());
  for (auto& v : t.v) out.push_back(&v);
  return out;
}

}  // namespace oracles
