#include "symcad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace symcad::eval {

double roc_auc(const std::vector<ScoredCandidate>& cands) {
  std::vector<double> scores;
  std::vector<uint8_t> labels;
  scores.reserve(cands.size());
  labels.reserve(cands.size());
  for (const auto& c : cands) {
    scores.push_back(c.score);
    labels.push_back(c.positive ? 1 : 0);
  }
  return roc_auc(scores, labels);
}

double roc_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (uint8_t l : labels) n_pos += l;
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::runtime_error("roc_auc: needs both classes");

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Sum of average ranks of the positives. Ranks are 1-based; a tie group
  // spanning ranks [lo, hi] contributes (lo + hi) / 2 per member, which is a
  // half-integer, so the accumulation below is exact in double.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]]) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(const std::vector<ScoredCandidate>& cands) {
  size_t n_pos = 0, n_neg = 0;
  for (const auto& c : cands) (c.positive ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw std::runtime_error("roc_curve: needs both classes");

  std::vector<const ScoredCandidate*> sorted;
  sorted.reserve(cands.size());
  for (const auto& c : cands) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredCandidate* a, const ScoredCandidate* b) { return a->score > b->score; });

  std::vector<RocPoint> out;
  size_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    const double t = sorted[i]->score;
    while (i < sorted.size() && sorted[i]->score == t) {
      (sorted[i]->positive ? tp : fp) += 1;
      ++i;
    }
    out.push_back({t, static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  return out;
}

FrocCurve froc(const std::vector<UnitCandidates>& units, FrocUnit unit) {
  FrocCurve curve;
  curve.unit = unit;
  curve.n_units = static_cast<int>(units.size());
  int total_lesions = 0;
  for (const auto& u : units) total_lesions += u.lesion_count;
  if (total_lesions <= 0) throw std::runtime_error("froc: zero lesions in unit set");
  curve.n_lesions = total_lesions;

  struct Entry {
    double score;
    bool positive;
    uint64_t lesion_key;
  };
  std::vector<Entry> entries;
  for (size_t ui = 0; ui < units.size(); ++ui) {
    for (const auto& c : units[ui].cands) {
      if (c.positive && c.lesion_id < 0)
        throw std::runtime_error("froc: positive candidate without lesion id in unit " +
                                 units[ui].unit_id);
      const uint64_t key = (static_cast<uint64_t>(ui) << 24) |
                           static_cast<uint64_t>(c.positive ? c.lesion_id : 0);
      entries.push_back({c.score, c.positive, key});
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });

  std::unordered_set<uint64_t> detected;
  size_t fp_count = 0;
  size_t i = 0;
  while (i < entries.size()) {
    const double t = entries[i].score;
    while (i < entries.size() && entries[i].score == t) {
      if (entries[i].positive)
        detected.insert(entries[i].lesion_key);
      else
        ++fp_count;
      ++i;
    }
    curve.points.push_back({t, static_cast<double>(fp_count) / static_cast<double>(curve.n_units),
                            static_cast<double>(detected.size()) / static_cast<double>(total_lesions)});
  }
  return curve;
}

double cpm(const FrocCurve& curve) {
  if (curve.points.empty()) throw std::runtime_error("cpm: empty curve");
  static const double kOps[7] = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  double sum = 0.0;
  for (double op : kOps) {
    double sens = 0.0;
    for (const auto& p : curve.points) {
      if (p.fp_per_unit <= op)
        sens = p.sensitivity;  // points are fp-nondecreasing; keep the rightmost
      else
        break;
    }
    sum += sens;
  }
  return sum / 7.0;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

int EvalData::model_index(const std::string& name) const {
  for (size_t i = 0; i < models.size(); ++i)
    if (models[i] == name) return static_cast<int>(i);
  throw std::runtime_error("unknown model: " + name);
}

std::vector<ScoredCandidate> flatten_candidates(const ExamSample& sample, int model) {
  std::vector<ScoredCandidate> out;
  for (const EvalExam* e : sample)
    for (const auto& img : e->images)
      for (const auto& c : img.cands)
        out.push_back({c.scores.at(model), c.positive, c.lesion_id});
  return out;
}

std::vector<UnitCandidates> make_units(const ExamSample& sample, int model, FrocUnit unit) {
  std::vector<UnitCandidates> units;
  if (unit == FrocUnit::exam) {
    units.reserve(sample.size());
    for (const EvalExam* e : sample) {
      UnitCandidates u;
      u.unit_id = e->exam_id;
      for (const auto& img : e->images) {
        u.lesion_count += img.lesion_count;
        for (const auto& c : img.cands)
          u.cands.push_back({c.scores.at(model), c.positive, c.lesion_id});
      }
      units.push_back(std::move(u));
    }
  } else {
    for (const EvalExam* e : sample) {
      for (const auto& img : e->images) {
        UnitCandidates u;
        u.unit_id = img.image_id;
        u.lesion_count = img.lesion_count;
        for (const auto& c : img.cands)
          u.cands.push_back({c.scores.at(model), c.positive, c.lesion_id});
        units.push_back(std::move(u));
      }
    }
  }
  return units;
}

Metric metric_auc(int model) {
  return [model](const ExamSample& sample) -> std::optional<double> {
    const auto cands = flatten_candidates(sample, model);
    size_t n_pos = 0;
    for (const auto& c : cands) n_pos += c.positive ? 1 : 0;
    if (n_pos == 0 || n_pos == cands.size()) return std::nullopt;
    return roc_auc(cands);
  };
}

Metric metric_cpm(int model, FrocUnit unit) {
  return [model, unit](const ExamSample& sample) -> std::optional<double> {
    const auto units = make_units(sample, model, unit);
    int lesions = 0;
    for (const auto& u : units) lesions += u.lesion_count;
    if (lesions == 0) return std::nullopt;
    return cpm(froc(units, unit));
  };
}

Metric metric_auc_missing_contralateral(int model) {
  return [model](const ExamSample& sample) -> std::optional<double> {
    std::vector<ScoredCandidate> cands;
    for (const EvalExam* e : sample)
      for (const auto& img : e->images)
        for (const auto& c : img.cands)
          if (c.missing_contralateral) cands.push_back({c.scores.at(model), c.positive, c.lesion_id});
    size_t n_pos = 0;
    for (const auto& c : cands) n_pos += c.positive ? 1 : 0;
    if (cands.empty() || n_pos == 0 || n_pos == cands.size()) return std::nullopt;
    return roc_auc(cands);
  };
}

std::optional<double> apply_metric(const EvalData& data, const Metric& m) {
  ExamSample all;
  all.reserve(data.exams.size());
  for (const auto& e : data.exams) all.push_back(&e);
  return m(all);
}

namespace {

constexpr int kMaxRedrawsPerResample = 1000;

ExamSample draw_sample(const EvalData& data, Rng& rng) {
  const size_t m = data.exams.size();
  ExamSample s(m);
  for (size_t i = 0; i < m; ++i) s[i] = &data.exams[rng.below(m)];
  return s;
}

// Type-7 quantile (linear interpolation between order statistics).
double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) throw std::runtime_error("quantile of empty sample");
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto i = static_cast<size_t>(std::floor(h));
  if (i + 1 >= v.size()) return v.back();
  const double frac = h - static_cast<double>(i);
  return v[i] + frac * (v[i + 1] - v[i]);
}

}  // namespace

BootstrapInterval bootstrap_ci(const EvalData& data, const Metric& metric, int n, double level,
                               uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("bootstrap_ci: n must be positive");
  if (data.exams.empty()) throw std::runtime_error("bootstrap_ci: no exams");
  Rng rng(seed);
  std::vector<double> values;
  values.reserve(static_cast<size_t>(n));
  for (int rep = 0; rep < n; ++rep) {
    std::optional<double> v;
    int tries = 0;
    do {
      v = metric(draw_sample(data, rng));
      if (++tries > kMaxRedrawsPerResample)
        throw std::runtime_error("bootstrap_ci: metric undefined on repeated resamples");
    } while (!v.has_value());
    values.push_back(*v);
  }
  std::sort(values.begin(), values.end());
  const double alpha = 1.0 - level;
  return {quantile_sorted(values, alpha / 2.0), quantile_sorted(values, 1.0 - alpha / 2.0)};
}

double bootstrap_pvalue(const EvalData& data, const Metric& metric_a, const Metric& metric_b,
                        int n, uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("bootstrap_pvalue: n must be positive");
  if (data.exams.empty()) throw std::runtime_error("bootstrap_pvalue: no exams");
  Rng rng(seed);
  int non_improving = 0;
  for (int rep = 0; rep < n; ++rep) {
    std::optional<double> va, vb;
    int tries = 0;
    do {
      const ExamSample s = draw_sample(data, rng);
      va = metric_a(s);
      vb = metric_b(s);
      if (++tries > kMaxRedrawsPerResample)
        throw std::runtime_error("bootstrap_pvalue: metric undefined on repeated resamples");
    } while (!va.has_value() || !vb.has_value());
    if (*vb <= *va) ++non_improving;
  }
  return static_cast<double>(non_improving) / static_cast<double>(n);
}

}  // namespace symcad::eval
