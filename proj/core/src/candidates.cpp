#include "symcad/candidates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace symcad::candidates {

namespace {

struct ArcTable {
  int radius;
  // cos/sin of the non-negative angle offsets 0..k; negative offsets reuse
  // these values with the sine negated so the sample set is exactly
  // symmetric about the gradient direction.
  std::vector<std::pair<double, double>> steps;
};

std::vector<ArcTable> build_arcs(const DetectorParams& p) {
  std::vector<ArcTable> arcs;
  const int r0 = static_cast<int>(std::ceil(p.radius_min_px));
  const int r1 = static_cast<int>(std::floor(p.radius_max_px));
  for (int r = r0; r <= r1; r += std::max(1, p.radius_step)) {
    ArcTable t;
    t.radius = r;
    const int k = std::max(1, static_cast<int>(std::ceil(p.angle_tol_rad * r)));
    const double dphi = p.angle_tol_rad / k;
    for (int s = 0; s <= k; ++s) t.steps.emplace_back(std::cos(s * dphi), std::sin(s * dphi));
    arcs.push_back(std::move(t));
  }
  return arcs;
}

RasterD box_blur_normalized(const RasterD& img, int radius, int passes) {
  RasterD cur = img;
  std::vector<double> prefix;
  for (int pass = 0; pass < passes; ++pass) {
    // horizontal
    RasterD tmp(cur.rows, cur.cols);
    prefix.resize(static_cast<size_t>(cur.cols) + 1);
    for (int r = 0; r < cur.rows; ++r) {
      prefix[0] = 0.0;
      for (int c = 0; c < cur.cols; ++c) prefix[static_cast<size_t>(c) + 1] = prefix[static_cast<size_t>(c)] + cur.at(r, c);
      for (int c = 0; c < cur.cols; ++c) {
        const int lo = std::max(0, c - radius), hi = std::min(cur.cols - 1, c + radius);
        tmp.at(r, c) = (prefix[static_cast<size_t>(hi) + 1] - prefix[static_cast<size_t>(lo)]) / (hi - lo + 1);
      }
    }
    // vertical
    RasterD next(cur.rows, cur.cols);
    prefix.resize(static_cast<size_t>(cur.rows) + 1);
    for (int c = 0; c < cur.cols; ++c) {
      prefix[0] = 0.0;
      for (int r = 0; r < cur.rows; ++r) prefix[static_cast<size_t>(r) + 1] = prefix[static_cast<size_t>(r)] + tmp.at(r, c);
      for (int r = 0; r < cur.rows; ++r) {
        const int lo = std::max(0, r - radius), hi = std::min(cur.rows - 1, r + radius);
        next.at(r, c) = (prefix[static_cast<size_t>(hi) + 1] - prefix[static_cast<size_t>(lo)]) / (hi - lo + 1);
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

LikelihoodMap mass_likelihood(const phantom::BreastImage& image, const DetectorParams& params) {
  const Raster& px = image.pixels;
  const int H = px.rows, W = px.cols;
  if (params.radius_min_px <= 0.0 || params.radius_max_px < params.radius_min_px)
    throw std::invalid_argument("mass_likelihood: radius range must be positive");
  if (!all_finite(px)) throw std::runtime_error("mass_likelihood: non-finite pixels in " + image.image_id);

  LikelihoodMap out;
  out.source_image_id = image.image_id;
  out.values = RasterD(H, W, 0.0);
  if (H < 3 || W < 3) return out;

  RasterD raw(H, W);
  for (size_t i = 0; i < px.size(); ++i) raw.data[i] = px.data[i];

  RasterD hp = raw;
  if (params.background_radius_px > 0) {
    const RasterD bg = box_blur_normalized(raw, params.background_radius_px, 3);
    for (size_t i = 0; i < hp.size(); ++i) hp.data[i] = raw.data[i] - bg.data[i];
  }

  const auto arcs = build_arcs(params);

  // Gradient-convergence votes: every pixel with a significant gradient
  // votes for potential mass centers along a cone about its gradient
  // direction, at each radius in the configured range. Bright masses pull
  // surrounding gradients toward their center.
  RasterD votes(H, W, 0.0);
  const double min_mag2 = params.grad_magnitude_min * params.grad_magnitude_min;
  for (int r = 1; r < H - 1; ++r) {
    for (int c = 1; c < W - 1; ++c) {
      const double gx = 0.5 * (hp.at(r, c + 1) - hp.at(r, c - 1));
      const double gy = 0.5 * (hp.at(r + 1, c) - hp.at(r - 1, c));
      const double m2 = gx * gx + gy * gy;
      if (m2 < min_mag2) continue;
      const double inv = 1.0 / std::sqrt(m2);
      const double ux = gx * inv, uy = gy * inv;
      for (const auto& arc : arcs) {
        const double rad = arc.radius;
        for (size_t s = 0; s < arc.steps.size(); ++s) {
          const double cp = arc.steps[s].first, sp = arc.steps[s].second;
          {
            const double dx = ux * cp - uy * sp;
            const double dy = ux * sp + uy * cp;
            const int tr = r + static_cast<int>(std::llround(rad * dy));
            const int tc = c + static_cast<int>(std::llround(rad * dx));
            if (tr >= 0 && tr < H && tc >= 0 && tc < W) votes.at(tr, tc) += 1.0;
          }
          if (s > 0) {
            const double dx = ux * cp + uy * sp;
            const double dy = uy * cp - ux * sp;
            const int tr = r + static_cast<int>(std::llround(rad * dy));
            const int tc = c + static_cast<int>(std::llround(rad * dx));
            if (tr >= 0 && tr < H && tc >= 0 && tc < W) votes.at(tr, tc) += 1.0;
          }
        }
      }
    }
  }

  if (params.vote_smooth_sigma > 0.0)
    votes = gaussian_blur_normalized(votes, params.vote_smooth_sigma);

  // Oriented second-derivative (line/blob) response on the smoothed image.
  // Mass-preserving smoothing: a constant image must stay constant so the
  // response vanishes everywhere.
  const RasterD smoothed = gaussian_blur_normalized(hp, params.line_sigma);
  RasterD line(H, W, 0.0);
  for (int r = 1; r < H - 1; ++r) {
    for (int c = 1; c < W - 1; ++c) {
      const double ixx = smoothed.at(r, c + 1) - 2.0 * smoothed.at(r, c) + smoothed.at(r, c - 1);
      const double iyy = smoothed.at(r + 1, c) - 2.0 * smoothed.at(r, c) + smoothed.at(r - 1, c);
      const double ixy = 0.25 * (smoothed.at(r + 1, c + 1) - smoothed.at(r + 1, c - 1) -
                                 smoothed.at(r - 1, c + 1) + smoothed.at(r - 1, c - 1));
      const double h = 0.5 * (ixx + iyy);
      // Cap-selective: the response is the weakest of the four oriented
      // second derivatives, so one-directional ridges (e.g. the skin line)
      // score zero while dome-like structures score their flatter curvature.
      const double resp = std::min(std::min(-ixx, -iyy), std::min(-(h + ixy), -(h - ixy)));
      if (resp > 1e-12) line.at(r, c) = resp;  // keep rounding residue out of the max-normalization
    }
  }

  // Background suppression, then per-component max normalization and blend.
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if (raw.at(r, c) <= params.intensity_floor) {
        votes.at(r, c) = 0.0;
        line.at(r, c) = 0.0;
      }
    }
  }
  double vmax = 0.0, lmax = 0.0;
  for (size_t i = 0; i < votes.size(); ++i) {
    vmax = std::max(vmax, votes.data[i]);
    lmax = std::max(lmax, line.data[i]);
  }
  const double wline = params.line_weight;
  double cmax = 0.0;
  for (size_t i = 0; i < votes.size(); ++i) {
    const double v = vmax > 0.0 ? votes.data[i] / vmax : 0.0;
    const double l = lmax > 0.0 ? line.data[i] / lmax : 0.0;
    const double combined = (1.0 - wline) * v + wline * l;
    out.values.data[i] = combined;
    cmax = std::max(cmax, combined);
  }
  if (cmax > 0.0)
    for (double& v : out.values.data) v /= cmax;
  return out;
}

std::vector<Candidate> threshold_candidates(const LikelihoodMap& map, double threshold,
                                            int min_separation_px) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("threshold_candidates: threshold must be in [0,1]");
  const RasterD& v = map.values;
  const int H = v.rows, W = v.cols;

  // Peak plateaus: 8-connected sets of equal value with no strictly higher
  // neighbor. The peak set does not depend on the threshold, which filters
  // it from the bottom, so raising the threshold can only shrink the output
  // (the greedy separation pass below scans in score order and is therefore
  // prefix-stable).
  std::vector<Candidate> peaks;
  std::vector<uint8_t> seen(v.size(), 0);
  std::vector<int> stack;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const int idx = r * W + c;
      if (seen[idx]) continue;
      const double val = v.data[idx];
      if (!(val >= threshold && val > 0.0)) continue;
      // Flood the equal-value plateau; reject it if any neighbor is higher.
      stack.assign(1, idx);
      seen[idx] = 1;
      bool is_peak = true;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        const int cr = cur / W, cc = cur % W;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const int nr = cr + dr, nc = cc + dc;
            if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
            const int nidx = nr * W + nc;
            if (v.data[nidx] > val) is_peak = false;
            if (v.data[nidx] == val && !seen[nidx]) {
              seen[nidx] = 1;
              stack.push_back(nidx);
            }
          }
        }
      }
      if (!is_peak) continue;
      Candidate cand;
      cand.row = r;  // first row-major pixel of the plateau
      cand.col = c;
      cand.score = val;
      cand.image_id = map.source_image_id;
      peaks.push_back(cand);
    }
  }

  std::sort(peaks.begin(), peaks.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });

  std::vector<Candidate> kept;
  const double min_sep = static_cast<double>(min_separation_px);
  for (const auto& cand : peaks) {
    bool ok = true;
    for (const auto& k : kept) {
      const double dr = cand.row - k.row, dc = cand.col - k.col;
      if (std::sqrt(dr * dr + dc * dc) < min_sep) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(cand);
  }
  return kept;
}

void label_candidates(std::vector<Candidate>& cands, const std::vector<phantom::Lesion>& lesions) {
  for (auto& cand : cands) {
    cand.label = Label::negative;
    cand.lesion_id = -1;
    double best = -1.0;
    for (size_t li = 0; li < lesions.size(); ++li) {
      const double dr = cand.row - lesions[li].row;
      const double dc = cand.col - lesions[li].col;
      const double dist = std::sqrt(dr * dr + dc * dc);
      if (dist <= lesions[li].radius_px && (best < 0.0 || dist < best)) {
        best = dist;
        cand.label = Label::positive;
        cand.lesion_id = static_cast<int>(li);
      }
    }
  }
}

std::string to_string(Label l) {
  switch (l) {
    case Label::positive: return "positive";
    case Label::negative: return "negative";
    default: return "unknown";
  }
}

Label label_from(const std::string& s) {
  if (s == "positive") return Label::positive;
  if (s == "negative") return Label::negative;
  if (s == "unknown") return Label::unknown;
  throw std::runtime_error("bad candidate label: '" + s + "'");
}

void write_candidates_csv(const std::filesystem::path& path, const std::vector<Candidate>& cands,
                          const Provenance& prov, const std::vector<double>* model_scores) {
  if (model_scores && model_scores->size() != cands.size())
    throw std::invalid_argument("write_candidates_csv: model_scores size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  char buf[64];
  f << "# schema_version=1\n";
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(prov.config_hash));
  f << "# config_hash=" << buf << "\n";
  f << "# seed=" << prov.seed << "\n";
  f << "# tool_version=" << prov.tool_version << "\n";
  f << "exam_id,image_id,row,col,score,label";
  if (model_scores) f << ",model_score";
  f << "\n";
  for (size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands[i];
    std::snprintf(buf, sizeof(buf), "%.17g", c.score);
    f << c.exam_id << "," << c.image_id << "," << c.row << "," << c.col << "," << buf << ","
      << to_string(c.label);
    if (model_scores) {
      std::snprintf(buf, sizeof(buf), "%.17g", (*model_scores)[i]);
      f << "," << buf;
    }
    f << "\n";
  }
}

CandidateCsv read_candidates_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open candidates csv: " + path.string());
  CandidateCsv out;
  std::string line;
  bool saw_header = false, saw_schema = false, has_model = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# schema_version=", 0) == 0) {
        saw_schema = true;
        if (line != "# schema_version=1")
          throw std::runtime_error("candidates csv schema version not supported: " + path.string());
      } else if (line.rfind("# config_hash=", 0) == 0) {
        out.prov.config_hash = std::stoull(line.substr(14), nullptr, 16);
      } else if (line.rfind("# seed=", 0) == 0) {
        out.prov.seed = std::stoull(line.substr(7));
      } else if (line.rfind("# tool_version=", 0) == 0) {
        out.prov.tool_version = line.substr(15);
      }
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) fields.push_back(tok);
    if (!saw_header) {
      if (fields.size() < 6 || fields[0] != "exam_id")
        throw std::runtime_error("candidates csv: bad header in " + path.string());
      has_model = fields.size() == 7 && fields[6] == "model_score";
      saw_header = true;
      continue;
    }
    if (fields.size() != (has_model ? 7u : 6u))
      throw std::runtime_error("candidates csv: bad row in " + path.string());
    Candidate c;
    c.exam_id = fields[0];
    c.image_id = fields[1];
    c.row = std::stoi(fields[2]);
    c.col = std::stoi(fields[3]);
    c.score = std::stod(fields[4]);
    c.label = label_from(fields[5]);
    out.cands.push_back(std::move(c));
    if (has_model) out.model_scores.push_back(std::stod(fields[6]));
  }
  if (!saw_schema) throw std::runtime_error("candidates csv: missing schema_version: " + path.string());
  if (!saw_header) throw std::runtime_error("candidates csv: missing header: " + path.string());
  return out;
}

}  // namespace symcad::candidates
