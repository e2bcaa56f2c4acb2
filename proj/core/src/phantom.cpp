#include "symcad/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace symcad::phantom {

using nlohmann::json;

std::string to_string(Laterality l) { return l == Laterality::left ? "L" : "R"; }
std::string to_string(View v) { return v == View::mlo ? "MLO" : "CC"; }
std::string to_string(Vendor v) {
  switch (v) {
    case Vendor::ge: return "GE";
    case Vendor::siemens: return "Siemens";
    default: return "Hologic";
  }
}
std::string to_string(LesionShape s) { return s == LesionShape::oval ? "oval" : "irregular"; }

namespace {

Laterality laterality_from(const std::string& s) {
  if (s == "L") return Laterality::left;
  if (s == "R") return Laterality::right;
  throw std::runtime_error("manifest: bad laterality '" + s + "'");
}
View view_from(const std::string& s) {
  if (s == "MLO") return View::mlo;
  if (s == "CC") return View::cc;
  throw std::runtime_error("manifest: bad view '" + s + "'");
}
Vendor vendor_from(const std::string& s) {
  if (s == "GE") return Vendor::ge;
  if (s == "Siemens") return Vendor::siemens;
  if (s == "Hologic") return Vendor::hologic;
  throw std::runtime_error("manifest: bad vendor '" + s + "'");
}
LesionShape shape_from(const std::string& s) {
  if (s == "oval") return LesionShape::oval;
  if (s == "irregular") return LesionShape::irregular;
  throw std::runtime_error("manifest: bad lesion shape '" + s + "'");
}

}  // namespace

void PhantomConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("phantom config: " + field + " " + why);
  };
  if (n_exams <= 0) fail("n_exams", "must be positive");
  if (malignant_fraction < 0.0 || malignant_fraction > 1.0) fail("malignant_fraction", "must be in [0,1]");
  if (missing_laterality_fraction < 0.0 || missing_laterality_fraction > 1.0)
    fail("missing_laterality_fraction", "must be in [0,1]");
  double wsum = 0.0;
  for (double w : vendor_weights) {
    if (w < 0.0 || w > 1.0) fail("vendor_weights", "entries must be in [0,1]");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) fail("vendor_weights", "must sum to 1 within 1e-9");
  if (image_height_px < 32) fail("image_height_px", "must be >= 32");
  if (image_width_px < 32) fail("image_width_px", "must be >= 32");
  if (pixel_spacing_cm <= 0.0) fail("pixel_spacing_cm", "must be positive");
  if (mass_count_min < 1) fail("mass_count_min", "must be >= 1");
  if (mass_count_max < mass_count_min) fail("mass_count_max", "must be >= mass_count_min");
  if (mass_radius_min_cm <= 0.0) fail("mass_radius_min_cm", "must be positive");
  if (mass_radius_max_cm < mass_radius_min_cm) fail("mass_radius_max_cm", "must be >= mass_radius_min_cm");
  if (mass_contrast_min < 0.0) fail("mass_contrast_min", "must be >= 0");
  if (mass_contrast_max < mass_contrast_min) fail("mass_contrast_max", "must be >= mass_contrast_min");
  if (asymmetry_texture_strength < 0.0) fail("asymmetry_texture_strength", "must be >= 0");
}

BreastOutline breast_outline(int rows, int cols) {
  BreastOutline o;
  o.center_row = 0.5 * (rows - 1);
  o.radius_rows = 0.48 * rows;
  o.radius_cols = 0.80 * cols;
  return o;
}

double vendor_gamma(Vendor v) {
  switch (v) {
    case Vendor::ge: return 1.0;
    case Vendor::siemens: return 0.92;
    default: return 1.08;
  }
}

namespace {

struct Bump {
  double row, col, amp, sigma;
};

void accumulate_bump(RasterD& acc, const Bump& b) {
  const int reach = static_cast<int>(std::ceil(4.0 * b.sigma));
  const int r0 = std::max(0, static_cast<int>(std::floor(b.row)) - reach);
  const int r1 = std::min(acc.rows - 1, static_cast<int>(std::ceil(b.row)) + reach);
  const int c0 = std::max(0, static_cast<int>(std::floor(b.col)) - reach);
  const int c1 = std::min(acc.cols - 1, static_cast<int>(std::ceil(b.col)) + reach);
  const double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
  for (int r = r0; r <= r1; ++r) {
    const double dr = r - b.row;
    for (int c = c0; c <= c1; ++c) {
      const double dc = c - b.col;
      acc.at(r, c) += b.amp * std::exp(-(dr * dr + dc * dc) * inv2s2);
    }
  }
}

void accumulate_lesion(RasterD& acc, const Lesion& les) {
  Rng rng(les.shape_seed);
  const double R = les.radius_px;
  const int reach = static_cast<int>(std::ceil(1.6 * R));
  const int r0 = std::max(0, les.row - reach);
  const int r1 = std::min(acc.rows - 1, les.row + reach);
  const int c0 = std::max(0, les.col - reach);
  const int c1 = std::min(acc.cols - 1, les.col + reach);

  if (les.shape == LesionShape::oval) {
    const double phi = rng.uniform(0.0, 3.14159265358979323846);
    const double aspect = rng.uniform(1.05, 1.35);
    const double a = R * aspect, b = R / aspect;
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double dy = r - les.row, dx = c - les.col;
        const double xa = (dx * cphi + dy * sphi) / a;
        const double xb = (-dx * sphi + dy * cphi) / b;
        const double u2 = xa * xa + xb * xb;
        if (u2 < 1.0) acc.at(r, c) += les.contrast * std::pow(1.0 - u2, 0.6);
      }
    }
  } else {
    // Oval perturbed by low-order radial harmonics.
    double ak[4], pk[4];
    for (int k = 0; k < 4; ++k) {
      ak[k] = rng.uniform(-1.0, 1.0) * 0.22 / (k + 2);
      pk[k] = rng.uniform(0.0, 6.283185307179586477);
    }
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double dy = r - les.row, dx = c - les.col;
        const double dist = std::sqrt(dx * dx + dy * dy);
        if (dist > 1.5 * R) continue;
        const double theta = std::atan2(dy, dx);
        double rho = 1.0;
        for (int k = 0; k < 4; ++k) rho += ak[k] * std::cos((k + 2) * theta + pk[k]);
        rho *= R;
        const double u2 = (dist / rho) * (dist / rho);
        if (u2 < 1.0) acc.at(r, c) += les.contrast * std::pow(1.0 - u2, 0.6);
      }
    }
  }
}

// Chest wall at column 0; breast bulges toward larger columns.
Raster render_canonical(const RenderParams& p, Rng& texture_rng, Rng& asym_rng,
                        const std::vector<Lesion>& lesions) {
  const int rows = p.rows, cols = p.cols;
  const auto outline = breast_outline(rows, cols);
  const double scale = std::min(rows, cols);

  std::vector<Bump> bumps;
  // Low-frequency tissue texture, shared between the two sides of an exam.
  for (int i = 0; i < 14; ++i) {
    Bump b;
    b.row = outline.center_row + (2.0 * texture_rng.uniform() - 1.0) * 0.95 * outline.radius_rows;
    b.col = texture_rng.uniform() * 0.90 * outline.radius_cols;
    b.amp = (2.0 * texture_rng.uniform() - 1.0) * 0.05;
    b.sigma = texture_rng.uniform(0.055, 0.18) * scale;
    bumps.push_back(b);
  }
  // Mass-like bilateral distractors, drawn from the same appearance
  // distribution as true lesions.
  const int n_distract =
      static_cast<int>(texture_rng.uniform_int(p.distractor_count_min, p.distractor_count_max));
  std::vector<Lesion> distractors;
  for (int i = 0; i < n_distract; ++i) {
    Lesion d;
    d.radius_px = texture_rng.uniform(p.distractor_radius_min_px, p.distractor_radius_max_px);
    const int margin = static_cast<int>(std::ceil(d.radius_px)) + 8;
    d.row = static_cast<int>(outline.center_row +
                             (2.0 * texture_rng.uniform() - 1.0) * 0.70 * outline.radius_rows);
    d.col = static_cast<int>((0.10 + 0.55 * texture_rng.uniform()) * outline.radius_cols);
    d.contrast = texture_rng.uniform(p.distractor_contrast_min, p.distractor_contrast_max);
    d.shape = texture_rng.bernoulli(0.5) ? LesionShape::irregular : LesionShape::oval;
    d.shape_seed = texture_rng.next();
    if (d.row < margin || d.row >= rows - margin || d.col >= cols - margin) continue;
    distractors.push_back(d);
  }
  // Per-side perturbation; exactly zero when the strength is zero.
  for (int i = 0; i < 8; ++i) {
    Bump b;
    b.row = outline.center_row + (2.0 * asym_rng.uniform() - 1.0) * 0.95 * outline.radius_rows;
    b.col = asym_rng.uniform() * 0.90 * outline.radius_cols;
    b.amp = p.asymmetry_texture_strength * (2.0 * asym_rng.uniform() - 1.0) * 0.06;
    b.sigma = asym_rng.uniform(0.045, 0.13) * scale;
    bumps.push_back(b);
  }

  RasterD acc(rows, cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double d = outline.d(r, c);
      if (d <= 1.0) acc.at(r, c) = 0.42 + 0.22 * (1.0 - d * d);
    }
  }
  for (const auto& b : bumps)
    if (b.amp != 0.0) accumulate_bump(acc, b);
  for (const auto& d : distractors) accumulate_lesion(acc, d);
  for (const auto& les : lesions) accumulate_lesion(acc, les);

  Raster out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double d = outline.d(r, c);
      double v = 0.0;
      if (d < 1.0) {
        const double t = std::clamp((1.0 - d) / 0.06, 0.0, 1.0);
        const double taper = t * t * (3.0 - 2.0 * t);
        v = std::clamp(acc.at(r, c) * taper, 0.0, 1.0);
        if (p.vendor_gamma != 1.0) v = std::pow(v, p.vendor_gamma);
      }
      out.at(r, c) = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

Raster render_breast(const RenderParams& params, Rng& texture_rng, Rng& asym_rng,
                     const std::vector<Lesion>& lesions) {
  for (const auto& les : lesions) {
    if (les.radius_px <= 0.0) throw std::invalid_argument("render_breast: lesion radius_px must be positive");
    if (les.row < 0 || les.row >= params.rows || les.col < 0 || les.col >= params.cols)
      throw std::invalid_argument("render_breast: lesion center outside image bounds");
  }
  std::vector<Lesion> canon = lesions;
  if (params.laterality == Laterality::right)
    for (auto& les : canon) les.col = params.cols - 1 - les.col;
  Raster img = render_canonical(params, texture_rng, asym_rng, canon);
  if (params.laterality == Laterality::right) img = flip_horizontal(img);
  return img;
}

BreastImage render_image(const PhantomConfig& config, const ExamRecord& exam,
                         const ImageRecord& image) {
  RenderParams p;
  p.rows = image.rows;
  p.cols = image.cols;
  p.pixel_spacing_cm = image.pixel_spacing_cm;
  p.laterality = image.laterality;
  p.vendor_gamma = vendor_gamma(exam.vendor);
  p.asymmetry_texture_strength = config.asymmetry_texture_strength;
  p.distractor_radius_min_px = config.mass_radius_min_cm / config.pixel_spacing_cm;
  p.distractor_radius_max_px = config.mass_radius_max_cm / config.pixel_spacing_cm;
  p.distractor_contrast_min = config.mass_contrast_min;
  p.distractor_contrast_max = config.mass_contrast_max;
  Rng texture_rng(image.view == View::mlo ? exam.texture_seed_mlo : exam.texture_seed_cc);
  Rng asym_rng(image.asym_seed);
  BreastImage out;
  out.image_id = image.image_id;
  out.pixels = render_breast(p, texture_rng, asym_rng, image.lesions);
  out.laterality = image.laterality;
  out.view = image.view;
  out.pixel_spacing_cm = image.pixel_spacing_cm;
  out.lesions = image.lesions;
  return out;
}

namespace {

std::vector<int> largest_remainder(int n, const std::vector<double>& weights) {
  std::vector<int> counts(weights.size());
  std::vector<std::pair<double, size_t>> fracs;
  int assigned = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    const double exact = n * weights[i];
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    fracs.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(fracs.begin(), fracs.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < n - assigned; ++k) counts[fracs[static_cast<size_t>(k)].second] += 1;
  return counts;
}

std::string format_id(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%05d", prefix, i);
  return buf;
}

}  // namespace

DatasetManifest generate_dataset(const PhantomConfig& config) {
  config.validate();
  const int n = config.n_exams;
  DatasetManifest manifest;
  manifest.config = config;

  Rng assign_rng(mix_seed(config.seed, "assign"));

  const int n_mal = static_cast<int>(std::llround(n * config.malignant_fraction));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  assign_rng.shuffle(order);
  std::vector<uint8_t> malignant(n, 0);
  for (int k = 0; k < n_mal; ++k) malignant[order[k]] = 1;

  const int n_missing = static_cast<int>(std::llround(n * config.missing_laterality_fraction));
  assign_rng.shuffle(order);
  std::vector<uint8_t> missing(n, 0);
  for (int k = 0; k < n_missing; ++k) missing[order[k]] = 1;

  const auto vendor_counts =
      largest_remainder(n, {config.vendor_weights[0], config.vendor_weights[1], config.vendor_weights[2]});
  std::vector<Vendor> vendor_tags;
  vendor_tags.reserve(n);
  for (int k = 0; k < vendor_counts[0]; ++k) vendor_tags.push_back(Vendor::ge);
  for (int k = 0; k < vendor_counts[1]; ++k) vendor_tags.push_back(Vendor::siemens);
  for (int k = 0; k < vendor_counts[2]; ++k) vendor_tags.push_back(Vendor::hologic);
  assign_rng.shuffle(vendor_tags);

  const auto outline = breast_outline(config.image_height_px, config.image_width_px);
  const double min_lesion_sep_px = 2.5 / config.pixel_spacing_cm;

  for (int i = 0; i < n; ++i) {
    ExamRecord exam;
    exam.exam_id = format_id("E", i);
    exam.patient_id = format_id("P", i);
    exam.vendor = vendor_tags[static_cast<size_t>(i)];
    const uint64_t exam_seed = mix_seed(config.seed, static_cast<uint64_t>(i));
    exam.texture_seed_mlo = mix_seed(exam_seed, "tex_mlo");
    exam.texture_seed_cc = mix_seed(exam_seed, "tex_cc");

    std::vector<Laterality> lats;
    if (missing[i]) {
      Rng side_rng(mix_seed(exam_seed, "side"));
      lats.push_back(side_rng.bernoulli(0.5) ? Laterality::left : Laterality::right);
    } else {
      lats = {Laterality::left, Laterality::right};
    }

    for (Laterality lat : lats) {
      for (View view : {View::mlo, View::cc}) {
        ImageRecord img;
        img.image_id = exam.exam_id + "_" + to_string(lat) + "_" + to_string(view);
        img.path = "images/" + img.image_id + ".pgm";
        img.laterality = lat;
        img.view = view;
        img.rows = config.image_height_px;
        img.cols = config.image_width_px;
        img.pixel_spacing_cm = config.pixel_spacing_cm;
        img.asym_seed = mix_seed(exam_seed, "asym_" + to_string(lat) + "_" + to_string(view));
        exam.images.push_back(std::move(img));
      }
    }

    if (malignant[i]) {
      Rng les_rng(mix_seed(exam_seed, "lesions"));
      const Laterality affected =
          lats[static_cast<size_t>(les_rng.below(lats.size()))];
      const int count = static_cast<int>(les_rng.uniform_int(config.mass_count_min, config.mass_count_max));

      struct MassProto {
        double radius_px, contrast;
        LesionShape shape;
      };
      std::vector<MassProto> protos;
      for (int m = 0; m < count; ++m) {
        MassProto mp;
        mp.radius_px = les_rng.uniform(config.mass_radius_min_cm, config.mass_radius_max_cm) /
                       config.pixel_spacing_cm;
        mp.contrast = les_rng.uniform(config.mass_contrast_min, config.mass_contrast_max);
        mp.shape = les_rng.bernoulli(0.5) ? LesionShape::irregular : LesionShape::oval;
        protos.push_back(mp);
      }

      for (auto& img : exam.images) {
        if (img.laterality != affected) continue;
        for (const auto& mp : protos) {
          const int margin = static_cast<int>(std::ceil(mp.radius_px)) + 12;
          if (2 * margin >= img.rows || 2 * margin >= img.cols) continue;
          bool placed = false;
          for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const int r = static_cast<int>(les_rng.uniform_int(margin, img.rows - 1 - margin));
            const int c_canon = static_cast<int>(les_rng.uniform_int(margin, img.cols - 1 - margin));
            if (outline.d(r, c_canon) > 0.72) continue;
            const int c = affected == Laterality::right ? img.cols - 1 - c_canon : c_canon;
            bool clear = true;
            for (const auto& prev : img.lesions) {
              const double dr = prev.row - r, dc = prev.col - c;
              if (std::sqrt(dr * dr + dc * dc) < min_lesion_sep_px) {
                clear = false;
                break;
              }
            }
            if (!clear) continue;
            Lesion les;
            les.row = r;
            les.col = c;
            les.radius_px = mp.radius_px;
            les.shape = mp.shape;
            les.contrast = mp.contrast;
            les.shape_seed = les_rng.next();
            img.lesions.push_back(les);
            placed = true;
          }
        }
        if (img.lesions.empty()) {
          // Deterministic fallback: keep the exam truly malignant.
          Lesion les;
          les.row = static_cast<int>(outline.center_row);
          const int c_canon = static_cast<int>(0.35 * outline.radius_cols);
          les.col = affected == Laterality::right ? img.cols - 1 - c_canon : c_canon;
          les.radius_px = protos.front().radius_px;
          les.shape = protos.front().shape;
          les.contrast = protos.front().contrast;
          les.shape_seed = les_rng.next();
          img.lesions.push_back(les);
        }
      }
      exam.malignant = true;
    }

    manifest.exams.push_back(std::move(exam));
  }
  return manifest;
}

void split_dataset(DatasetManifest& manifest, std::array<double, 3> ratios, uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (r <= 0.0) throw std::invalid_argument("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1 within 1e-9");

  struct Patient {
    std::string id;
    Vendor vendor;
    std::vector<size_t> exam_indices;
  };
  std::vector<Patient> patients;
  for (size_t e = 0; e < manifest.exams.size(); ++e) {
    const auto& exam = manifest.exams[e];
    auto it = std::find_if(patients.begin(), patients.end(),
                           [&](const Patient& p) { return p.id == exam.patient_id; });
    if (it == patients.end()) {
      patients.push_back({exam.patient_id, exam.vendor, {e}});
    } else {
      it->exam_indices.push_back(e);
    }
  }
  if (patients.size() < 3) throw std::runtime_error("split_dataset: fewer than 3 patients");

  static const char* kSplits[3] = {"train", "val", "test"};
  Rng rng(mix_seed(seed, "split"));
  for (Vendor v : {Vendor::ge, Vendor::siemens, Vendor::hologic}) {
    std::vector<size_t> stratum;
    for (size_t p = 0; p < patients.size(); ++p)
      if (patients[p].vendor == v) stratum.push_back(p);
    rng.shuffle(stratum);
    const auto counts =
        largest_remainder(static_cast<int>(stratum.size()), {ratios[0], ratios[1], ratios[2]});
    size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (int k = 0; k < counts[static_cast<size_t>(s)]; ++k) {
        for (size_t e : patients[stratum[pos]].exam_indices)
          manifest.exams[e].split = kSplits[s];
        ++pos;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest JSON
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const PhantomConfig& c) {
  return json{{"n_exams", c.n_exams},
              {"malignant_fraction", c.malignant_fraction},
              {"missing_laterality_fraction", c.missing_laterality_fraction},
              {"vendor_weights", c.vendor_weights},
              {"image_height_px", c.image_height_px},
              {"image_width_px", c.image_width_px},
              {"pixel_spacing_cm", c.pixel_spacing_cm},
              {"mass_count_min", c.mass_count_min},
              {"mass_count_max", c.mass_count_max},
              {"mass_radius_min_cm", c.mass_radius_min_cm},
              {"mass_radius_max_cm", c.mass_radius_max_cm},
              {"mass_contrast_min", c.mass_contrast_min},
              {"mass_contrast_max", c.mass_contrast_max},
              {"asymmetry_texture_strength", c.asymmetry_texture_strength},
              {"seed", c.seed}};
}

PhantomConfig config_from_json(const json& j) {
  PhantomConfig c;
  c.n_exams = j.at("n_exams").get<int>();
  c.malignant_fraction = j.at("malignant_fraction").get<double>();
  c.missing_laterality_fraction = j.at("missing_laterality_fraction").get<double>();
  const auto w = j.at("vendor_weights").get<std::vector<double>>();
  if (w.size() != 3) throw std::runtime_error("manifest: vendor_weights must have 3 entries");
  std::copy(w.begin(), w.end(), c.vendor_weights.begin());
  c.image_height_px = j.at("image_height_px").get<int>();
  c.image_width_px = j.at("image_width_px").get<int>();
  c.pixel_spacing_cm = j.at("pixel_spacing_cm").get<double>();
  c.mass_count_min = j.at("mass_count_min").get<int>();
  c.mass_count_max = j.at("mass_count_max").get<int>();
  c.mass_radius_min_cm = j.at("mass_radius_min_cm").get<double>();
  c.mass_radius_max_cm = j.at("mass_radius_max_cm").get<double>();
  c.mass_contrast_min = j.at("mass_contrast_min").get<double>();
  c.mass_contrast_max = j.at("mass_contrast_max").get<double>();
  c.asymmetry_texture_strength = j.at("asymmetry_texture_strength").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

json provenance_to_json(const Provenance& p);
json provenance_to_json(const Provenance& p) {
  return json{{"config_hash", hash_hex(p.config_hash)},
              {"seed", p.seed},
              {"tool_version", p.tool_version}};
}

std::string manifest_to_json_string(const DatasetManifest& m, const Provenance& prov) {
  json j;
  j["schema_version"] = m.schema_version;
  j["provenance"] = provenance_to_json(prov);
  j["phantom_config"] = config_to_json(m.config);
  json exams = json::array();
  for (const auto& e : m.exams) {
    json je;
    je["exam_id"] = e.exam_id;
    je["patient_id"] = e.patient_id;
    je["vendor"] = to_string(e.vendor);
    je["malignant"] = e.malignant;
    je["split"] = e.split;
    je["texture_seed_mlo"] = e.texture_seed_mlo;
    je["texture_seed_cc"] = e.texture_seed_cc;
    json imgs = json::array();
    for (const auto& im : e.images) {
      json ji;
      ji["image_id"] = im.image_id;
      ji["path"] = im.path;
      ji["laterality"] = to_string(im.laterality);
      ji["view"] = to_string(im.view);
      ji["rows"] = im.rows;
      ji["cols"] = im.cols;
      ji["pixel_spacing_cm"] = im.pixel_spacing_cm;
      ji["asym_seed"] = im.asym_seed;
      json lesions = json::array();
      for (const auto& l : im.lesions) {
        lesions.push_back(json{{"row", l.row},
                               {"col", l.col},
                               {"radius_px", l.radius_px},
                               {"shape", to_string(l.shape)},
                               {"contrast", l.contrast},
                               {"shape_seed", l.shape_seed}});
      }
      ji["lesions"] = std::move(lesions);
      imgs.push_back(std::move(ji));
    }
    je["images"] = std::move(imgs);
    exams.push_back(std::move(je));
  }
  j["exams"] = std::move(exams);
  return j.dump(2) + "\n";
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m,
                    const Provenance& prov) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << manifest_to_json_string(m, prov);
}

DatasetManifest read_manifest(const std::filesystem::path& path, Provenance* prov) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path.string());
  json j;
  f >> j;
  const int schema = j.at("schema_version").get<int>();
  if (schema != 1)
    throw std::runtime_error("manifest schema version " + std::to_string(schema) +
                             " is not supported (expected 1); regenerate or migrate the dataset");
  DatasetManifest m;
  m.schema_version = schema;
  m.config = config_from_json(j.at("phantom_config"));
  if (prov) {
    const auto& jp = j.at("provenance");
    prov->config_hash = std::stoull(jp.at("config_hash").get<std::string>(), nullptr, 16);
    prov->seed = jp.at("seed").get<uint64_t>();
    prov->tool_version = jp.at("tool_version").get<std::string>();
  }
  for (const auto& je : j.at("exams")) {
    ExamRecord e;
    e.exam_id = je.at("exam_id").get<std::string>();
    e.patient_id = je.at("patient_id").get<std::string>();
    e.vendor = vendor_from(je.at("vendor").get<std::string>());
    e.malignant = je.at("malignant").get<bool>();
    e.split = je.at("split").get<std::string>();
    e.texture_seed_mlo = je.at("texture_seed_mlo").get<uint64_t>();
    e.texture_seed_cc = je.at("texture_seed_cc").get<uint64_t>();
    for (const auto& ji : je.at("images")) {
      ImageRecord im;
      im.image_id = ji.at("image_id").get<std::string>();
      im.path = ji.at("path").get<std::string>();
      im.laterality = laterality_from(ji.at("laterality").get<std::string>());
      im.view = view_from(ji.at("view").get<std::string>());
      im.rows = ji.at("rows").get<int>();
      im.cols = ji.at("cols").get<int>();
      im.pixel_spacing_cm = ji.at("pixel_spacing_cm").get<double>();
      im.asym_seed = ji.at("asym_seed").get<uint64_t>();
      for (const auto& jl : ji.at("lesions")) {
        Lesion l;
        l.row = jl.at("row").get<int>();
        l.col = jl.at("col").get<int>();
        l.radius_px = jl.at("radius_px").get<double>();
        l.shape = shape_from(jl.at("shape").get<std::string>());
        l.contrast = jl.at("contrast").get<double>();
        l.shape_seed = jl.at("shape_seed").get<uint64_t>();
        im.lesions.push_back(l);
      }
      e.images.push_back(std::move(im));
    }
    m.exams.push_back(std::move(e));
  }
  return m;
}

}  // namespace symcad::phantom
