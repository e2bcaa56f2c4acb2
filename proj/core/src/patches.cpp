#include "symcad/patches.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace symcad::patches {

using nlohmann::json;

void AugmentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("augment config: " + field + " " + why);
  };
  if (blur_sigma_min <= 0.0) fail("blur_sigma_min", "must be positive");
  if (blur_sigma_max < blur_sigma_min) fail("blur_sigma_max", "must be >= blur_sigma_min");
  if (apply_probability < 0.0 || apply_probability > 1.0) fail("apply_probability", "must be in [0,1]");
  if (scale_min <= 0.0) fail("scale_min", "must be positive");
  if (scale_max < scale_min) fail("scale_max", "must be >= scale_min");
  if (translate_max_px < translate_min_px) fail("translate_max_px", "must be >= translate_min_px");
  if (rotate_max_deg < rotate_min_deg) fail("rotate_max_deg", "must be >= rotate_min_deg");
}

phantom::BreastImage mirror_contralateral(const phantom::BreastImage& image) {
  phantom::BreastImage out = image;
  out.pixels = flip_horizontal(image.pixels);
  for (auto& les : out.lesions) les.col = image.pixels.cols - 1 - les.col;
  return out;
}

Raster extract_patch(const Raster& img, int center_row, int center_col, int size_px) {
  if (size_px <= 0) throw std::invalid_argument("extract_patch: size_px must be positive");
  if (center_row < 0 || center_row >= img.rows || center_col < 0 || center_col >= img.cols)
    throw std::invalid_argument("extract_patch: center outside image");
  Raster out(size_px, size_px, 0.0f);
  const int r0 = center_row - size_px / 2;
  const int c0 = center_col - size_px / 2;
  for (int r = 0; r < size_px; ++r) {
    const int sr = r0 + r;
    if (sr < 0 || sr >= img.rows) continue;
    const int cs = std::max(0, -c0);
    const int ce = std::min(size_px, img.cols - c0);
    for (int c = cs; c < ce; ++c) out.at(r, c) = img.at(sr, c0 + c);
  }
  return out;
}

PatchPair extract_pair(const phantom::BreastImage& primary,
                       const phantom::BreastImage* contralateral, int center_row, int center_col,
                       int size_px) {
  PatchPair pair;
  pair.primary = extract_patch(primary.pixels, center_row, center_col, size_px);
  pair.image_id = primary.image_id;
  pair.center_row = center_row;
  pair.center_col = center_col;
  if (contralateral) {
    if (contralateral->pixels.rows != primary.pixels.rows ||
        contralateral->pixels.cols != primary.pixels.cols)
      throw std::runtime_error("extract_pair: image shape mismatch between lateralities");
    const Raster mirrored = flip_horizontal(contralateral->pixels);
    pair.contralateral = extract_patch(mirrored, center_row, center_col, size_px);
    pair.has_contralateral = true;
  } else {
    pair.contralateral = Raster(size_px, size_px, 0.0f);
    pair.has_contralateral = false;
  }
  return pair;
}

std::vector<candidates::Candidate> sample_negatives(
    const std::vector<candidates::Candidate>& cands, const std::vector<phantom::Lesion>& lesions,
    double pixel_spacing_cm, double min_lesion_dist_cm, double min_inter_dist_cm, Rng& rng) {
  if (pixel_spacing_cm <= 0.0) throw std::invalid_argument("sample_negatives: bad pixel spacing");
  for (const auto& c : cands)
    if (c.label == candidates::Label::unknown)
      throw std::invalid_argument("sample_negatives: unlabeled candidate");

  struct Entry {
    const candidates::Candidate* cand;
    uint64_t tie;
  };
  std::vector<Entry> negs;
  for (const auto& c : cands)
    if (c.label == candidates::Label::negative) negs.push_back({&c, rng.next()});
  std::sort(negs.begin(), negs.end(), [](const Entry& a, const Entry& b) {
    if (a.cand->score != b.cand->score) return a.cand->score > b.cand->score;
    return a.tie < b.tie;
  });

  const double min_lesion_px = min_lesion_dist_cm / pixel_spacing_cm;
  const double min_inter_px = min_inter_dist_cm / pixel_spacing_cm;
  std::vector<candidates::Candidate> kept;
  for (const auto& e : negs) {
    bool ok = true;
    for (const auto& les : lesions) {
      const double dr = e.cand->row - les.row, dc = e.cand->col - les.col;
      if (std::sqrt(dr * dr + dc * dc) < min_lesion_px) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    for (const auto& k : kept) {
      const double dr = e.cand->row - k.row, dc = e.cand->col - k.col;
      if (std::sqrt(dr * dr + dc * dc) < min_inter_px) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(*e.cand);
  }
  return kept;
}

namespace {

enum class Warp { scale, translate, rotate };

Raster warp_patch(const Raster& img, Warp kind, double p0, double p1) {
  Raster out(img.rows, img.cols, 0.0f);
  const double cy = 0.5 * (img.rows - 1);
  const double cx = 0.5 * (img.cols - 1);
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      double sr = r, sc = c;
      switch (kind) {
        case Warp::scale:
          sr = cy + (r - cy) / p0;
          sc = cx + (c - cx) / p0;
          break;
        case Warp::translate:
          sr = r - p0;
          sc = c - p1;
          break;
        case Warp::rotate: {
          const double a = -p0;  // inverse rotation
          const double ca = std::cos(a), sa = std::sin(a);
          const double dy = r - cy, dx = c - cx;
          sr = cy + dy * ca - dx * sa;
          sc = cx + dy * sa + dx * ca;
          break;
        }
      }
      out.at(r, c) = bilinear_sample(img, sr, sc);
    }
  }
  return out;
}

}  // namespace

PatchPair augment(const PatchPair& pair, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!pair.primary.same_shape(pair.contralateral))
    throw std::invalid_argument("augment: pair rasters differ in shape");
  PatchPair out = pair;

  if (pair.positive) {
    const bool flip = rng.bernoulli(0.5);
    const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    if (flip) {
      out.primary = flip_horizontal(out.primary);
      if (out.has_contralateral) out.contralateral = flip_horizontal(out.contralateral);
    }
    out.primary = gaussian_blur(out.primary, sigma);
    if (out.has_contralateral) out.contralateral = gaussian_blur(out.contralateral, sigma);
  }

  if (rng.bernoulli(cfg.apply_probability)) {
    const int which = static_cast<int>(rng.uniform_int(0, 2));
    Warp kind = Warp::scale;
    double p0 = 1.0, p1 = 0.0;
    if (which == 0) {
      kind = Warp::scale;
      p0 = rng.uniform(cfg.scale_min, cfg.scale_max);
    } else if (which == 1) {
      kind = Warp::translate;
      p0 = rng.uniform(cfg.translate_min_px, cfg.translate_max_px);
      p1 = rng.uniform(cfg.translate_min_px, cfg.translate_max_px);
    } else {
      kind = Warp::rotate;
      p0 = rng.uniform(cfg.rotate_min_deg, cfg.rotate_max_deg) * 3.14159265358979323846 / 180.0;
    }
    out.primary = warp_patch(out.primary, kind, p0, p1);
    if (out.has_contralateral) out.contralateral = warp_patch(out.contralateral, kind, p0, p1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch archive
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'Y', 'M', 'P', 'A', 'T', 'A', '1'};
constexpr uint32_t kArchiveVersion = 1;
constexpr uint32_t kDtypeF32LE = 1;

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void write_patch_archive(const std::filesystem::path& bin_path,
                         const std::filesystem::path& index_path,
                         const std::vector<PatchPair>& pairs, const Provenance& prov) {
  const int px = pairs.empty() ? 0 : pairs.front().primary.rows;
  for (const auto& p : pairs) {
    if (p.primary.rows != px || p.primary.cols != px || !p.primary.same_shape(p.contralateral))
      throw std::invalid_argument("write_patch_archive: inconsistent patch shapes");
  }
  std::ofstream f(bin_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + bin_path.string());
  f.write(kMagic, sizeof(kMagic));
  write_raw(f, kArchiveVersion);
  write_raw(f, static_cast<uint64_t>(pairs.size()));
  write_raw(f, static_cast<uint32_t>(px));
  write_raw(f, kDtypeF32LE);
  for (const auto& p : pairs) {
    const uint8_t label = p.positive ? 1 : 0;
    const uint8_t has_contra = p.has_contralateral ? 1 : 0;
    write_raw(f, label);
    write_raw(f, has_contra);
    f.write(reinterpret_cast<const char*>(p.primary.data.data()),
            static_cast<std::streamsize>(p.primary.size() * sizeof(float)));
    f.write(reinterpret_cast<const char*>(p.contralateral.data.data()),
            static_cast<std::streamsize>(p.contralateral.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("short write: " + bin_path.string());

  json idx;
  idx["schema_version"] = 1;
  idx["provenance"] = json{{"config_hash", hash_hex(prov.config_hash)},
                           {"seed", prov.seed},
                           {"tool_version", prov.tool_version}};
  idx["patch_px"] = px;
  idx["count"] = pairs.size();
  json records = json::array();
  for (const auto& p : pairs) {
    records.push_back(json{{"exam_id", p.exam_id},
                           {"image_id", p.image_id},
                           {"row", p.center_row},
                           {"col", p.center_col},
                           {"label", p.positive ? "positive" : "negative"},
                           {"has_contralateral", p.has_contralateral}});
  }
  idx["records"] = std::move(records);
  std::ofstream fi(index_path, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot open for write: " + index_path.string());
  fi << idx.dump(2) << "\n";
}

std::vector<PatchPair> read_patch_archive(const std::filesystem::path& bin_path,
                                          const std::filesystem::path& index_path) {
  std::ifstream f(bin_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open patch archive: " + bin_path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a patch archive: " + bin_path.string());
  const auto version = read_raw<uint32_t>(f);
  if (version != kArchiveVersion)
    throw std::runtime_error("patch archive version " + std::to_string(version) +
                             " is not supported (expected 1)");
  const auto count = read_raw<uint64_t>(f);
  const auto px = read_raw<uint32_t>(f);
  const auto dtype = read_raw<uint32_t>(f);
  if (dtype != kDtypeF32LE) throw std::runtime_error("patch archive: unsupported dtype");

  json idx;
  {
    std::ifstream fi(index_path);
    if (!fi) throw std::runtime_error("cannot open patch index: " + index_path.string());
    fi >> idx;
    if (idx.at("schema_version").get<int>() != 1)
      throw std::runtime_error("patch index schema version not supported: " + index_path.string());
    if (idx.at("count").get<uint64_t>() != count)
      throw std::runtime_error("patch index/archive count mismatch: " + index_path.string());
  }
  const auto& records = idx.at("records");

  std::vector<PatchPair> pairs;
  pairs.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    PatchPair p;
    const auto label = read_raw<uint8_t>(f);
    const auto has_contra = read_raw<uint8_t>(f);
    p.positive = label != 0;
    p.has_contralateral = has_contra != 0;
    p.primary = Raster(static_cast<int>(px), static_cast<int>(px));
    p.contralateral = Raster(static_cast<int>(px), static_cast<int>(px));
    f.read(reinterpret_cast<char*>(p.primary.data.data()),
           static_cast<std::streamsize>(p.primary.size() * sizeof(float)));
    f.read(reinterpret_cast<char*>(p.contralateral.data.data()),
           static_cast<std::streamsize>(p.contralateral.size() * sizeof(float)));
    if (!f) throw std::runtime_error("truncated patch archive: " + bin_path.string());
    const auto& rec = records.at(i);
    p.exam_id = rec.at("exam_id").get<std::string>();
    p.image_id = rec.at("image_id").get<std::string>();
    p.center_row = rec.at("row").get<int>();
    p.center_col = rec.at("col").get<int>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace symcad::patches
