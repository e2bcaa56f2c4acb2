#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "symcad/raster.hpp"
#include "symcad/rng.hpp"
#include "symcad/version.hpp"

namespace symcad::phantom {

enum class Laterality { left, right };
enum class View { mlo, cc };
enum class Vendor { ge, siemens, hologic };
enum class LesionShape { oval, irregular };

std::string to_string(Laterality l);
std::string to_string(View v);
std::string to_string(Vendor v);
std::string to_string(LesionShape s);

/// Ground-truth mass. `radius_px` is the equivalent-circle radius; the
/// rendered support is an oval or a harmonically perturbed oval derived
/// from `shape_seed`. Candidate labeling treats the support as the disc of
/// this radius.
struct Lesion {
  int row = 0;
  int col = 0;
  double radius_px = 0.0;
  LesionShape shape = LesionShape::oval;
  double contrast = 0.0;
  uint64_t shape_seed = 0;
};

struct PhantomConfig {
  int n_exams = 200;
  double malignant_fraction = 0.42;
  double missing_laterality_fraction = 0.183;
  std::array<double, 3> vendor_weights{2248.0 / 7196.0, 1518.0 / 7196.0, 3430.0 / 7196.0};
  int image_height_px = 600;
  int image_width_px = 450;
  double pixel_spacing_cm = 0.02;
  int mass_count_min = 1;
  int mass_count_max = 2;
  double mass_radius_min_cm = 0.4;
  double mass_radius_max_cm = 1.0;
  double mass_contrast_min = 0.18;
  double mass_contrast_max = 0.45;
  double asymmetry_texture_strength = 0.0;
  uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct ImageRecord {
  std::string image_id;
  std::string path;  // relative to the dataset root
  Laterality laterality = Laterality::left;
  View view = View::mlo;
  int rows = 0;
  int cols = 0;
  double pixel_spacing_cm = 0.0;
  uint64_t asym_seed = 0;
  std::vector<Lesion> lesions;
};

struct ExamRecord {
  std::string exam_id;
  std::string patient_id;
  Vendor vendor = Vendor::ge;
  bool malignant = false;
  std::string split;  // "", "train", "val", "test"
  uint64_t texture_seed_mlo = 0;
  uint64_t texture_seed_cc = 0;
  std::vector<ImageRecord> images;
};

struct DatasetManifest {
  int schema_version = 1;
  PhantomConfig config;
  std::vector<ExamRecord> exams;
};

/// In-memory rendered image plus its ground truth.
struct BreastImage {
  std::string image_id;
  Raster pixels;
  Laterality laterality = Laterality::left;
  View view = View::mlo;
  double pixel_spacing_cm = 0.0;
  std::vector<Lesion> lesions;
};

/// Decide every exam, image and lesion without rendering any pixels.
/// Deterministic in config.seed; image pixels are re-derivable from the
/// manifest alone via render_image.
DatasetManifest generate_dataset(const PhantomConfig& config);

struct RenderParams {
  int rows = 0;
  int cols = 0;
  double pixel_spacing_cm = 0.02;
  Laterality laterality = Laterality::left;
  double vendor_gamma = 1.0;
  double asymmetry_texture_strength = 0.0;
  // Mass-like structures shared by both sides: rendered with the same
  // profile machinery and intensity/size distributions as true lesions, so
  // a single patch cannot tell them apart; only the contralateral view can.
  int distractor_count_min = 2;
  int distractor_count_max = 5;
  double distractor_radius_min_px = 20.0;
  double distractor_radius_max_px = 50.0;
  double distractor_contrast_min = 0.18;
  double distractor_contrast_max = 0.45;
};

/// Render one breast. All shared structure (background, low-frequency
/// texture, compact distractor blobs) is drawn from texture_rng; when the
/// two sides of an exam are rendered with identically seeded texture_rng
/// streams and zero asymmetry strength, the right image is exactly the
/// horizontal flip of the left. Asymmetric perturbation comes from asym_rng
/// scaled by asymmetry_texture_strength. Lesion coordinates are in final
/// image coordinates (left: chest wall at column 0; right: mirrored).
Raster render_breast(const RenderParams& params, Rng& texture_rng, Rng& asym_rng,
                     const std::vector<Lesion>& lesions);

BreastImage render_image(const PhantomConfig& config, const ExamRecord& exam,
                         const ImageRecord& image);

double vendor_gamma(Vendor v);

/// Patient-level split, vendor-stratified; fills ExamRecord::split.
/// Ratios must be positive and sum to 1 within 1e-9.
void split_dataset(DatasetManifest& manifest, std::array<double, 3> ratios, uint64_t seed);

std::string manifest_to_json_string(const DatasetManifest& m, const Provenance& prov);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m,
                    const Provenance& prov);
DatasetManifest read_manifest(const std::filesystem::path& path, Provenance* prov = nullptr);

/// Canonical-frame breast outline (chest wall at column 0): elliptical
/// coordinate d(r, c) with d <= 1 inside the breast.
struct BreastOutline {
  double center_row = 0.0;
  double radius_rows = 1.0;
  double radius_cols = 1.0;
  double d(double r, double c) const {
    const double dr = (r - center_row) / radius_rows;
    const double dc = c / radius_cols;
    return std::sqrt(dr * dr + dc * dc);
  }
};
BreastOutline breast_outline(int rows, int cols);

}  // namespace symcad::phantom
