#include "symcad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>

#include "json.hpp"
#include "symcad/eval.hpp"

namespace symcad::pipeline {

using nlohmann::json;
using nnet::ModelKind;

PipelineConfig PipelineConfig::from_config(const ConfigMap& cfg) {
  PipelineConfig pc;

  auto& ph = pc.phantom_cfg;
  ph.n_exams = static_cast<int>(cfg.get_i64("phantom.n_exams", ph.n_exams));
  ph.malignant_fraction = cfg.get_f64("phantom.malignant_fraction", ph.malignant_fraction);
  ph.missing_laterality_fraction =
      cfg.get_f64("phantom.missing_laterality_fraction", ph.missing_laterality_fraction);
  if (cfg.has("phantom.vendor_weights")) {
    const auto w = cfg.get_f64_list("phantom.vendor_weights");
    if (w.size() != 3) throw std::runtime_error("config key 'phantom.vendor_weights': need 3 entries");
    std::copy(w.begin(), w.end(), ph.vendor_weights.begin());
  }
  ph.image_height_px = static_cast<int>(cfg.get_i64("phantom.image_height_px", ph.image_height_px));
  ph.image_width_px = static_cast<int>(cfg.get_i64("phantom.image_width_px", ph.image_width_px));
  ph.pixel_spacing_cm = cfg.get_f64("phantom.pixel_spacing_cm", ph.pixel_spacing_cm);
  ph.mass_count_min = static_cast<int>(cfg.get_i64("phantom.mass_count_min", ph.mass_count_min));
  ph.mass_count_max = static_cast<int>(cfg.get_i64("phantom.mass_count_max", ph.mass_count_max));
  ph.mass_radius_min_cm = cfg.get_f64("phantom.mass_radius_min_cm", ph.mass_radius_min_cm);
  ph.mass_radius_max_cm = cfg.get_f64("phantom.mass_radius_max_cm", ph.mass_radius_max_cm);
  ph.mass_contrast_min = cfg.get_f64("phantom.mass_contrast_min", ph.mass_contrast_min);
  ph.mass_contrast_max = cfg.get_f64("phantom.mass_contrast_max", ph.mass_contrast_max);
  ph.asymmetry_texture_strength =
      cfg.get_f64("phantom.asymmetry_texture_strength", ph.asymmetry_texture_strength);
  ph.seed = cfg.get_u64("phantom.seed");

  pc.split_ratios = {cfg.get_f64("split.train", 0.5), cfg.get_f64("split.val", 0.1),
                     cfg.get_f64("split.test", 0.4)};
  pc.split_seed = cfg.get_u64("split.seed");

  auto& det = pc.detector;
  det.radius_min_px = cfg.get_f64("candidates.radius_min_px", det.radius_min_px);
  det.radius_max_px = cfg.get_f64("candidates.radius_max_px", det.radius_max_px);
  det.radius_step = static_cast<int>(cfg.get_i64("candidates.radius_step", det.radius_step));
  det.angle_tol_rad = cfg.get_f64("candidates.angle_tol_rad", det.angle_tol_rad);
  det.grad_magnitude_min = cfg.get_f64("candidates.grad_magnitude_min", det.grad_magnitude_min);
  det.vote_smooth_sigma = cfg.get_f64("candidates.vote_smooth_sigma", det.vote_smooth_sigma);
  det.background_radius_px =
      static_cast<int>(cfg.get_i64("candidates.background_radius_px", det.background_radius_px));
  det.line_sigma = cfg.get_f64("candidates.line_sigma", det.line_sigma);
  det.line_weight = cfg.get_f64("candidates.line_weight", det.line_weight);
  det.intensity_floor = cfg.get_f64("candidates.intensity_floor", det.intensity_floor);
  pc.cand_threshold = cfg.get_f64("candidates.threshold");
  pc.min_separation_px =
      static_cast<int>(cfg.get_i64("candidates.min_separation_px", pc.min_separation_px));
  pc.max_per_image = static_cast<int>(cfg.get_i64("candidates.max_per_image", pc.max_per_image));

  pc.patch_extract_px = static_cast<int>(cfg.get_i64("patches.extract_px", pc.patch_extract_px));
  pc.patch_store_px = static_cast<int>(cfg.get_i64("patches.store_px", pc.patch_store_px));
  pc.min_lesion_dist_cm = cfg.get_f64("patches.min_lesion_dist_cm", pc.min_lesion_dist_cm);
  pc.min_inter_dist_cm = cfg.get_f64("patches.min_inter_dist_cm", pc.min_inter_dist_cm);
  pc.val_negative_cap = static_cast<int>(cfg.get_i64("patches.val_negative_cap", pc.val_negative_cap));
  pc.patches_seed = cfg.get_u64("patches.seed");

  auto& aug = pc.aug;
  aug.blur_sigma_min = cfg.get_f64("augment.blur_sigma_min", aug.blur_sigma_min);
  aug.blur_sigma_max = cfg.get_f64("augment.blur_sigma_max", aug.blur_sigma_max);
  aug.apply_probability = cfg.get_f64("augment.apply_probability", aug.apply_probability);
  aug.scale_min = cfg.get_f64("augment.scale_min", aug.scale_min);
  aug.scale_max = cfg.get_f64("augment.scale_max", aug.scale_max);
  aug.translate_min_px = cfg.get_f64("augment.translate_min_px", aug.translate_min_px);
  aug.translate_max_px = cfg.get_f64("augment.translate_max_px", aug.translate_max_px);
  aug.rotate_min_deg = cfg.get_f64("augment.rotate_min_deg", aug.rotate_min_deg);
  aug.rotate_max_deg = cfg.get_f64("augment.rotate_max_deg", aug.rotate_max_deg);

  auto& net = pc.net;
  net.conv_filters = {8, 16, 32};
  net.dense_units = {64, 64, 2};
  net.input_size_px = pc.patch_store_px;
  if (cfg.has("net.conv_filters")) {
    net.conv_filters.clear();
    for (int64_t f : cfg.get_i64_list("net.conv_filters")) net.conv_filters.push_back(static_cast<int>(f));
  }
  net.conv_kernel = static_cast<int>(cfg.get_i64("net.conv_kernel", net.conv_kernel));
  net.pool_window = static_cast<int>(cfg.get_i64("net.pool_window", net.pool_window));
  net.pool_stride = static_cast<int>(cfg.get_i64("net.pool_stride", net.pool_stride));
  if (cfg.has("net.dense_units")) {
    net.dense_units.clear();
    for (int64_t u : cfg.get_i64_list("net.dense_units")) net.dense_units.push_back(static_cast<int>(u));
  }
  net.dropout_rate = cfg.get_f64("net.dropout_rate", net.dropout_rate);
  net.input_size_px = static_cast<int>(cfg.get_i64("net.input_px", pc.patch_store_px));

  pc.initial_lr_baseline = cfg.get_f64("train.initial_lr_baseline", pc.initial_lr_baseline);
  pc.initial_lr_symmetry = cfg.get_f64("train.initial_lr_symmetry", pc.initial_lr_symmetry);
  pc.momentum = cfg.get_f64("train.momentum", pc.momentum);
  pc.decay_denominator = cfg.get_f64("train.decay_denominator", pc.decay_denominator);
  pc.batch_size = static_cast<int>(cfg.get_i64("train.batch_size", pc.batch_size));
  pc.patience_epochs = static_cast<int>(cfg.get_i64("train.patience_epochs", pc.patience_epochs));
  pc.max_epochs = static_cast<int>(cfg.get_i64("train.max_epochs", pc.max_epochs));
  pc.train_augment = cfg.get_bool("train.augment", pc.train_augment);
  pc.train_seed = cfg.get_u64("train.seed");

  pc.bootstrap_n = static_cast<int>(cfg.get_i64("eval.bootstrap_n", pc.bootstrap_n));
  pc.bootstrap_level = cfg.get_f64("eval.level", pc.bootstrap_level);
  pc.eval_seed = cfg.get_u64("eval.seed");

  const auto unknown = cfg.unknown_keys();
  if (!unknown.empty()) throw std::runtime_error("unknown config key: " + unknown.front());

  ph.validate();
  aug.validate();
  net.validate();
  if (pc.cand_threshold < 0.0 || pc.cand_threshold > 1.0)
    throw std::runtime_error("config key 'candidates.threshold': must be in [0,1]");
  if (net.input_size_px != pc.patch_store_px)
    throw std::runtime_error("config: net.input_px must equal patches.store_px");

  pc.config_hash = cfg.hash();
  return pc;
}

namespace {

Provenance make_prov(const PipelineConfig& cfg, uint64_t seed) {
  Provenance p;
  p.config_hash = cfg.config_hash;
  p.seed = seed;
  return p;
}

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json prov_json(const Provenance& p) {
  return json{{"config_hash", hash_hex(p.config_hash)}, {"seed", p.seed}, {"tool_version", p.tool_version}};
}

phantom::BreastImage load_image(const StagePaths& paths, const phantom::ExamRecord& exam,
                                const phantom::ImageRecord& rec) {
  (void)exam;
  phantom::BreastImage img;
  img.image_id = rec.image_id;
  img.pixels = read_pgm16(paths.out / rec.path);
  if (img.pixels.rows != rec.rows || img.pixels.cols != rec.cols)
    throw std::runtime_error("image shape mismatch vs manifest: " + rec.image_id);
  img.laterality = rec.laterality;
  img.view = rec.view;
  img.pixel_spacing_cm = rec.pixel_spacing_cm;
  img.lesions = rec.lesions;
  return img;
}

/// The same-view image of the opposite breast, or null when absent.
const phantom::ImageRecord* find_contralateral(const phantom::ExamRecord& exam,
                                               const phantom::ImageRecord& rec) {
  for (const auto& other : exam.images)
    if (other.view == rec.view && other.laterality != rec.laterality) return &other;
  return nullptr;
}

Raster prep_patch(const PipelineConfig& cfg, const Raster& patch) {
  if (cfg.patch_store_px == cfg.patch_extract_px) return patch;
  return resize_bilinear(patch, cfg.patch_store_px, cfg.patch_store_px);
}

}  // namespace

void cmd_phantom(const PipelineConfig& cfg, const StagePaths& paths) {
  auto manifest = phantom::generate_dataset(cfg.phantom_cfg);
  phantom::split_dataset(manifest, cfg.split_ratios, cfg.split_seed);

  std::filesystem::create_directories(paths.images_dir());
  const Provenance prov = make_prov(cfg, cfg.phantom_cfg.seed);
  const std::vector<std::string> comments = {
      "config_hash=" + hash_hex(prov.config_hash), "seed=" + std::to_string(prov.seed),
      "tool_version=" + prov.tool_version};

  struct Job {
    const phantom::ExamRecord* exam;
    const phantom::ImageRecord* image;
  };
  std::vector<Job> jobs;
  for (const auto& exam : manifest.exams)
    for (const auto& image : exam.images) jobs.push_back({&exam, &image});

#pragma omp parallel for schedule(dynamic)
  for (size_t j = 0; j < jobs.size(); ++j) {
    const auto img = phantom::render_image(cfg.phantom_cfg, *jobs[j].exam, *jobs[j].image);
    write_pgm16(paths.out / jobs[j].image->path, img.pixels, comments);
  }

  phantom::write_manifest(paths.manifest(), manifest, prov);
}

void cmd_candidates(const PipelineConfig& cfg, const StagePaths& paths) {
  const auto manifest = phantom::read_manifest(paths.manifest());
  std::filesystem::create_directories(paths.candidates_dir());

  struct Job {
    const phantom::ExamRecord* exam;
    const phantom::ImageRecord* image;
  };
  std::vector<Job> jobs;
  for (const auto& exam : manifest.exams)
    for (const auto& image : exam.images) jobs.push_back({&exam, &image});

  std::vector<std::vector<candidates::Candidate>> per_image(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t j = 0; j < jobs.size(); ++j) {
    const auto img = load_image(paths, *jobs[j].exam, *jobs[j].image);
    const auto likelihood = candidates::mass_likelihood(img, cfg.detector);
    auto cands =
        candidates::threshold_candidates(likelihood, cfg.cand_threshold, cfg.min_separation_px);
    if (cfg.max_per_image > 0 && static_cast<int>(cands.size()) > cfg.max_per_image)
      cands.resize(static_cast<size_t>(cfg.max_per_image));
    candidates::label_candidates(cands, img.lesions);
    for (auto& c : cands) c.exam_id = jobs[j].exam->exam_id;
    per_image[j] = std::move(cands);
  }

  const Provenance prov = make_prov(cfg, cfg.phantom_cfg.seed);
  for (const std::string split : {"train", "val", "test"}) {
    std::vector<candidates::Candidate> all;
    for (size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].exam->split != split) continue;
      all.insert(all.end(), per_image[j].begin(), per_image[j].end());
    }
    candidates::write_candidates_csv(paths.candidates_csv(split), all, prov);
  }
}

void cmd_patches(const PipelineConfig& cfg, const StagePaths& paths) {
  const auto manifest = phantom::read_manifest(paths.manifest());
  std::filesystem::create_directories(paths.patches_dir());

  for (const std::string split : {"train", "val"}) {
    const auto csv = candidates::read_candidates_csv(paths.candidates_csv(split));

    std::map<std::string, std::vector<candidates::Candidate>> by_image;
    for (const auto& c : csv.cands) by_image[c.image_id].push_back(c);

    std::vector<const phantom::ExamRecord*> split_exams;
    for (const auto& exam : manifest.exams)
      if (exam.split == split) split_exams.push_back(&exam);

    std::vector<std::vector<patches::PatchPair>> per_exam(split_exams.size());
#pragma omp parallel for schedule(dynamic)
    for (size_t e = 0; e < split_exams.size(); ++e) {
      const auto& exam = *split_exams[e];
      std::map<std::string, phantom::BreastImage> images;
      std::map<std::string, Raster> mirrored;  // contralateral in primary frame
      for (const auto& rec : exam.images) images[rec.image_id] = load_image(paths, exam, rec);

      std::vector<patches::PatchPair>& out = per_exam[e];
      for (const auto& rec : exam.images) {
        const auto it = by_image.find(rec.image_id);
        if (it == by_image.end()) continue;
        const auto& img = images.at(rec.image_id);

        std::vector<candidates::Candidate> selected;
        for (const auto& c : it->second)
          if (c.label == candidates::Label::positive) selected.push_back(c);
        if (split == "train") {
          Rng neg_rng(mix_seed(cfg.patches_seed, rec.image_id));
          const auto negs =
              patches::sample_negatives(it->second, img.lesions, rec.pixel_spacing_cm,
                                        cfg.min_lesion_dist_cm, cfg.min_inter_dist_cm, neg_rng);
          selected.insert(selected.end(), negs.begin(), negs.end());
        } else {
          for (const auto& c : it->second)
            if (c.label == candidates::Label::negative) selected.push_back(c);
        }

        const phantom::ImageRecord* contra_rec = find_contralateral(exam, rec);
        const Raster* contra_mirrored = nullptr;
        if (contra_rec) {
          auto mit = mirrored.find(contra_rec->image_id);
          if (mit == mirrored.end())
            mit = mirrored.emplace(contra_rec->image_id,
                                   flip_horizontal(images.at(contra_rec->image_id).pixels))
                      .first;
          contra_mirrored = &mit->second;
        }

        for (const auto& c : selected) {
          patches::PatchPair pair;
          pair.primary = prep_patch(cfg, patches::extract_patch(img.pixels, c.row, c.col,
                                                               cfg.patch_extract_px));
          if (contra_mirrored) {
            pair.contralateral = prep_patch(
                cfg, patches::extract_patch(*contra_mirrored, c.row, c.col, cfg.patch_extract_px));
            pair.has_contralateral = true;
          } else {
            pair.contralateral = Raster(cfg.patch_store_px, cfg.patch_store_px, 0.0f);
            pair.has_contralateral = false;
          }
          pair.positive = c.label == candidates::Label::positive;
          pair.exam_id = c.exam_id;
          pair.image_id = c.image_id;
          pair.center_row = c.row;
          pair.center_col = c.col;
          out.push_back(std::move(pair));
        }
      }
    }

    std::vector<patches::PatchPair> pairs;
    for (auto& v : per_exam)
      for (auto& p : v) pairs.push_back(std::move(p));

    // Validation negatives: uniform subsample down to the cap so that the
    // per-epoch AUC stays cheap; positives are always kept.
    if (split == "val" && cfg.val_negative_cap > 0) {
      std::vector<size_t> neg_idx;
      for (size_t i = 0; i < pairs.size(); ++i)
        if (!pairs[i].positive) neg_idx.push_back(i);
      if (static_cast<int>(neg_idx.size()) > cfg.val_negative_cap) {
        Rng rng(mix_seed(cfg.patches_seed, "val_cap"));
        rng.shuffle(neg_idx);
        neg_idx.resize(static_cast<size_t>(cfg.val_negative_cap));
        std::sort(neg_idx.begin(), neg_idx.end());
        std::vector<patches::PatchPair> kept;
        size_t ni = 0;
        for (size_t i = 0; i < pairs.size(); ++i) {
          if (pairs[i].positive) {
            kept.push_back(std::move(pairs[i]));
          } else if (ni < neg_idx.size() && neg_idx[ni] == i) {
            kept.push_back(std::move(pairs[i]));
            ++ni;
          }
        }
        pairs = std::move(kept);
      }
    }

    patches::write_patch_archive(paths.patches_bin(split), paths.patches_index(split), pairs,
                                 make_prov(cfg, cfg.patches_seed));
  }
}

void cmd_train(const PipelineConfig& cfg, const StagePaths& paths, ModelKind kind) {
  auto train_pairs = patches::read_patch_archive(paths.patches_bin("train"), paths.patches_index("train"));
  auto val_pairs = patches::read_patch_archive(paths.patches_bin("val"), paths.patches_index("val"));
  const auto train_set = trainer::PatchDataset::from_pairs(std::move(train_pairs));
  const auto val_set = trainer::PatchDataset::from_pairs(std::move(val_pairs));

  nnet::NetworkSpec spec = cfg.net;
  spec.kind = kind;
  spec.validate();

  trainer::TrainConfig tc;
  tc.initial_lr = kind == ModelKind::baseline ? cfg.initial_lr_baseline : cfg.initial_lr_symmetry;
  tc.momentum = cfg.momentum;
  tc.decay = tc.initial_lr / cfg.decay_denominator;
  tc.batch_size = cfg.batch_size;
  tc.patience_epochs = cfg.patience_epochs;
  tc.max_epochs = cfg.max_epochs;
  tc.seed = mix_seed(cfg.train_seed, nnet::to_string(kind));
  tc.augment = cfg.train_augment;
  tc.aug = cfg.aug;

  nnet::Parameters<float> init;
  if (kind == ModelKind::baseline) {
    Rng rng(mix_seed(cfg.train_seed, "baseline_init"));
    init = nnet::glorot_init<float>(spec, rng);
  } else {
    if (!std::filesystem::exists(paths.checkpoint(ModelKind::baseline)))
      throw std::runtime_error(
          "train --model symmetry needs the baseline checkpoint; run train --model baseline first");
    const auto base = nnet::load_checkpoint(paths.checkpoint(ModelKind::baseline));
    Rng rng(mix_seed(cfg.train_seed, "transfer"));
    init = trainer::transfer_from_baseline(base.params, spec, rng);
  }

  const auto result = trainer::train(spec, std::move(init), train_set, val_set, tc,
                                     [&](const trainer::EpochStats& s) {
                                       std::fprintf(stderr,
                                                    "[train %s] epoch %d loss %.4f lr %.3e val_auc %.4f%s\n",
                                                    nnet::to_string(kind).c_str(), s.epoch, s.mean_loss,
                                                    s.lr_last, s.val_auc, s.best_so_far ? " *" : "");
                                     });

  std::filesystem::create_directories(paths.checkpoints_dir());
  const Provenance prov = make_prov(cfg, cfg.train_seed);
  nnet::save_checkpoint(paths.checkpoint(kind), spec, result.best_params, result.best_epoch,
                        result.best_val_auc, prov);
  trainer::write_training_log(paths.train_log(kind), result.history, prov);
}

namespace {

struct TestCandidate {
  candidates::Candidate cand;
  bool missing_contralateral = false;
  double baseline_score = 0.0;
  double symmetry_score = 0.0;
};

}  // namespace

void cmd_eval(const PipelineConfig& cfg, const StagePaths& paths) {
  const auto manifest = phantom::read_manifest(paths.manifest());
  const auto csv = candidates::read_candidates_csv(paths.candidates_csv("test"));
  const auto base_ckpt = nnet::load_checkpoint(paths.checkpoint(ModelKind::baseline));
  const auto sym_ckpt = nnet::load_checkpoint(paths.checkpoint(ModelKind::symmetry));
  std::filesystem::create_directories(paths.eval_dir());

  std::map<std::string, std::vector<candidates::Candidate>> by_image;
  for (const auto& c : csv.cands) by_image[c.image_id].push_back(c);

  std::vector<const phantom::ExamRecord*> test_exams;
  for (const auto& exam : manifest.exams)
    if (exam.split == "test") test_exams.push_back(&exam);
  if (test_exams.empty()) throw std::runtime_error("cmd_eval: no test exams in manifest");

  // The CSV stores labels but not lesion ids; recover them from the
  // manifest ground truth with the same disc rule used for labeling.
  for (const auto* exam : test_exams) {
    for (const auto& rec : exam->images) {
      const auto it = by_image.find(rec.image_id);
      if (it == by_image.end()) continue;
      candidates::label_candidates(it->second, rec.lesions);
    }
  }

  // Score every test candidate with both networks, streaming exam by exam.
  std::vector<std::vector<TestCandidate>> per_exam(test_exams.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t e = 0; e < test_exams.size(); ++e) {
    const auto& exam = *test_exams[e];
    std::map<std::string, phantom::BreastImage> images;
    std::map<std::string, Raster> mirrored;
    for (const auto& rec : exam.images) images[rec.image_id] = load_image(paths, exam, rec);

    std::vector<patches::PatchPair> pairs;
    std::vector<TestCandidate> tc;
    for (const auto& rec : exam.images) {
      const auto it = by_image.find(rec.image_id);
      if (it == by_image.end()) continue;
      const auto& img = images.at(rec.image_id);
      const phantom::ImageRecord* contra_rec = find_contralateral(exam, rec);
      const Raster* contra_mirrored = nullptr;
      if (contra_rec) {
        auto mit = mirrored.find(contra_rec->image_id);
        if (mit == mirrored.end())
          mit = mirrored.emplace(contra_rec->image_id,
                                 flip_horizontal(images.at(contra_rec->image_id).pixels))
                    .first;
        contra_mirrored = &mit->second;
      }
      for (const auto& c : it->second) {
        patches::PatchPair pair;
        pair.primary =
            prep_patch(cfg, patches::extract_patch(img.pixels, c.row, c.col, cfg.patch_extract_px));
        if (contra_mirrored) {
          pair.contralateral = prep_patch(
              cfg, patches::extract_patch(*contra_mirrored, c.row, c.col, cfg.patch_extract_px));
          pair.has_contralateral = true;
        } else {
          pair.contralateral = Raster(cfg.patch_store_px, cfg.patch_store_px, 0.0f);
          pair.has_contralateral = false;
        }
        pair.positive = c.label == candidates::Label::positive;
        pair.exam_id = c.exam_id;
        pair.image_id = c.image_id;
        pair.center_row = c.row;
        pair.center_col = c.col;
        pairs.push_back(std::move(pair));

        TestCandidate t;
        t.cand = c;
        t.missing_contralateral = contra_mirrored == nullptr;
        tc.push_back(std::move(t));
      }
    }
    const auto base_scores = trainer::score_pairs(base_ckpt.spec, base_ckpt.params, pairs);
    const auto sym_scores = trainer::score_pairs(sym_ckpt.spec, sym_ckpt.params, pairs);
    for (size_t i = 0; i < tc.size(); ++i) {
      tc[i].baseline_score = base_scores[i];
      tc[i].symmetry_score = sym_scores[i];
    }
    per_exam[e] = std::move(tc);
  }

  // Scored CSVs.
  {
    std::vector<candidates::Candidate> flat;
    std::vector<double> base_s, sym_s;
    for (const auto& v : per_exam) {
      for (const auto& t : v) {
        flat.push_back(t.cand);
        base_s.push_back(t.baseline_score);
        sym_s.push_back(t.symmetry_score);
      }
    }
    const Provenance prov = make_prov(cfg, cfg.eval_seed);
    candidates::write_candidates_csv(paths.scored_csv("baseline"), flat, prov, &base_s);
    candidates::write_candidates_csv(paths.scored_csv("symmetry"), flat, prov, &sym_s);
  }

  // Assemble the bootstrap dataset; lesion ids are made unique within each
  // exam by offsetting with the image index.
  eval::EvalData data;
  data.models = {"candidate", "baseline", "symmetry"};
  for (size_t e = 0; e < test_exams.size(); ++e) {
    const auto& exam = *test_exams[e];
    eval::EvalExam ee;
    ee.exam_id = exam.exam_id;
    std::map<std::string, size_t> image_slot;
    for (size_t i = 0; i < exam.images.size(); ++i) {
      const auto& rec = exam.images[i];
      image_slot[rec.image_id] = i;
      eval::EvalImage ei;
      ei.image_id = rec.image_id;
      ei.lesion_count = static_cast<int>(rec.lesions.size());
      ee.images.push_back(std::move(ei));
    }
    for (const auto& t : per_exam[e]) {
      eval::EvalCand ec;
      ec.positive = t.cand.label == candidates::Label::positive;
      const size_t slot = image_slot.at(t.cand.image_id);
      ec.lesion_id = ec.positive ? static_cast<int>(slot) * 64 + t.cand.lesion_id : -1;
      ec.missing_contralateral = t.missing_contralateral;
      ec.scores = {t.cand.score, t.baseline_score, t.symmetry_score};
      ee.images[slot].cands.push_back(std::move(ec));
    }
    data.exams.push_back(std::move(ee));
  }

  // Report.
  json report;
  report["schema_version"] = 1;
  report["provenance"] = prov_json(make_prov(cfg, cfg.eval_seed));
  report["bootstrap_n"] = cfg.bootstrap_n;
  report["level"] = cfg.bootstrap_level;
  report["seed"] = cfg.eval_seed;

  int n_lesions = 0, n_cands = 0, n_images = 0;
  for (const auto& ee : data.exams) {
    for (const auto& ei : ee.images) {
      ++n_images;
      n_lesions += ei.lesion_count;
      n_cands += static_cast<int>(ei.cands.size());
    }
  }
  report["n_exams"] = data.exams.size();
  report["n_images"] = n_images;
  report["n_candidates"] = n_cands;
  report["n_lesions"] = n_lesions;

  eval::ExamSample all;
  for (const auto& ee : data.exams) all.push_back(&ee);

  json models = json::object();
  for (int m = 0; m < 3; ++m) {
    const std::string& name = data.models[static_cast<size_t>(m)];
    json jm;
    const auto auc_metric = eval::metric_auc(m);
    const auto auc = auc_metric(all);
    if (!auc) throw std::runtime_error("cmd_eval: candidate AUC undefined on the test split");
    const auto auc_ci =
        eval::bootstrap_ci(data, auc_metric, cfg.bootstrap_n, cfg.bootstrap_level,
                           mix_seed(cfg.eval_seed, "auc_" + name));
    jm["auc"] = *auc;
    jm["auc_ci"] = {auc_ci.lo, auc_ci.hi};

    for (const auto& [unit, tag] : std::vector<std::pair<eval::FrocUnit, std::string>>{
             {eval::FrocUnit::image, "image"}, {eval::FrocUnit::exam, "exam"}}) {
      const auto curve = eval::froc(eval::make_units(all, m, unit), unit);
      const auto cpm_metric = eval::metric_cpm(m, unit);
      const auto ci = eval::bootstrap_ci(data, cpm_metric, cfg.bootstrap_n, cfg.bootstrap_level,
                                         mix_seed(cfg.eval_seed, "cpm_" + tag + "_" + name));
      jm["cpm_" + tag] = eval::cpm(curve);
      jm["cpm_" + tag + "_ci"] = {ci.lo, ci.hi};

      std::ofstream fc(paths.froc_csv(name, tag), std::ios::binary);
      fc << "threshold,fp_per_" << tag << ",sensitivity\n";
      char buf[96];
      for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.threshold, p.fp_per_unit,
                      p.sensitivity);
        fc << buf;
      }
    }

    {
      const auto curve = eval::roc_curve(eval::flatten_candidates(all, m));
      std::ofstream fr(paths.roc_csv(name), std::ios::binary);
      fr << "threshold,fpr,tpr\n";
      char buf[96];
      for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
        fr << buf;
      }
    }

    if (name == "symmetry") {
      int n_missing = 0;
      for (const auto& ee : data.exams)
        for (const auto& ei : ee.images)
          for (const auto& c : ei.cands) n_missing += c.missing_contralateral ? 1 : 0;
      json jmc;
      jmc["n_candidates"] = n_missing;
      const auto mc_metric = eval::metric_auc_missing_contralateral(m);
      const auto mc = mc_metric(all);
      if (mc) {
        jmc["auc"] = *mc;
        const auto ci = eval::bootstrap_ci(data, mc_metric, cfg.bootstrap_n, cfg.bootstrap_level,
                                           mix_seed(cfg.eval_seed, "auc_missing"));
        jmc["auc_ci"] = {ci.lo, ci.hi};
      } else {
        jmc["auc"] = nullptr;
        jmc["auc_ci"] = nullptr;
      }
      jm["missing_contralateral"] = std::move(jmc);
    }
    models[name] = std::move(jm);
  }
  report["models"] = std::move(models);

  json comparisons;
  comparisons["baseline_vs_candidate"] = {
      {"auc_p", eval::bootstrap_pvalue(data, eval::metric_auc(0), eval::metric_auc(1), cfg.bootstrap_n,
                                       mix_seed(cfg.eval_seed, "p_auc_bc"))}};
  comparisons["symmetry_vs_baseline"] = {
      {"auc_p", eval::bootstrap_pvalue(data, eval::metric_auc(1), eval::metric_auc(2), cfg.bootstrap_n,
                                       mix_seed(cfg.eval_seed, "p_auc_sb"))},
      {"cpm_image_p",
       eval::bootstrap_pvalue(data, eval::metric_cpm(1, eval::FrocUnit::image),
                              eval::metric_cpm(2, eval::FrocUnit::image), cfg.bootstrap_n,
                              mix_seed(cfg.eval_seed, "p_cpmi_sb"))},
      {"cpm_exam_p",
       eval::bootstrap_pvalue(data, eval::metric_cpm(1, eval::FrocUnit::exam),
                              eval::metric_cpm(2, eval::FrocUnit::exam), cfg.bootstrap_n,
                              mix_seed(cfg.eval_seed, "p_cpme_sb"))}};
  report["comparisons"] = std::move(comparisons);

  std::ofstream f(paths.report(), std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + paths.report().string());
  f << report.dump(2) << "\n";
}

void cmd_pipeline(const PipelineConfig& cfg, const StagePaths& paths) {
  cmd_phantom(cfg, paths);
  cmd_candidates(cfg, paths);
  cmd_patches(cfg, paths);
  cmd_train(cfg, paths, ModelKind::baseline);
  cmd_train(cfg, paths, ModelKind::symmetry);
  cmd_eval(cfg, paths);
}

}  // namespace symcad::pipeline
