#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "symcad/candidates.hpp"
#include "symcad/config.hpp"
#include "symcad/nnet.hpp"
#include "symcad/patches.hpp"
#include "symcad/phantom.hpp"
#include "symcad/trainer.hpp"

namespace symcad::pipeline {

/// All stage settings, parsed strictly from a line-oriented config: unknown
/// keys and missing required keys (per-stage seeds, the candidate threshold)
/// are hard errors naming the key.
struct PipelineConfig {
  phantom::PhantomConfig phantom_cfg;

  std::array<double, 3> split_ratios{0.5, 0.1, 0.4};
  uint64_t split_seed = 0;

  candidates::DetectorParams detector;
  double cand_threshold = 0.5;
  int min_separation_px = 70;
  int max_per_image = 0;  // 0 disables the per-image cap

  int patch_extract_px = 300;
  int patch_store_px = 96;
  double min_lesion_dist_cm = 2.0;
  double min_inter_dist_cm = 1.4;
  int val_negative_cap = 600;
  uint64_t patches_seed = 0;

  patches::AugmentConfig aug;
  bool train_augment = true;

  nnet::NetworkSpec net;  // kind is set per training run
  double initial_lr_baseline = 1e-2;
  double initial_lr_symmetry = 1e-3;
  double momentum = 0.9;
  double decay_denominator = 200.0;
  int batch_size = 64;
  int patience_epochs = 20;
  int max_epochs = 200;
  uint64_t train_seed = 0;

  int bootstrap_n = 1000;
  double bootstrap_level = 0.95;
  uint64_t eval_seed = 0;

  uint64_t config_hash = 0;

  static PipelineConfig from_config(const ConfigMap& cfg);
};

/// Fixed artifact layout under one output directory.
struct StagePaths {
  std::filesystem::path out;

  std::filesystem::path manifest() const { return out / "manifest.json"; }
  std::filesystem::path images_dir() const { return out / "images"; }
  std::filesystem::path candidates_dir() const { return out / "candidates"; }
  std::filesystem::path candidates_csv(const std::string& split) const {
    return candidates_dir() / (split + ".csv");
  }
  std::filesystem::path patches_dir() const { return out / "patches"; }
  std::filesystem::path patches_bin(const std::string& split) const {
    return patches_dir() / (split + ".bin");
  }
  std::filesystem::path patches_index(const std::string& split) const {
    return patches_dir() / (split + ".json");
  }
  std::filesystem::path checkpoints_dir() const { return out / "checkpoints"; }
  std::filesystem::path checkpoint(nnet::ModelKind kind) const {
    return checkpoints_dir() / (nnet::to_string(kind) + ".ckpt");
  }
  std::filesystem::path train_log(nnet::ModelKind kind) const {
    return checkpoints_dir() / (nnet::to_string(kind) + "_log.ndjson");
  }
  std::filesystem::path eval_dir() const { return out / "eval"; }
  std::filesystem::path scored_csv(const std::string& model) const {
    return eval_dir() / ("scored_" + model + ".csv");
  }
  std::filesystem::path report() const { return eval_dir() / "report.json"; }
  std::filesystem::path roc_csv(const std::string& model) const {
    return eval_dir() / ("roc_" + model + ".csv");
  }
  std::filesystem::path froc_csv(const std::string& model, const std::string& unit) const {
    return eval_dir() / ("froc_" + unit + "_" + model + ".csv");
  }
};

void cmd_phantom(const PipelineConfig& cfg, const StagePaths& paths);
void cmd_candidates(const PipelineConfig& cfg, const StagePaths& paths);
void cmd_patches(const PipelineConfig& cfg, const StagePaths& paths);
void cmd_train(const PipelineConfig& cfg, const StagePaths& paths, nnet::ModelKind kind);
void cmd_eval(const PipelineConfig& cfg, const StagePaths& paths);
void cmd_pipeline(const PipelineConfig& cfg, const StagePaths& paths);

}  // namespace symcad::pipeline
