#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "symcad/nnet.hpp"
#include "symcad/patches.hpp"
#include "symcad/rng.hpp"
#include "symcad/version.hpp"

namespace symcad::trainer {

struct TrainConfig {
  double initial_lr = 1e-2;   // 1e-2 baseline, 1e-3 symmetry
  double momentum = 0.9;
  double decay = 1e-2 / 200;  // initial_lr / 200
  int batch_size = 64;
  int patience_epochs = 20;
  int max_epochs = 200;
  uint64_t seed = 1;
  bool augment = true;
  patches::AugmentConfig aug;

  void validate() const;
};

/// One balanced batch: batch_size/2 positive and batch_size/2 negative
/// sample indices.
struct EpochBatch {
  std::vector<int> pos;
  std::vector<int> neg;
};
using EpochSchedule = std::vector<EpochBatch>;

/// Balanced epoch: every positive index appears exactly twice across the
/// epoch and the negatives are a fresh uniform sample (without replacement)
/// of size 2 * n_pos; a ragged final batch is dropped. Requires
/// n_neg >= 2 * n_pos and 2 * n_pos >= batch_size / 2.
EpochSchedule make_epoch_schedule(int n_pos, int n_neg, int batch_size, Rng& rng);

struct SgdState {
  nnet::Parameters<float> velocity;
  int64_t t = 0;  // global update count; lr(t) = initial_lr / (1 + decay * t)
};

double lr_at(const TrainConfig& cfg, int64_t t);

/// Momentum SGD with time-based decay: v <- momentum*v - lr(t)*g; p <- p + v.
/// Throws on non-finite gradients.
void sgd_step(nnet::Parameters<float>& params, const nnet::Parameters<float>& grads, SgdState& state,
              const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr_last = 0.0;
  double val_auc = 0.0;
  bool best_so_far = false;
};

struct TrainResult {
  nnet::Parameters<float> best_params;
  int best_epoch = 0;
  double best_val_auc = 0.0;
  std::vector<EpochStats> history;
};

struct PatchDataset {
  std::vector<patches::PatchPair> pairs;
  std::vector<int> positives;
  std::vector<int> negatives;

  static PatchDataset from_pairs(std::vector<patches::PatchPair> pairs);
};

/// Balanced-epoch SGD training with on-the-fly augmentation (training split
/// only), per-epoch validation AUC over the raw validation patches,
/// best-model selection on that AUC and early stopping after
/// patience_epochs epochs without improvement.
TrainResult train(const nnet::NetworkSpec& spec, nnet::Parameters<float> params,
                  const PatchDataset& train_set, const PatchDataset& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

/// Candidate-level scores (probability of the positive class) in dataset
/// order, inference mode.
std::vector<double> score_pairs(const nnet::NetworkSpec& spec, const nnet::Parameters<float>& params,
                                const std::vector<patches::PatchPair>& pairs, int batch_size = 64);

/// Both symmetry streams start as independent copies of the baseline
/// feature extractor; the classifier head is freshly Glorot-initialized
/// with the doubled feature width.
nnet::Parameters<float> transfer_from_baseline(const nnet::Parameters<float>& baseline,
                                               const nnet::NetworkSpec& symmetry_spec, Rng& rng);

/// Newline-delimited JSON: a provenance record then one record per epoch
/// {epoch, mean_loss, lr_last, val_auc, best_so_far}.
void write_training_log(const std::filesystem::path& path, const std::vector<EpochStats>& history,
                        const Provenance& prov);

}  // namespace symcad::trainer
