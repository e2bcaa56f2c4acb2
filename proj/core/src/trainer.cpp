#include "symcad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "symcad/eval.hpp"

namespace symcad::trainer {

using nnet::ModelKind;
using nnet::Tensor;

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("train config: " + why); };
  if (initial_lr <= 0.0) fail("initial_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0,1)");
  if (decay < 0.0) fail("decay must be >= 0");
  if (batch_size <= 0 || batch_size % 2 != 0) fail("batch_size must be positive and even");
  if (patience_epochs <= 0) fail("patience_epochs must be positive");
  if (max_epochs <= 0) fail("max_epochs must be positive");
  aug.validate();
}

EpochSchedule make_epoch_schedule(int n_pos, int n_neg, int batch_size, Rng& rng) {
  if (batch_size <= 0 || batch_size % 2 != 0)
    throw std::invalid_argument("make_epoch_schedule: batch_size must be positive and even");
  if (n_pos <= 0) throw std::invalid_argument("make_epoch_schedule: no positives");
  const int half = batch_size / 2;
  const int pos_slots = 2 * n_pos;
  if (pos_slots < half)
    throw std::runtime_error("make_epoch_schedule: too few positives for one balanced batch");
  if (n_neg < pos_slots)
    throw std::runtime_error("make_epoch_schedule: insufficient negatives (need " +
                             std::to_string(pos_slots) + ", have " + std::to_string(n_neg) + ")");

  std::vector<int> pos;
  pos.reserve(static_cast<size_t>(pos_slots));
  for (int rep = 0; rep < 2; ++rep)
    for (int i = 0; i < n_pos; ++i) pos.push_back(i);
  rng.shuffle(pos);

  std::vector<int> neg_all(static_cast<size_t>(n_neg));
  for (int i = 0; i < n_neg; ++i) neg_all[static_cast<size_t>(i)] = i;
  rng.shuffle(neg_all);
  neg_all.resize(static_cast<size_t>(pos_slots));

  const int n_batches = pos_slots / half;
  EpochSchedule schedule;
  schedule.reserve(static_cast<size_t>(n_batches));
  for (int b = 0; b < n_batches; ++b) {
    EpochBatch batch;
    batch.pos.assign(pos.begin() + static_cast<long>(b) * half,
                     pos.begin() + static_cast<long>(b + 1) * half);
    batch.neg.assign(neg_all.begin() + static_cast<long>(b) * half,
                     neg_all.begin() + static_cast<long>(b + 1) * half);
    schedule.push_back(std::move(batch));
  }
  return schedule;
}

double lr_at(const TrainConfig& cfg, int64_t t) {
  return cfg.initial_lr / (1.0 + cfg.decay * static_cast<double>(t));
}

void sgd_step(nnet::Parameters<float>& params, const nnet::Parameters<float>& grads, SgdState& state,
              const TrainConfig& cfg) {
  const double lr = lr_at(cfg, state.t);
  const auto mom = static_cast<float>(cfg.momentum);
  const auto lrf = static_cast<float>(lr);

  std::vector<Tensor<float>*> ps, vs;
  std::vector<const Tensor<float>*> gs;
  nnet::for_each_param<float>(params, [&](const std::string&, Tensor<float>& t) { ps.push_back(&t); });
  nnet::for_each_param<float>(state.velocity,
                              [&](const std::string&, Tensor<float>& t) { vs.push_back(&t); });
  std::string bad;
  nnet::for_each_param<float>(const_cast<nnet::Parameters<float>&>(grads),
                              [&](const std::string& name, Tensor<float>& t) {
                                gs.push_back(&t);
                                if (bad.empty() && !t.all_finite()) bad = name;
                              });
  if (!bad.empty())
    throw std::runtime_error("sgd_step: non-finite gradient in " + bad + " at update " +
                             std::to_string(state.t));
  if (ps.size() != vs.size() || ps.size() != gs.size())
    throw std::invalid_argument("sgd_step: parameter/velocity/gradient layout mismatch");

  for (size_t k = 0; k < ps.size(); ++k) {
    auto& p = ps[k]->v;
    auto& v = vs[k]->v;
    const auto& g = gs[k]->v;
    if (p.size() != v.size() || p.size() != g.size())
      throw std::invalid_argument("sgd_step: tensor size mismatch");
    for (size_t i = 0; i < p.size(); ++i) {
      v[i] = mom * v[i] - lrf * g[i];
      p[i] += v[i];
    }
  }
  ++state.t;
}

PatchDataset PatchDataset::from_pairs(std::vector<patches::PatchPair> in) {
  PatchDataset ds;
  ds.pairs = std::move(in);
  for (size_t i = 0; i < ds.pairs.size(); ++i)
    (ds.pairs[i].positive ? ds.positives : ds.negatives).push_back(static_cast<int>(i));
  return ds;
}

namespace {

void fill_input(Tensor<float>& x1, Tensor<float>* x2, int slot, const patches::PatchPair& pair) {
  const int px = pair.primary.rows;
  std::copy(pair.primary.data.begin(), pair.primary.data.end(),
            x1.v.begin() + static_cast<long>(slot) * px * px);
  if (x2)
    std::copy(pair.contralateral.data.begin(), pair.contralateral.data.end(),
              x2->v.begin() + static_cast<long>(slot) * px * px);
}

void check_patch_size(const nnet::NetworkSpec& spec, const std::vector<patches::PatchPair>& pairs) {
  for (const auto& p : pairs)
    if (p.primary.rows != spec.input_size_px || p.primary.cols != spec.input_size_px)
      throw std::invalid_argument("trainer: patch size " + std::to_string(p.primary.rows) +
                                  " does not match network input " +
                                  std::to_string(spec.input_size_px));
}

}  // namespace

std::vector<double> score_pairs(const nnet::NetworkSpec& spec, const nnet::Parameters<float>& params,
                                const std::vector<patches::PatchPair>& pairs, int batch_size) {
  check_patch_size(spec, pairs);
  const bool sym = params.kind == ModelKind::symmetry;
  const int px = spec.input_size_px;
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (size_t start = 0; start < pairs.size(); start += static_cast<size_t>(batch_size)) {
    const int nb = static_cast<int>(std::min(pairs.size() - start, static_cast<size_t>(batch_size)));
    Tensor<float> x1(nb, 1, px, px);
    Tensor<float> x2;
    if (sym) x2 = Tensor<float>(nb, 1, px, px);
    for (int i = 0; i < nb; ++i) fill_input(x1, sym ? &x2 : nullptr, i, pairs[start + i]);
    const Tensor<float> probs =
        sym ? nnet::symmetry_forward(spec, params, x1, x2, nnet::Mode::infer)
            : nnet::baseline_forward(spec, params, x1, nnet::Mode::infer);
    for (int i = 0; i < nb; ++i) scores.push_back(probs.at(i, 1, 0, 0));
  }
  return scores;
}

TrainResult train(const nnet::NetworkSpec& spec, nnet::Parameters<float> params,
                  const PatchDataset& train_set, const PatchDataset& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  spec.validate();
  cfg.validate();
  check_patch_size(spec, train_set.pairs);
  check_patch_size(spec, val_set.pairs);
  if (params.kind != spec.kind) throw std::invalid_argument("train: params/spec kind mismatch");

  size_t val_pos = 0;
  for (const auto& p : val_set.pairs) val_pos += p.positive ? 1 : 0;
  if (val_set.pairs.empty() || val_pos == 0 || val_pos == val_set.pairs.size())
    throw std::runtime_error("train: validation set must contain both classes (AUC undefined)");

  const bool sym = spec.kind == ModelKind::symmetry;
  const int px = spec.input_size_px;
  const int half = cfg.batch_size / 2;

  Rng sched_rng(mix_seed(cfg.seed, "schedule"));
  Rng aug_rng(mix_seed(cfg.seed, "augment"));
  Rng drop_rng(mix_seed(cfg.seed, "dropout"));

  std::vector<uint8_t> val_labels;
  for (const auto& p : val_set.pairs) val_labels.push_back(p.positive ? 1 : 0);

  SgdState state;
  state.velocity = nnet::zeros_like(params);

  TrainResult result;
  result.best_params = params;
  result.best_val_auc = -1.0;
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const EpochSchedule schedule =
        make_epoch_schedule(static_cast<int>(train_set.positives.size()),
                            static_cast<int>(train_set.negatives.size()), cfg.batch_size, sched_rng);

    double loss_sum = 0.0;
    for (const auto& batch : schedule) {
      Tensor<float> x1(cfg.batch_size, 1, px, px);
      Tensor<float> x2;
      if (sym) x2 = Tensor<float>(cfg.batch_size, 1, px, px);
      std::vector<int> labels(static_cast<size_t>(cfg.batch_size));
      for (int i = 0; i < half; ++i) {
        const auto& pos_pair = train_set.pairs[static_cast<size_t>(
            train_set.positives[static_cast<size_t>(batch.pos[static_cast<size_t>(i)])])];
        const auto& neg_pair = train_set.pairs[static_cast<size_t>(
            train_set.negatives[static_cast<size_t>(batch.neg[static_cast<size_t>(i)])])];
        if (cfg.augment) {
          fill_input(x1, sym ? &x2 : nullptr, i, patches::augment(pos_pair, cfg.aug, aug_rng));
          fill_input(x1, sym ? &x2 : nullptr, half + i,
                     patches::augment(neg_pair, cfg.aug, aug_rng));
        } else {
          fill_input(x1, sym ? &x2 : nullptr, i, pos_pair);
          fill_input(x1, sym ? &x2 : nullptr, half + i, neg_pair);
        }
        labels[static_cast<size_t>(i)] = 1;
        labels[static_cast<size_t>(half + i)] = 0;
      }

      nnet::ForwardCache<float> cache;
      const Tensor<float> probs =
          sym ? nnet::symmetry_forward(spec, params, x1, x2, nnet::Mode::train, &drop_rng, &cache)
              : nnet::baseline_forward(spec, params, x1, nnet::Mode::train, &drop_rng, &cache);
      loss_sum += nnet::cross_entropy(probs, labels);
      const auto grads = nnet::network_backward(spec, params, cache, labels);
      sgd_step(params, grads, state, cfg);
    }

    const std::vector<double> val_scores = score_pairs(spec, params, val_set.pairs, cfg.batch_size);
    const double val_auc = eval::roc_auc(val_scores, val_labels);

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = schedule.empty() ? 0.0 : loss_sum / static_cast<double>(schedule.size());
    stats.lr_last = lr_at(cfg, state.t - 1);
    stats.val_auc = val_auc;
    stats.best_so_far = val_auc > result.best_val_auc;
    if (stats.best_so_far) {
      result.best_val_auc = val_auc;
      result.best_params = params;
      result.best_epoch = epoch;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (epochs_since_best >= cfg.patience_epochs) break;
  }
  return result;
}

nnet::Parameters<float> transfer_from_baseline(const nnet::Parameters<float>& baseline,
                                               const nnet::NetworkSpec& symmetry_spec, Rng& rng) {
  symmetry_spec.validate();
  if (symmetry_spec.kind != ModelKind::symmetry)
    throw std::invalid_argument("transfer_from_baseline: spec must be a symmetry spec");
  if (baseline.kind != ModelKind::baseline)
    throw std::invalid_argument("transfer_from_baseline: source must be baseline params");
  if (baseline.stream1.size() != symmetry_spec.conv_filters.size())
    throw std::invalid_argument("transfer_from_baseline: conv stage count mismatch");
  int ic = symmetry_spec.input_channels;
  for (size_t i = 0; i < baseline.stream1.size(); ++i) {
    const auto& w = baseline.stream1[i].w;
    if (w.shape[0] != symmetry_spec.conv_filters[i] || w.shape[1] != ic ||
        w.shape[2] != symmetry_spec.conv_kernel)
      throw std::invalid_argument("transfer_from_baseline: conv" + std::to_string(i) +
                                  " shape mismatch");
    ic = symmetry_spec.conv_filters[i];
  }

  nnet::Parameters<float> p;
  p.kind = ModelKind::symmetry;
  p.stream1 = baseline.stream1;
  p.stream2 = baseline.stream1;  // independent copy; streams diverge in training
  int in_dim = symmetry_spec.head_input_dim();
  for (int out : symmetry_spec.dense_units) {
    nnet::DenseLayer<float> layer;
    layer.w = Tensor<float>(out, in_dim, 1, 1);
    layer.b = Tensor<float>(out, 1, 1, 1);
    const double a = std::sqrt(6.0 / (static_cast<double>(in_dim) + out));
    for (auto& v : layer.w.v) v = static_cast<float>(rng.uniform(-a, a));
    p.head.push_back(std::move(layer));
    in_dim = out;
  }
  return p;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochStats>& history,
                        const Provenance& prov) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(prov.config_hash));
  f << nlohmann::json{{"schema_version", 1},
                      {"config_hash", buf},
                      {"seed", prov.seed},
                      {"tool_version", prov.tool_version}}
           .dump()
    << "\n";
  for (const auto& h : history) {
    f << nlohmann::json{{"epoch", h.epoch},
                        {"mean_loss", h.mean_loss},
                        {"lr_last", h.lr_last},
                        {"val_auc", h.val_auc},
                        {"best_so_far", h.best_so_far}}
             .dump()
      << "\n";
  }
}

}  // namespace symcad::trainer
