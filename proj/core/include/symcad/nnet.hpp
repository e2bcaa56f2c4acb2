#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "symcad/rng.hpp"
#include "symcad/tensor.hpp"
#include "symcad/version.hpp"

namespace symcad::nnet {

enum class ModelKind { baseline, symmetry };
enum class Mode { train, infer };

std::string to_string(ModelKind k);
ModelKind model_kind_from(const std::string& s);

/// Layer graph shared by both architectures: a stack of valid 3x3 convs,
/// each but the last followed by max pooling, then global average pooling
/// and a dense classifier head ending in a 2-way softmax. The symmetry
/// variant runs two such feature stacks (independent weights) and
/// concatenates their pooled features before the head.
struct NetworkSpec {
  ModelKind kind = ModelKind::baseline;
  std::vector<int> conv_filters{16, 32, 32, 64, 64, 128, 128};
  int conv_kernel = 3;
  int pool_window = 3;
  int pool_stride = 2;
  std::vector<int> dense_units{300, 300, 2};
  double dropout_rate = 0.5;
  int input_size_px = 381;
  int input_channels = 1;

  /// Checks counts and that the spatial size survives every stage
  /// (an undersized map at any conv is a hard error, never a silent crop).
  void validate() const;

  /// Spatial size entering each conv, plus the final pre-GAP size.
  std::vector<int> spatial_trace() const;

  int feature_dim() const { return conv_filters.back(); }
  int head_input_dim() const {
    return kind == ModelKind::symmetry ? 2 * feature_dim() : feature_dim();
  }

  /// The full-scale configuration; 381 is the smallest input whose
  /// seven-stage arithmetic closes with 3x3 valid convs and 3x3/2 pooling.
  static NetworkSpec paper_baseline();
  static NetworkSpec paper_symmetry();
};

template <typename T>
struct ConvLayer {
  Tensor<T> w;  // (out_ch, in_ch, k, k)
  Tensor<T> b;  // (out_ch, 1, 1, 1)
};

template <typename T>
struct DenseLayer {
  Tensor<T> w;  // (out, in, 1, 1)
  Tensor<T> b;  // (out, 1, 1, 1)
};

/// Weight storage; for the symmetry model the two streams are independent
/// tensors (no sharing), mirroring the transfer-then-finetune scheme.
template <typename T>
struct Parameters {
  ModelKind kind = ModelKind::baseline;
  std::vector<ConvLayer<T>> stream1;
  std::vector<ConvLayer<T>> stream2;
  std::vector<DenseLayer<T>> head;

  size_t count() const;

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out;
    out.kind = kind;
    for (const auto& l : stream1) out.stream1.push_back({l.w.template cast<U>(), l.b.template cast<U>()});
    for (const auto& l : stream2) out.stream2.push_back({l.w.template cast<U>(), l.b.template cast<U>()});
    for (const auto& l : head) out.head.push_back({l.w.template cast<U>(), l.b.template cast<U>()});
    return out;
  }
};

/// Visit every parameter tensor in a fixed order (stream1, stream2, head).
template <typename T>
void for_each_param(Parameters<T>& p,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  for (size_t i = 0; i < p.stream1.size(); ++i) {
    fn("stream1.conv" + std::to_string(i) + ".w", p.stream1[i].w);
    fn("stream1.conv" + std::to_string(i) + ".b", p.stream1[i].b);
  }
  for (size_t i = 0; i < p.stream2.size(); ++i) {
    fn("stream2.conv" + std::to_string(i) + ".w", p.stream2[i].w);
    fn("stream2.conv" + std::to_string(i) + ".b", p.stream2[i].b);
  }
  for (size_t i = 0; i < p.head.size(); ++i) {
    fn("head.dense" + std::to_string(i) + ".w", p.head[i].w);
    fn("head.dense" + std::to_string(i) + ".b", p.head[i].b);
  }
}

/// Uniform Glorot: w ~ U[-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases.
template <typename T>
Parameters<T> glorot_init(const NetworkSpec& spec, Rng& rng);

/// Zero-filled gradient/velocity buffers matching the parameter layout.
template <typename T>
Parameters<T> zeros_like(const Parameters<T>& p);

// ---------------------------------------------------------------------------
// Layer primitives (valid padding, stride 1 convs; cross-correlation)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* db);

/// argmax holds, per output cell, the flat in-plane index of the winning
/// input pixel; ties resolve to the first index in row-major order.
template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, int window, int stride, Tensor<int32_t>* argmax);
template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& dy, const Tensor<int32_t>& argmax,
                           const std::array<int, 4>& in_shape);

template <typename T>
Tensor<T> gap_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> gap_backward(const Tensor<T>& dy, const std::array<int, 4>& in_shape);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
/// pre is the pre-activation input that was fed to relu_forward.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& pre, const Tensor<T>& dy);

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                    Tensor<T>* dw, Tensor<T>* db);

/// Training mode: zeroes with probability rate and scales survivors by
/// 1/(1-rate); inference mode is the exact identity.
template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, Mode mode, Rng* rng,
                          Tensor<uint8_t>* mask);
template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& dy, const Tensor<uint8_t>& mask, double rate);

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// Mean over the batch of -log p(true class), probabilities clamped at 1e-12.
template <typename T>
double cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels);
template <typename T>
Tensor<T> cross_entropy_grad(const Tensor<T>& probs, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Full graphs
// ---------------------------------------------------------------------------

template <typename T>
struct StreamCache {
  std::vector<Tensor<T>> conv_in;
  std::vector<Tensor<T>> conv_pre;
  std::vector<Tensor<int32_t>> pool_argmax;
  Tensor<T> last_relu;
  Tensor<T> gap_out;
};

template <typename T>
struct ForwardCache {
  StreamCache<T> s1, s2;
  Tensor<T> features;
  std::vector<Tensor<T>> dense_in;
  std::vector<Tensor<T>> dense_pre;
  Tensor<uint8_t> dropout_mask;
  bool dropout_active = false;
  Tensor<T> probs;
};

/// Single-input network: [conv-relu-pool]* -> conv-relu-GAP -> head.
/// rng is only consulted for the dropout mask in training mode. cache may be
/// null for inference.
template <typename T>
Tensor<T> baseline_forward(const NetworkSpec& spec, const Parameters<T>& params, const Tensor<T>& x,
                           Mode mode, Rng* rng = nullptr, ForwardCache<T>* cache = nullptr);

/// Two-input network: each patch runs its own feature stack; the pooled
/// feature vectors are concatenated (primary first) and fed to the head.
template <typename T>
Tensor<T> symmetry_forward(const NetworkSpec& spec, const Parameters<T>& params, const Tensor<T>& x1,
                           const Tensor<T>& x2, Mode mode, Rng* rng = nullptr,
                           ForwardCache<T>* cache = nullptr);

/// Gradients of mean cross-entropy w.r.t. every parameter (and optionally
/// the inputs), from a training-mode forward cache.
template <typename T>
Parameters<T> network_backward(const NetworkSpec& spec, const Parameters<T>& params,
                               const ForwardCache<T>& cache, const std::vector<int>& labels,
                               Tensor<T>* dx1 = nullptr, Tensor<T>* dx2 = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: JSON header (spec, epoch, validation AUC, layer offset table)
// followed by a raw little-endian float32 parameter blob.
// ---------------------------------------------------------------------------

struct Checkpoint {
  NetworkSpec spec;
  Parameters<float> params;
  int epoch = 0;
  double val_auc = 0.0;
  Provenance prov;
};

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const Parameters<float>& params, int epoch, double val_auc,
                     const Provenance& prov);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace symcad::nnet
