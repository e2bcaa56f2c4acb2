#include "symcad/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace symcad::nnet {

using nlohmann::json;

std::string to_string(ModelKind k) { return k == ModelKind::baseline ? "baseline" : "symmetry"; }

ModelKind model_kind_from(const std::string& s) {
  if (s == "baseline") return ModelKind::baseline;
  if (s == "symmetry") return ModelKind::symmetry;
  throw std::runtime_error("bad model kind: '" + s + "'");
}

void NetworkSpec::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("network spec: " + why); };
  if (conv_filters.empty()) fail("conv_filters must be non-empty");
  for (int f : conv_filters)
    if (f <= 0) fail("conv_filters entries must be positive");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) fail("conv_kernel must be odd and >= 1");
  if (pool_window < 2) fail("pool_window must be >= 2");
  if (pool_stride < 1) fail("pool_stride must be >= 1");
  if (dense_units.size() < 2) fail("dense_units needs at least two entries");
  for (int u : dense_units)
    if (u <= 0) fail("dense_units entries must be positive");
  if (dense_units.back() != 2) fail("last dense layer must have 2 units");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must be in [0,1)");
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (input_size_px < 1) fail("input_size_px must be >= 1");
  spatial_trace();  // throws if the arithmetic does not close
}

std::vector<int> NetworkSpec::spatial_trace() const {
  std::vector<int> trace;
  int s = input_size_px;
  const int n_conv = static_cast<int>(conv_filters.size());
  for (int i = 0; i < n_conv; ++i) {
    trace.push_back(s);
    if (s < conv_kernel)
      throw std::invalid_argument("network spec: feature map entering conv" + std::to_string(i + 1) +
                                  " is " + std::to_string(s) + " px, smaller than the " +
                                  std::to_string(conv_kernel) + "-px kernel");
    s = s - conv_kernel + 1;
    if (i + 1 < n_conv) {
      if (s < pool_window)
        throw std::invalid_argument("network spec: feature map entering pool" + std::to_string(i + 1) +
                                    " is " + std::to_string(s) + " px, smaller than the " +
                                    std::to_string(pool_window) + "-px pool window");
      s = (s - pool_window) / pool_stride + 1;
    }
  }
  trace.push_back(s);
  return trace;
}

NetworkSpec NetworkSpec::paper_baseline() {
  NetworkSpec spec;
  spec.kind = ModelKind::baseline;
  spec.input_size_px = 381;
  return spec;
}

NetworkSpec NetworkSpec::paper_symmetry() {
  NetworkSpec spec = paper_baseline();
  spec.kind = ModelKind::symmetry;
  return spec;
}

template <typename T>
size_t Parameters<T>::count() const {
  size_t total = 0;
  for (const auto& l : stream1) total += l.w.size() + l.b.size();
  for (const auto& l : stream2) total += l.w.size() + l.b.size();
  for (const auto& l : head) total += l.w.size() + l.b.size();
  return total;
}

namespace {

template <typename T>
std::vector<ConvLayer<T>> init_stream(const NetworkSpec& spec, Rng& rng) {
  std::vector<ConvLayer<T>> stream;
  int ic = spec.input_channels;
  const int k = spec.conv_kernel;
  for (int oc : spec.conv_filters) {
    ConvLayer<T> layer;
    layer.w = Tensor<T>(oc, ic, k, k);
    layer.b = Tensor<T>(oc, 1, 1, 1);
    const double fan_in = static_cast<double>(ic) * k * k;
    const double fan_out = static_cast<double>(oc) * k * k;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : layer.w.v) v = static_cast<T>(rng.uniform(-a, a));
    stream.push_back(std::move(layer));
    ic = oc;
  }
  return stream;
}

}  // namespace

template <typename T>
Parameters<T> glorot_init(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  Parameters<T> p;
  p.kind = spec.kind;
  p.stream1 = init_stream<T>(spec, rng);
  if (spec.kind == ModelKind::symmetry) p.stream2 = init_stream<T>(spec, rng);
  int in_dim = spec.head_input_dim();
  for (int out : spec.dense_units) {
    DenseLayer<T> layer;
    layer.w = Tensor<T>(out, in_dim, 1, 1);
    layer.b = Tensor<T>(out, 1, 1, 1);
    const double a = std::sqrt(6.0 / (static_cast<double>(in_dim) + out));
    for (auto& v : layer.w.v) v = static_cast<T>(rng.uniform(-a, a));
    p.head.push_back(std::move(layer));
    in_dim = out;
  }
  return p;
}

template <typename T>
Parameters<T> zeros_like(const Parameters<T>& p) {
  Parameters<T> z;
  z.kind = p.kind;
  auto zero_conv = [](const std::vector<ConvLayer<T>>& src) {
    std::vector<ConvLayer<T>> out;
    for (const auto& l : src) {
      ConvLayer<T> layer;
      layer.w = Tensor<T>(l.w.shape[0], l.w.shape[1], l.w.shape[2], l.w.shape[3]);
      layer.b = Tensor<T>(l.b.shape[0], 1, 1, 1);
      out.push_back(std::move(layer));
    }
    return out;
  };
  z.stream1 = zero_conv(p.stream1);
  z.stream2 = zero_conv(p.stream2);
  for (const auto& l : p.head) {
    DenseLayer<T> layer;
    layer.w = Tensor<T>(l.w.shape[0], l.w.shape[1], 1, 1);
    layer.b = Tensor<T>(l.b.shape[0], 1, 1, 1);
    z.head.push_back(std::move(layer));
  }
  return z;
}

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values after ") + what);
}

// C(M,N) += A(M,K) * B(K,N), all row-major. Each C element accumulates in
// ascending k order, so results do not depend on thread count.
template <typename T>
void gemm_acc(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int m = 0; m < M; ++m) {
    const T* arow = A + static_cast<size_t>(m) * K;
    T* crow = C + static_cast<size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      const T a = arow[k];
      const T* brow = B + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

template <typename T>
T dot(const T* a, const T* b, int n) {
  T acc = T{};
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// col(K = ic*k*k, P = oh*ow) for one batch item.
template <typename T>
void im2col(const Tensor<T>& x, int item, int k, std::vector<T>& col) {
  const int ic = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int oh = H - k + 1, ow = W - k + 1;
  const size_t P = static_cast<size_t>(oh) * ow;
  col.resize(static_cast<size_t>(ic) * k * k * P);
  size_t row = 0;
  for (int c = 0; c < ic; ++c) {
    const T* plane = x.plane(item, c);
    for (int kr = 0; kr < k; ++kr) {
      for (int kc = 0; kc < k; ++kc) {
        T* dst = col.data() + row * P;
        for (int r = 0; r < oh; ++r)
          std::memcpy(dst + static_cast<size_t>(r) * ow, plane + static_cast<size_t>(r + kr) * W + kc,
                      static_cast<size_t>(ow) * sizeof(T));
        ++row;
      }
    }
  }
}

template <typename T>
void col2im_acc(const std::vector<T>& col, int item, int k, Tensor<T>& dx) {
  const int ic = dx.shape[1], H = dx.shape[2], W = dx.shape[3];
  const int oh = H - k + 1, ow = W - k + 1;
  const size_t P = static_cast<size_t>(oh) * ow;
  size_t row = 0;
  for (int c = 0; c < ic; ++c) {
    T* plane = dx.plane(item, c);
    for (int kr = 0; kr < k; ++kr) {
      for (int kc = 0; kc < k; ++kc) {
        const T* src = col.data() + row * P;
        for (int r = 0; r < oh; ++r) {
          T* drow = plane + static_cast<size_t>(r + kr) * W + kc;
          const T* srow = src + static_cast<size_t>(r) * ow;
          for (int cc = 0; cc < ow; ++cc) drow[cc] += srow[cc];
        }
        ++row;
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int n = x.shape[0], ic = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int oc = w.shape[0], k = w.shape[2];
  if (w.shape[1] != ic) throw std::invalid_argument("conv2d: channel mismatch");
  if (w.shape[3] != k) throw std::invalid_argument("conv2d: kernel must be square");
  if (H < k || W < k) throw std::invalid_argument("conv2d: input smaller than kernel");
  if (b.shape[0] != oc) throw std::invalid_argument("conv2d: bias size mismatch");
  const int oh = H - k + 1, ow = W - k + 1;
  const int P = oh * ow;
  const int K = ic * k * k;
  Tensor<T> y(n, oc, oh, ow);

#pragma omp parallel for schedule(static)
  for (int item = 0; item < n; ++item) {
    std::vector<T> col;
    im2col(x, item, k, col);
    T* yitem = y.plane(item, 0);
    for (int o = 0; o < oc; ++o) {
      const T bias = b.v[static_cast<size_t>(o)];
      T* row = yitem + static_cast<size_t>(o) * P;
      for (int p = 0; p < P; ++p) row[p] = bias;
    }
    gemm_acc(oc, P, K, w.v.data(), col.data(), yitem);
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* db) {
  const int n = x.shape[0], ic = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int oc = w.shape[0], k = w.shape[2];
  const int oh = H - k + 1, ow = W - k + 1;
  if (dy.shape[0] != n || dy.shape[1] != oc || dy.shape[2] != oh || dy.shape[3] != ow)
    throw std::invalid_argument("conv2d_backward: dy shape mismatch");
  const int P = oh * ow;
  const int K = ic * k * k;

  if (db) {
    *db = Tensor<T>(oc, 1, 1, 1);
    for (int item = 0; item < n; ++item) {
      for (int o = 0; o < oc; ++o) {
        const T* row = dy.plane(item, o);
        T acc = T{};
        for (int p = 0; p < P; ++p) acc += row[p];
        db->v[static_cast<size_t>(o)] += acc;
      }
    }
  }

  if (dw) {
    *dw = Tensor<T>(oc, ic, k, k);
    std::vector<T> col;
    for (int item = 0; item < n; ++item) {
      im2col(x, item, k, col);
      const T* dyitem = dy.plane(item, 0);
#pragma omp parallel for schedule(static)
      for (int o = 0; o < oc; ++o) {
        const T* dyrow = dyitem + static_cast<size_t>(o) * P;
        T* wrow = dw->v.data() + static_cast<size_t>(o) * K;
        for (int kk = 0; kk < K; ++kk)
          wrow[kk] += dot(dyrow, col.data() + static_cast<size_t>(kk) * P, P);
      }
    }
  }

  if (dx) {
    *dx = Tensor<T>(n, ic, H, W);
#pragma omp parallel for schedule(static)
    for (int item = 0; item < n; ++item) {
      std::vector<T> dcol(static_cast<size_t>(K) * P, T{});
      const T* dyitem = dy.plane(item, 0);
      for (int kk = 0; kk < K; ++kk) {
        T* drow = dcol.data() + static_cast<size_t>(kk) * P;
        for (int o = 0; o < oc; ++o) {
          const T a = w.v[static_cast<size_t>(o) * K + kk];
          const T* dyrow = dyitem + static_cast<size_t>(o) * P;
          for (int p = 0; p < P; ++p) drow[p] += a * dyrow[p];
        }
      }
      col2im_acc(dcol, item, k, *dx);
    }
  }
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, int window, int stride, Tensor<int32_t>* argmax) {
  const int n = x.shape[0], ch = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (H < window || W < window) throw std::invalid_argument("maxpool: input smaller than window");
  if (stride < 1) throw std::invalid_argument("maxpool: stride must be >= 1");
  const int oh = (H - window) / stride + 1;
  const int ow = (W - window) / stride + 1;
  Tensor<T> y(n, ch, oh, ow);
  if (argmax) *argmax = Tensor<int32_t>(n, ch, oh, ow);

#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < n * ch; ++plane) {
    const int item = plane / ch, c = plane % ch;
    const T* src = x.plane(item, c);
    T* dst = y.plane(item, c);
    int32_t* amax = argmax ? argmax->plane(item, c) : nullptr;
    for (int r = 0; r < oh; ++r) {
      for (int col = 0; col < ow; ++col) {
        const int r0 = r * stride, c0 = col * stride;
        T best = src[static_cast<size_t>(r0) * W + c0];
        int32_t best_idx = r0 * W + c0;
        for (int dr = 0; dr < window; ++dr) {
          for (int dc = 0; dc < window; ++dc) {
            const int32_t idx = (r0 + dr) * W + (c0 + dc);
            const T v = src[idx];
            if (v > best) {  // strict: ties keep the first row-major index
              best = v;
              best_idx = idx;
            }
          }
        }
        dst[static_cast<size_t>(r) * ow + col] = best;
        if (amax) amax[static_cast<size_t>(r) * ow + col] = best_idx;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& dy, const Tensor<int32_t>& argmax,
                           const std::array<int, 4>& in_shape) {
  Tensor<T> dx(in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
  const int n = dy.shape[0], ch = dy.shape[1];
  const size_t opp = static_cast<size_t>(dy.shape[2]) * dy.shape[3];
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < n * ch; ++plane) {
    const int item = plane / ch, c = plane % ch;
    const T* g = dy.plane(item, c);
    const int32_t* amax = argmax.plane(item, c);
    T* out = dx.plane(item, c);
    for (size_t i = 0; i < opp; ++i) out[amax[i]] += g[i];
  }
  return dx;
}

template <typename T>
Tensor<T> gap_forward(const Tensor<T>& x) {
  const int n = x.shape[0], ch = x.shape[1];
  const size_t hw = static_cast<size_t>(x.shape[2]) * x.shape[3];
  Tensor<T> y(n, ch, 1, 1);
  for (int item = 0; item < n; ++item) {
    for (int c = 0; c < ch; ++c) {
      const T* src = x.plane(item, c);
      T acc = T{};
      for (size_t i = 0; i < hw; ++i) acc += src[i];
      y.at(item, c, 0, 0) = acc / static_cast<T>(hw);
    }
  }
  return y;
}

template <typename T>
Tensor<T> gap_backward(const Tensor<T>& dy, const std::array<int, 4>& in_shape) {
  Tensor<T> dx(in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
  const size_t hw = static_cast<size_t>(in_shape[2]) * in_shape[3];
  for (int item = 0; item < in_shape[0]; ++item) {
    for (int c = 0; c < in_shape[1]; ++c) {
      const T g = dy.at(item, c, 0, 0) / static_cast<T>(hw);
      T* out = dx.plane(item, c);
      for (size_t i = 0; i < hw; ++i) out[i] = g;
    }
  }
  return dx;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.v)
    if (v < T{}) v = T{};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& pre, const Tensor<T>& dy) {
  if (pre.size() != dy.size()) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor<T> dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (pre.v[i] <= T{}) dx.v[i] = T{};
  return dx;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int n = x.shape[0], in = x.shape[1];
  const int out = w.shape[0];
  if (w.shape[1] != in) throw std::invalid_argument("dense: input width mismatch");
  if (x.shape[2] != 1 || x.shape[3] != 1) throw std::invalid_argument("dense: expects (n, f, 1, 1)");
  Tensor<T> y(n, out, 1, 1);
  for (int item = 0; item < n; ++item) {
    const T* xrow = x.v.data() + static_cast<size_t>(item) * in;
    T* yrow = y.v.data() + static_cast<size_t>(item) * out;
    for (int o = 0; o < out; ++o)
      yrow[o] = b.v[static_cast<size_t>(o)] + dot(w.v.data() + static_cast<size_t>(o) * in, xrow, in);
  }
  return y;
}

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                    Tensor<T>* dw, Tensor<T>* db) {
  const int n = x.shape[0], in = x.shape[1], out = w.shape[0];
  if (dy.shape[0] != n || dy.shape[1] != out)
    throw std::invalid_argument("dense_backward: dy shape mismatch");
  if (db) {
    *db = Tensor<T>(out, 1, 1, 1);
    for (int item = 0; item < n; ++item)
      for (int o = 0; o < out; ++o) db->v[static_cast<size_t>(o)] += dy.at(item, o, 0, 0);
  }
  if (dw) {
    *dw = Tensor<T>(out, in, 1, 1);
    for (int item = 0; item < n; ++item) {
      const T* xrow = x.v.data() + static_cast<size_t>(item) * in;
      const T* dyrow = dy.v.data() + static_cast<size_t>(item) * out;
      for (int o = 0; o < out; ++o) {
        const T g = dyrow[o];
        T* wrow = dw->v.data() + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) wrow[i] += g * xrow[i];
      }
    }
  }
  if (dx) {
    *dx = Tensor<T>(n, in, 1, 1);
    for (int item = 0; item < n; ++item) {
      const T* dyrow = dy.v.data() + static_cast<size_t>(item) * out;
      T* dxrow = dx->v.data() + static_cast<size_t>(item) * in;
      for (int o = 0; o < out; ++o) {
        const T g = dyrow[o];
        const T* wrow = w.v.data() + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) dxrow[i] += g * wrow[i];
      }
    }
  }
}

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, Mode mode, Rng* rng,
                          Tensor<uint8_t>* mask) {
  if (mode == Mode::infer || rate <= 0.0) {
    if (mask) *mask = Tensor<uint8_t>(x.shape[0], x.shape[1], x.shape[2], x.shape[3], 1);
    return x;
  }
  if (!rng) throw std::invalid_argument("dropout: training mode needs an rng");
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> y = x;
  Tensor<uint8_t> m(x.shape[0], x.shape[1], x.shape[2], x.shape[3], 0);
  for (size_t i = 0; i < y.size(); ++i) {
    if (rng->uniform() < rate) {
      y.v[i] = T{};
    } else {
      m.v[i] = 1;
      y.v[i] *= scale;
    }
  }
  if (mask) *mask = std::move(m);
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& dy, const Tensor<uint8_t>& mask, double rate) {
  if (dy.size() != mask.size()) throw std::invalid_argument("dropout_backward: shape mismatch");
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> dx = dy;
  for (size_t i = 0; i < dx.size(); ++i) dx.v[i] = mask.v[i] ? dx.v[i] * scale : T{};
  return dx;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const int n = x.shape[0], k = x.shape[1];
  Tensor<T> y(n, k, 1, 1);
  for (int item = 0; item < n; ++item) {
    const T* xrow = x.v.data() + static_cast<size_t>(item) * k;
    T* yrow = y.v.data() + static_cast<size_t>(item) * k;
    T mx = xrow[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, xrow[i]);
    T sum = T{};
    for (int i = 0; i < k; ++i) {
      yrow[i] = std::exp(xrow[i] - mx);
      sum += yrow[i];
    }
    for (int i = 0; i < k; ++i) yrow[i] /= sum;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  const int n = y.shape[0], k = y.shape[1];
  Tensor<T> dx(n, k, 1, 1);
  for (int item = 0; item < n; ++item) {
    const T* yrow = y.v.data() + static_cast<size_t>(item) * k;
    const T* grow = dy.v.data() + static_cast<size_t>(item) * k;
    T inner = T{};
    for (int i = 0; i < k; ++i) inner += yrow[i] * grow[i];
    T* drow = dx.v.data() + static_cast<size_t>(item) * k;
    for (int i = 0; i < k; ++i) drow[i] = yrow[i] * (grow[i] - inner);
  }
  return dx;
}

template <typename T>
double cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels) {
  const int n = probs.shape[0], k = probs.shape[1];
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  double loss = 0.0;
  for (int item = 0; item < n; ++item) {
    const int lbl = labels[static_cast<size_t>(item)];
    if (lbl < 0 || lbl >= k) throw std::invalid_argument("cross_entropy: label out of range");
    const double p = std::max(static_cast<double>(probs.at(item, lbl, 0, 0)), 1e-12);
    loss -= std::log(p);
  }
  return loss / n;
}

template <typename T>
Tensor<T> cross_entropy_grad(const Tensor<T>& probs, const std::vector<int>& labels) {
  const int n = probs.shape[0], k = probs.shape[1];
  Tensor<T> d(n, k, 1, 1);
  for (int item = 0; item < n; ++item) {
    const int lbl = labels[static_cast<size_t>(item)];
    const double p = std::max(static_cast<double>(probs.at(item, lbl, 0, 0)), 1e-12);
    d.at(item, lbl, 0, 0) = static_cast<T>(-1.0 / (p * n));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> run_stream(const NetworkSpec& spec, const std::vector<ConvLayer<T>>& layers,
                     const Tensor<T>& x, const char* stream_name, StreamCache<T>* cache) {
  const int L = static_cast<int>(layers.size());
  Tensor<T> cur = x;
  if (cache) {
    cache->conv_in.clear();
    cache->conv_pre.clear();
    cache->pool_argmax.clear();
  }
  for (int i = 0; i < L; ++i) {
    if (cache) cache->conv_in.push_back(cur);
    Tensor<T> pre = conv2d_forward(cur, layers[i].w, layers[i].b);
    check_finite(pre, (std::string(stream_name) + ".conv" + std::to_string(i)).c_str());
    Tensor<T> act = relu_forward(pre);
    if (cache) cache->conv_pre.push_back(std::move(pre));
    if (i + 1 < L) {
      Tensor<int32_t> amax;
      cur = maxpool_forward(act, spec.pool_window, spec.pool_stride, cache ? &amax : nullptr);
      if (cache) cache->pool_argmax.push_back(std::move(amax));
    } else {
      if (cache) cache->last_relu = act;
      cur = std::move(act);
    }
  }
  Tensor<T> feat = gap_forward(cur);
  if (cache) cache->gap_out = feat;
  return feat;
}

template <typename T>
Tensor<T> run_head(const NetworkSpec& spec, const Parameters<T>& params, Tensor<T> features,
                   Mode mode, Rng* rng, ForwardCache<T>* cache) {
  const int D = static_cast<int>(params.head.size());
  if (cache) {
    cache->features = features;
    cache->dense_in.clear();
    cache->dense_pre.clear();
    cache->dropout_active = false;
  }
  Tensor<T> cur = std::move(features);
  for (int j = 0; j < D; ++j) {
    if (cache) cache->dense_in.push_back(cur);
    Tensor<T> pre = dense_forward(cur, params.head[j].w, params.head[j].b);
    check_finite(pre, ("head.dense" + std::to_string(j)).c_str());
    if (cache) cache->dense_pre.push_back(pre);
    if (j + 1 < D) {
      Tensor<T> act = relu_forward(pre);
      if (j == 0 && mode == Mode::train && spec.dropout_rate > 0.0) {
        Tensor<uint8_t> mask;
        act = dropout_forward(act, spec.dropout_rate, mode, rng, &mask);
        if (cache) {
          cache->dropout_mask = std::move(mask);
          cache->dropout_active = true;
        }
      }
      cur = std::move(act);
    } else {
      cur = softmax_rows(pre);
      check_finite(cur, "head.softmax");
    }
  }
  if (cache) cache->probs = cur;
  return cur;
}

}  // namespace

template <typename T>
Tensor<T> baseline_forward(const NetworkSpec& spec, const Parameters<T>& params, const Tensor<T>& x,
                           Mode mode, Rng* rng, ForwardCache<T>* cache) {
  if (params.kind != ModelKind::baseline) throw std::invalid_argument("baseline_forward: wrong params");
  if (x.shape[2] != spec.input_size_px || x.shape[3] != spec.input_size_px ||
      x.shape[1] != spec.input_channels)
    throw std::invalid_argument("baseline_forward: input shape does not match spec");
  Tensor<T> feat = run_stream(spec, params.stream1, x, "stream1", cache ? &cache->s1 : nullptr);
  return run_head(spec, params, std::move(feat), mode, rng, cache);
}

template <typename T>
Tensor<T> symmetry_forward(const NetworkSpec& spec, const Parameters<T>& params, const Tensor<T>& x1,
                           const Tensor<T>& x2, Mode mode, Rng* rng, ForwardCache<T>* cache) {
  if (params.kind != ModelKind::symmetry) throw std::invalid_argument("symmetry_forward: wrong params");
  for (const Tensor<T>* x : {&x1, &x2}) {
    if (x->shape[2] != spec.input_size_px || x->shape[3] != spec.input_size_px ||
        x->shape[1] != spec.input_channels)
      throw std::invalid_argument("symmetry_forward: input shape does not match spec");
  }
  if (x1.shape[0] != x2.shape[0]) throw std::invalid_argument("symmetry_forward: batch mismatch");
  Tensor<T> f1 = run_stream(spec, params.stream1, x1, "stream1", cache ? &cache->s1 : nullptr);
  Tensor<T> f2 = run_stream(spec, params.stream2, x2, "stream2", cache ? &cache->s2 : nullptr);
  const int n = f1.shape[0], fd = f1.shape[1];
  Tensor<T> feat(n, 2 * fd, 1, 1);
  for (int item = 0; item < n; ++item) {
    for (int c = 0; c < fd; ++c) {
      feat.at(item, c, 0, 0) = f1.at(item, c, 0, 0);
      feat.at(item, fd + c, 0, 0) = f2.at(item, c, 0, 0);
    }
  }
  return run_head(spec, params, std::move(feat), mode, rng, cache);
}

namespace {

template <typename T>
void stream_backward(const std::vector<ConvLayer<T>>& layers, const StreamCache<T>& cache,
                     const Tensor<T>& d_gap, std::vector<ConvLayer<T>>& grads, Tensor<T>* dx_out) {
  const int L = static_cast<int>(layers.size());
  Tensor<T> d = gap_backward(d_gap, cache.last_relu.shape);
  for (int i = L - 1; i >= 0; --i) {
    Tensor<T> d_pre = relu_backward(cache.conv_pre[static_cast<size_t>(i)], d);
    Tensor<T> dx;
    conv2d_backward(cache.conv_in[static_cast<size_t>(i)], layers[static_cast<size_t>(i)].w, d_pre,
                    (i > 0 || dx_out) ? &dx : nullptr, &grads[static_cast<size_t>(i)].w,
                    &grads[static_cast<size_t>(i)].b);
    if (i > 0) {
      d = maxpool_backward(dx, cache.pool_argmax[static_cast<size_t>(i - 1)],
                           cache.conv_pre[static_cast<size_t>(i - 1)].shape);
      // conv_pre[i-1] has the relu input shape for stage i-1's pool
    } else if (dx_out) {
      *dx_out = std::move(dx);
    }
  }
}

}  // namespace

template <typename T>
Parameters<T> network_backward(const NetworkSpec& spec, const Parameters<T>& params,
                               const ForwardCache<T>& cache, const std::vector<int>& labels,
                               Tensor<T>* dx1, Tensor<T>* dx2) {
  Parameters<T> grads = zeros_like(params);

  const Tensor<T> d_ce = cross_entropy_grad(cache.probs, labels);
  Tensor<T> d = softmax_backward(cache.probs, d_ce);

  const int D = static_cast<int>(params.head.size());
  for (int j = D - 1; j >= 0; --j) {
    Tensor<T> dx;
    dense_backward(cache.dense_in[static_cast<size_t>(j)], params.head[static_cast<size_t>(j)].w, d,
                   &dx, &grads.head[static_cast<size_t>(j)].w, &grads.head[static_cast<size_t>(j)].b);
    d = std::move(dx);
    if (j > 0) {
      if (j == 1 && cache.dropout_active)
        d = dropout_backward(d, cache.dropout_mask, spec.dropout_rate);
      d = relu_backward(cache.dense_pre[static_cast<size_t>(j - 1)], d);
    }
  }

  if (params.kind == ModelKind::baseline) {
    stream_backward(params.stream1, cache.s1, d, grads.stream1, dx1);
  } else {
    const int n = d.shape[0];
    const int fd = spec.feature_dim();
    Tensor<T> d1(n, fd, 1, 1), d2(n, fd, 1, 1);
    for (int item = 0; item < n; ++item) {
      for (int c = 0; c < fd; ++c) {
        d1.at(item, c, 0, 0) = d.at(item, c, 0, 0);
        d2.at(item, c, 0, 0) = d.at(item, fd + c, 0, 0);
      }
    }
    stream_backward(params.stream1, cache.s1, d1, grads.stream1, dx1);
    stream_backward(params.stream2, cache.s2, d2, grads.stream2, dx2);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'S', 'Y', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCkptVersion = 1;

json spec_to_json(const NetworkSpec& spec) {
  return json{{"kind", to_string(spec.kind)},
              {"conv_filters", spec.conv_filters},
              {"conv_kernel", spec.conv_kernel},
              {"pool_window", spec.pool_window},
              {"pool_stride", spec.pool_stride},
              {"dense_units", spec.dense_units},
              {"dropout_rate", spec.dropout_rate},
              {"input_size_px", spec.input_size_px},
              {"input_channels", spec.input_channels}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  spec.kind = model_kind_from(j.at("kind").get<std::string>());
  spec.conv_filters = j.at("conv_filters").get<std::vector<int>>();
  spec.conv_kernel = j.at("conv_kernel").get<int>();
  spec.pool_window = j.at("pool_window").get<int>();
  spec.pool_stride = j.at("pool_stride").get<int>();
  spec.dense_units = j.at("dense_units").get<std::vector<int>>();
  spec.dropout_rate = j.at("dropout_rate").get<double>();
  spec.input_size_px = j.at("input_size_px").get<int>();
  spec.input_channels = j.at("input_channels").get<int>();
  return spec;
}

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const Parameters<float>& params, int epoch, double val_auc,
                     const Provenance& prov) {
  json header;
  header["schema_version"] = 1;
  header["kind"] = to_string(params.kind);
  header["epoch"] = epoch;
  header["val_auc"] = val_auc;
  header["spec"] = spec_to_json(spec);
  header["provenance"] = json{{"config_hash", hash_hex(prov.config_hash)},
                              {"seed", prov.seed},
                              {"tool_version", prov.tool_version}};

  json layers = json::array();
  std::vector<const Tensor<float>*> tensors;
  uint64_t offset = 0;
  auto& mutable_params = const_cast<Parameters<float>&>(params);
  for_each_param<float>(mutable_params, [&](const std::string& name, Tensor<float>& t) {
    layers.push_back(json{{"name", name},
                          {"shape", t.shape},
                          {"offset", offset},
                          {"count", t.size()}});
    tensors.push_back(&t);
    offset += t.size();
  });
  header["layers"] = std::move(layers);

  const std::string hdr = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.write(kCkptMagic, sizeof(kCkptMagic));
  const uint32_t version = kCkptVersion;
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint64_t hdr_len = hdr.size();
  f.write(reinterpret_cast<const char*>(&hdr_len), sizeof(hdr_len));
  f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto* t : tensors)
    f.write(reinterpret_cast<const char*>(t->v.data()),
            static_cast<std::streamsize>(t->size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCkptVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) +
                             " is not supported (expected 1)");
  uint64_t hdr_len = 0;
  f.read(reinterpret_cast<char*>(&hdr_len), sizeof(hdr_len));
  std::string hdr(hdr_len, '\0');
  f.read(hdr.data(), static_cast<std::streamsize>(hdr_len));
  const json header = json::parse(hdr);

  Checkpoint ckpt;
  ckpt.spec = spec_from_json(header.at("spec"));
  ckpt.spec.validate();
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.val_auc = header.at("val_auc").get<double>();
  const auto& jp = header.at("provenance");
  ckpt.prov.config_hash = std::stoull(jp.at("config_hash").get<std::string>(), nullptr, 16);
  ckpt.prov.seed = jp.at("seed").get<uint64_t>();
  ckpt.prov.tool_version = jp.at("tool_version").get<std::string>();

  // Allocate the layout from the spec, then fill from the blob.
  Rng dummy(0);
  ckpt.params = glorot_init<float>(ckpt.spec, dummy);
  const auto& layers = header.at("layers");
  size_t li = 0;
  for_each_param<float>(ckpt.params, [&](const std::string& name, Tensor<float>& t) {
    const auto& jl = layers.at(li++);
    if (jl.at("name").get<std::string>() != name)
      throw std::runtime_error("checkpoint layer order mismatch at " + name);
    if (jl.at("count").get<uint64_t>() != t.size())
      throw std::runtime_error("checkpoint layer size mismatch at " + name);
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
  if (!f) throw std::runtime_error("truncated checkpoint: " + path.string());
  return ckpt;
}

// ---------------------------------------------------------------------------
// Explicit instantiations (float for training, double for gradient checks)
// ---------------------------------------------------------------------------

#define SYMCAD_INSTANTIATE(T)                                                                      \
  template struct Parameters<T>;                                                                   \
  template Parameters<T> glorot_init<T>(const NetworkSpec&, Rng&);                                 \
  template Parameters<T> zeros_like<T>(const Parameters<T>&);                                      \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                   Tensor<T>*, Tensor<T>*, Tensor<T>*);                            \
  template Tensor<T> maxpool_forward<T>(const Tensor<T>&, int, int, Tensor<int32_t>*);             \
  template Tensor<T> maxpool_backward<T>(const Tensor<T>&, const Tensor<int32_t>&,                 \
                                         const std::array<int, 4>&);                               \
  template Tensor<T> gap_forward<T>(const Tensor<T>&);                                             \
  template Tensor<T> gap_backward<T>(const Tensor<T>&, const std::array<int, 4>&);                 \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                            \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> dense_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template void dense_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                  Tensor<T>*, Tensor<T>*, Tensor<T>*);                             \
  template Tensor<T> dropout_forward<T>(const Tensor<T>&, double, Mode, Rng*, Tensor<uint8_t>*);   \
  template Tensor<T> dropout_backward<T>(const Tensor<T>&, const Tensor<uint8_t>&, double);        \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                            \
  template Tensor<T> softmax_backward<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template double cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);                     \
  template Tensor<T> cross_entropy_grad<T>(const Tensor<T>&, const std::vector<int>&);             \
  template Tensor<T> baseline_forward<T>(const NetworkSpec&, const Parameters<T>&,                 \
                                         const Tensor<T>&, Mode, Rng*, ForwardCache<T>*);          \
  template Tensor<T> symmetry_forward<T>(const NetworkSpec&, const Parameters<T>&,                 \
                                         const Tensor<T>&, const Tensor<T>&, Mode, Rng*,           \
                                         ForwardCache<T>*);                                        \
  template Parameters<T> network_backward<T>(const NetworkSpec&, const Parameters<T>&,             \
                                             const ForwardCache<T>&, const std::vector<int>&,      \
                                             Tensor<T>*, Tensor<T>*);

SYMCAD_INSTANTIATE(float)
SYMCAD_INSTANTIATE(double)

#undef SYMCAD_INSTANTIATE

}  // namespace symcad::nnet
