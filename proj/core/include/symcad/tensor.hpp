#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace symcad::nnet {

/// Dense NCHW tensor. Dense-layer activations use (n, features, 1, 1).
template <typename T>
struct Tensor {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T{})
      : shape{n, c, h, w}, v(static_cast<size_t>(n) * c * h * w, fill) {}

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  size_t size() const { return v.size(); }

  T& at(int in, int ic, int ih, int iw) {
    return v[((static_cast<size_t>(in) * shape[1] + ic) * shape[2] + ih) * shape[3] + iw];
  }
  const T& at(int in, int ic, int ih, int iw) const {
    return v[((static_cast<size_t>(in) * shape[1] + ic) * shape[2] + ih) * shape[3] + iw];
  }

  T* plane(int in, int ic) {
    return v.data() + (static_cast<size_t>(in) * shape[1] + ic) * shape[2] * shape[3];
  }
  const T* plane(int in, int ic) const {
    return v.data() + (static_cast<size_t>(in) * shape[1] + ic) * shape[2] * shape[3];
  }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape[0], shape[1], shape[2], shape[3]);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

}  // namespace symcad::nnet
