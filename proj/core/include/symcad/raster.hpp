#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace symcad {

/// Dense row-major 2D raster.
template <typename T>
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Image() = default;
  Image(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const { return rows == o.rows && cols == o.cols; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }
};

using Raster = Image<float>;
using RasterD = Image<double>;

template <typename T>
Image<T> flip_horizontal(const Image<T>& img) {
  Image<T> out(img.rows, img.cols);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) out.at(r, c) = img.at(r, img.cols - 1 - c);
  return out;
}

template <typename T>
bool all_finite(const Image<T>& img) {
  for (T v : img.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

/// Bilinear sample at fractional (row, col); zero outside the raster.
float bilinear_sample(const Raster& img, double row, double col);

/// Separable Gaussian blur, kernel truncated at 4 sigma, zero padding at borders.
Raster gaussian_blur(const Raster& img, double sigma);
RasterD gaussian_blur(const RasterD& img, double sigma);

/// Blur with the kernel renormalized to the in-bounds mass, so a constant
/// image stays exactly constant up to rounding (no border falloff).
RasterD gaussian_blur_normalized(const RasterD& img, double sigma);

Raster resize_bilinear(const Raster& img, int out_rows, int out_cols);

/// 16-bit binary PGM (P5, maxval 65535, big-endian samples). Intensities are
/// clamped to [0,1] and scaled to [0,65535] on write, rescaled back on read.
void write_pgm16(const std::filesystem::path& path, const Raster& img,
                 const std::vector<std::string>& comments = {});
Raster read_pgm16(const std::filesystem::path& path);

}  // namespace symcad
