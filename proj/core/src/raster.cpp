#include "symcad/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace symcad {

float bilinear_sample(const Raster& img, double row, double col) {
  const int r0 = static_cast<int>(std::floor(row));
  const int c0 = static_cast<int>(std::floor(col));
  const double fr = row - r0;
  const double fc = col - c0;
  auto px = [&](int r, int c) -> double {
    return img.in_bounds(r, c) ? img.at(r, c) : 0.0;
  };
  const double top = px(r0, c0) * (1.0 - fc) + px(r0, c0 + 1) * fc;
  const double bot = px(r0 + 1, c0) * (1.0 - fc) + px(r0 + 1, c0 + 1) * fc;
  return static_cast<float>(top * (1.0 - fr) + bot * fr);
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i / sigma) * (i / sigma));
    k[i + radius] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

template <typename T>
Image<T> blur_impl(const Image<T>& img, double sigma, bool renormalize) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
  Image<T> tmp(img.rows, img.cols);
  Image<T> out(img.rows, img.cols);
  // horizontal
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      double acc = 0.0, mass = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int cc = c + i;
        if (cc >= 0 && cc < img.cols) {
          acc += kernel[i + radius] * img.at(r, cc);
          mass += kernel[i + radius];
        }
      }
      tmp.at(r, c) = static_cast<T>(renormalize && mass > 0.0 ? acc / mass : acc);
    }
  }
  // vertical
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      double acc = 0.0, mass = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = r + i;
        if (rr >= 0 && rr < img.rows) {
          acc += kernel[i + radius] * tmp.at(rr, c);
          mass += kernel[i + radius];
        }
      }
      out.at(r, c) = static_cast<T>(renormalize && mass > 0.0 ? acc / mass : acc);
    }
  }
  return out;
}

}  // namespace

Raster gaussian_blur(const Raster& img, double sigma) { return blur_impl(img, sigma, false); }
RasterD gaussian_blur(const RasterD& img, double sigma) { return blur_impl(img, sigma, false); }
RasterD gaussian_blur_normalized(const RasterD& img, double sigma) {
  return blur_impl(img, sigma, true);
}

Raster resize_bilinear(const Raster& img, int out_rows, int out_cols) {
  if (out_rows <= 0 || out_cols <= 0) throw std::invalid_argument("resize_bilinear: bad output shape");
  Raster out(out_rows, out_cols);
  const double sr = static_cast<double>(img.rows) / out_rows;
  const double sc = static_cast<double>(img.cols) / out_cols;
  for (int r = 0; r < out_rows; ++r) {
    const double src_r = (r + 0.5) * sr - 0.5;
    for (int c = 0; c < out_cols; ++c) {
      const double src_c = (c + 0.5) * sc - 0.5;
      out.at(r, c) = bilinear_sample(img, src_r, src_c);
    }
  }
  return out;
}

void write_pgm16(const std::filesystem::path& path, const Raster& img,
                 const std::vector<std::string>& comments) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << "P5\n";
  for (const auto& c : comments) f << "# " << c << "\n";
  f << img.cols << " " << img.rows << "\n65535\n";
  std::vector<unsigned char> buf(img.size() * 2);
  for (size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
    const auto q = static_cast<uint16_t>(std::lround(v * 65535.0));
    buf[2 * i] = static_cast<unsigned char>(q >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(q & 0xFF);
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("short write: " + path.string());
}

Raster read_pgm16(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  auto next_token = [&]() -> long {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return std::stol(tok);
    }
    throw std::runtime_error("truncated PGM header: " + path.string());
  };
  const long cols = next_token();
  const long rows = next_token();
  const long maxval = next_token();
  if (maxval != 65535) throw std::runtime_error("expected 16-bit PGM: " + path.string());
  f.get();  // single whitespace after maxval
  Raster img(static_cast<int>(rows), static_cast<int>(cols));
  std::vector<unsigned char> buf(img.size() * 2);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("truncated PGM data: " + path.string());
  for (size_t i = 0; i < img.size(); ++i) {
    const int q = (buf[2 * i] << 8) | buf[2 * i + 1];
    img.data[i] = static_cast<float>(q / 65535.0);
  }
  return img;
}

}  // namespace symcad
