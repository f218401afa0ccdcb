#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ev4dgs/core/error.hpp"

namespace ev4dgs {

/// Planar multi-channel grid of doubles, row-major within each channel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 1, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  double& at(int c, int y, int x) { return data[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data[index(c, y, x)]; }
  double& operator()(int y, int x) { return data[index(0, y, x)]; }
  double operator()(int y, int x) const { return data[index(0, y, x)]; }

  std::span<double> plane(int c) { return {data.data() + c * pixels(), pixels()}; }
  std::span<const double> plane(int c) const { return {data.data() + c * pixels(), pixels()}; }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Normalized 1D Gaussian taps, radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur with replicated borders. sigma <= 0 is identity.
inline Image gaussian_blur(const Image& in, double sigma) {
  if (sigma <= 0.0) return in;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  Image tmp(in.width, in.height, in.channels);
  Image out(in.width, in.height, in.channels);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int xx = std::clamp(x + i, 0, in.width - 1);
          s += k[i + r] * in.at(c, y, xx);
        }
        tmp.at(c, y, x) = s;
      }
    }
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int yy = std::clamp(y + i, 0, in.height - 1);
          s += k[i + r] * tmp.at(c, yy, x);
        }
        out.at(c, y, x) = s;
      }
    }
  }
  return out;
}

/// Bilinear sample of channel c at continuous pixel coordinates, clamped.
inline double sample_bilinear(const Image& img, int c, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(x), img.width - 2 < 0 ? 0 : img.width - 2);
  const int y0 = std::min(static_cast<int>(y), img.height - 2 < 0 ? 0 : img.height - 2);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
         fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

}  // namespace ev4dgs
