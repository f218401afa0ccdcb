#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ev4dgs/core/image.hpp"
#include "ev4dgs/io/image_io.hpp"

namespace ev4dgs {

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;
  double t = 0.0;
  int view = -1;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { values[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values) n += v != 0;
    return n;
  }

  Image to_image() const {
    Image img(width, height, 1);
    for (std::size_t i = 0; i < values.size(); ++i) img.data[i] = values[i] ? 1.0 : 0.0;
    return img;
  }

  static BinaryMask from_image(const Image& img, double threshold = 0.5) {
    BinaryMask m(img.width, img.height);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = img.data[i] > threshold ? 1 : 0;
    return m;
  }
};

/// 8-bit PNG, 0 or 255.
inline void write_mask_png(const std::string& path, const BinaryMask& m) { io::write_png_raw(path, m.to_image()); }

inline BinaryMask read_mask_png(const std::string& path) { return BinaryMask::from_image(io::read_png_raw(path)); }

}  // namespace ev4dgs
