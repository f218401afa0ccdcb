#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ev4dgs/core/error.hpp"
#include "ev4dgs/core/image.hpp"

namespace ev4dgs::io {

inline constexpr double kDisplayGamma = 2.2;

/// Reads an 8-bit PNG as values in [0,1] (no transfer function applied).
/// Grey images load as one channel, anything else as RGB.
inline Image read_png_raw(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG " + path + ": " + img.message);
  }
  const bool grey = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = grey ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int c = grey ? 1 : 3;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), c);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int ch = 0; ch < c; ++ch)
        out.at(ch, y, x) = buf[(static_cast<std::size_t>(y) * out.width + x) * c + ch] / 255.0;
  return out;
}

/// PNG decoded to linear intensity with x^2.2.
inline Image read_png_linear(const std::string& path) {
  Image img = read_png_raw(path);
  for (auto& v : img.data) v = std::pow(v, kDisplayGamma);
  return img;
}

/// Writes values in [0,1] (clamped) as 8-bit grey or RGB.
inline void write_png_raw(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("PNG output needs 1 or 3 channels");
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(img.width);
  out.height = static_cast<png_uint_32>(img.height);
  out.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(out));
  const int c = img.channels;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * img.width + x) * c + ch] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  if (!png_image_write_to_file(&out, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path + ": " + out.message);
  }
}

/// Linear intensity encoded with x^(1/2.2) before quantization.
inline void write_png_gamma(const std::string& path, const Image& linear) {
  Image enc = linear;
  for (auto& v : enc.data) v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / kDisplayGamma);
  write_png_raw(path, enc);
}

/// Portable float map; "Pf" grey or "PF" RGB, bottom-to-top rows.
inline Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open PFM " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if ((magic != "Pf" && magic != "PF") || w <= 0 || h <= 0 || scale == 0.0) {
    throw DataError("malformed PFM header in " + path);
  }
  const int c = magic == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  std::vector<float> raw(static_cast<std::size_t>(w) * h * c);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!in) throw DataError("truncated PFM " + path);
  if (!little) {
    for (auto& f : raw) {
      auto* b = reinterpret_cast<std::uint8_t*>(&f);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
    }
  }
  Image out(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out.at(ch, h - 1 - y, x) = raw[(static_cast<std::size_t>(y) * w + x) * c + ch];
  return out;
}

inline void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("PFM output needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write PFM " + path);
  out << (img.channels == 3 ? "PF" : "Pf") << "\n" << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> raw(img.data.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < img.channels; ++ch)
        raw[(static_cast<std::size_t>(y) * img.width + x) * img.channels + ch] =
            static_cast<float>(img.at(ch, img.height - 1 - y, x));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
}

/// Loads .png (decoded to linear) or .pfm (already linear).
inline Image read_linear_image(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".pfm" || ext == ".PFM") return read_pfm(path);
  if (ext == ".png" || ext == ".PNG") return read_png_linear(path);
  throw DataError("unsupported image type: " + path);
}

/// Sorted .png/.pfm files of a directory.
inline std::vector<std::string> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".pfm" || ext == ".PNG" || ext == ".PFM") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace ev4dgs::io
