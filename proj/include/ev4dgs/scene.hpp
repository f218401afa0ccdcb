#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ev4dgs/coarse.hpp"
#include "ev4dgs/core/error.hpp"
#include "ev4dgs/gaussians.hpp"
#include "ev4dgs/io/binary.hpp"
#include "ev4dgs/rasterizer.hpp"

namespace ev4dgs {

/// Coarse model, anchored Gaussians and the fixed render setup.
struct Scene {
  CoarsePointModel coarse;
  GaussianSet gaussians;
  RenderOptions render;
  std::string coarse_source;  // path of the coarse checkpoint the scene started from
};

inline RenderedView render_scene(const Scene& s, const Camera& cam, double t) {
  return splat(s.gaussians, s.coarse.points_at(t), cam, s.render, t);
}

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_string(io::ByteWriter& w, const std::string& s) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  w.put_magic(s);
}

inline std::string get_string(io::ByteReader& r) {
  const auto n = r.get<std::uint32_t>();
  const auto bytes = r.get_vector<char>(n);
  return std::string(bytes.begin(), bytes.end());
}

inline void put_doubles(io::ByteWriter& w, const std::vector<double>& v) {
  w.put<std::uint64_t>(v.size());
  w.put_span<double>(v);
}

inline std::vector<double> get_doubles(io::ByteReader& r) { return r.get_vector<double>(r.get<std::uint64_t>()); }

inline void put_coarse(io::ByteWriter& w, const CoarsePointModel& m) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.basis.num_bases));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.basis.num_points));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.net.freqs));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.net.mlp.hidden_width()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.net.mlp.hidden_layers()));
  w.put<double>(m.t_begin);
  w.put<double>(m.t_end);
  put_doubles(w, m.basis.coords);
  put_doubles(w, m.net.mlp.params);
}

inline CoarsePointModel get_coarse(io::ByteReader& r) {
  CoarsePointModel m;
  const int K = static_cast<int>(r.get<std::uint32_t>());
  const int N = static_cast<int>(r.get<std::uint32_t>());
  const int F = static_cast<int>(r.get<std::uint32_t>());
  const int width = static_cast<int>(r.get<std::uint32_t>());
  const int layers = static_cast<int>(r.get<std::uint32_t>());
  if (K < 1 || N < 4 || F < 0 || F > 32 || layers > 64 || width > 1 << 16) throw DataError("bad coarse model header");
  m.t_begin = r.get<double>();
  m.t_end = r.get<double>();
  m.basis = DeformationBasis(K, N);
  m.basis.coords = get_doubles(r);
  m.net = TimeWeightNet(F, width, layers, K);
  auto params = get_doubles(r);
  if (m.basis.coords.size() != static_cast<std::size_t>(K) * N * 3 || params.size() != m.net.mlp.params.size())
    throw DataError("coarse model arrays disagree with header");
  m.net.mlp.params = std::move(params);
  for (double v : m.basis.coords)
    if (!std::isfinite(v)) throw DataError("coarse basis has non-finite coordinates");
  return m;
}

}  // namespace detail

// "EV4C", u16 version, coarse model block.
inline std::vector<std::uint8_t> coarse_bytes(const CoarsePointModel& m) {
  io::ByteWriter w;
  w.put_magic("EV4C");
  w.put<std::uint16_t>(kCheckpointVersion);
  detail::put_coarse(w, m);
  return w.bytes();
}

inline void save_coarse(const std::string& path, const CoarsePointModel& m) {
  io::ByteWriter w;
  w.put_span<std::uint8_t>(coarse_bytes(m));
  w.save(path);
}

inline CoarsePointModel load_coarse(const std::string& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("EV4C");
  if (r.get<std::uint16_t>() != kCheckpointVersion) throw DataError("unsupported coarse checkpoint version");
  return detail::get_coarse(r);
}

// "EV4S", u16 version, source path, render setup, coarse block, Gaussians.
inline std::vector<std::uint8_t> scene_bytes(const Scene& s) {
  io::ByteWriter w;
  w.put_magic("EV4S");
  w.put<std::uint16_t>(kCheckpointVersion);
  detail::put_string(w, s.coarse_source);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.render.channels));
  for (double b : s.render.background) w.put<double>(b);
  detail::put_coarse(w, s.coarse);
  const GaussianSet& g = s.gaussians;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.k));
  w.put<std::uint64_t>(g.size());
  for (int n : g.neighbors) w.put<std::uint32_t>(static_cast<std::uint32_t>(n));
  w.put_span<double>(g.raw_weights);
  w.put_span<double>(g.rotation);
  w.put_span<double>(g.log_scale);
  w.put_span<double>(g.raw_opacity);
  w.put_span<double>(g.raw_color);
  return w.bytes();
}

inline void save_scene(const std::string& path, const Scene& s) {
  const auto bytes = scene_bytes(s);
  io::ByteWriter w;
  w.put_span<std::uint8_t>(bytes);
  w.save(path);
}

inline Scene load_scene(const std::string& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("EV4S");
  if (r.get<std::uint16_t>() != kCheckpointVersion) throw DataError("unsupported scene checkpoint version");
  Scene s;
  s.coarse_source = detail::get_string(r);
  s.render.channels = r.get<std::uint8_t>();
  if (s.render.channels != 1 && s.render.channels != 3) throw DataError("scene must have 1 or 3 channels");
  for (double& b : s.render.background) b = r.get<double>();
  s.coarse = detail::get_coarse(r);
  GaussianSet& g = s.gaussians;
  g.k = static_cast<int>(r.get<std::uint32_t>());
  if (g.k < 1 || g.k > 8) throw DataError("bad neighbor count in scene checkpoint");
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining()) throw DataError("scene checkpoint truncated");
  for (auto v : r.get_vector<std::uint32_t>(n * g.k)) g.neighbors.push_back(static_cast<int>(v));
  g.raw_weights = r.get_vector<double>(n * g.k);
  g.rotation = r.get_vector<double>(n * 4);
  g.log_scale = r.get_vector<double>(n * 3);
  g.raw_opacity = r.get_vector<double>(n);
  g.raw_color = r.get_vector<double>(n * 3);
  try {
    g.validate(s.coarse.num_points());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid scene checkpoint: ") + e.what());
  }
  return s;
}

}  // namespace ev4dgs
