#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ev4dgs/camera.hpp"
#include "ev4dgs/core/image.hpp"
#include "ev4dgs/core/parallel.hpp"
#include "ev4dgs/gaussians.hpp"

namespace ev4dgs {

inline constexpr int kTileSize = 16;

struct RenderOptions {
  int channels = 1;  // 1 renders color[0] only
  std::array<double, 3> background{0.0, 0.0, 0.0};
  double dilation = 0.3;             // isotropic screen-space covariance floor (px^2)
  double min_alpha = 1.0 / 255.0;    // contributions below this are skipped
  double min_transmittance = 1e-4;   // compositing stops once T falls below this
  double near_plane = 0.01;
};

/// Screen-space data of one Gaussian, kept for the backward pass.
struct ProjectedGaussian {
  bool visible = false;
  Vec3 mu = Vec3::Zero();
  Vec3 cam = Vec3::Zero();
  Vec2 mean = Vec2::Zero();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();
  Eigen::Matrix<double, 2, 3> T = Eigen::Matrix<double, 2, 3>::Zero();  // J * W
  Mat3 R = Mat3::Identity();
  Vec3 scale = Vec3::Ones();
  Mat3 sigma = Mat3::Identity();
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
};

/// Compact copy of the screen-space terms a pixel loop needs.
struct TileSplat {
  double mx, my;
  double c00, c01, c11;  // conic
  double opacity;
  double color[3];
  double cut;  // powers below this give alpha < min_alpha for certain
  int x0, x1, y0, y1;
};

struct RasterState {
  std::vector<ProjectedGaussian> gaussians;
  std::vector<std::vector<int>> tiles;  // depth-sorted Gaussian indices per tile
  std::vector<std::vector<TileSplat>> packed;  // tiles[t][e] in the same order
  std::vector<int> processed;           // list prefix that can affect each pixel
  int tiles_x = 0;
  int tiles_y = 0;
  int singular = 0;  // Gaussians dropped for a degenerate 2D covariance
};

struct RenderedView {
  Image intensity;
  Image alpha;
  double t = 0.0;
  Camera camera;
  RenderOptions options;
  RasterState state;
};

/// Gradients in the layout of GaussianSet's raw arrays, plus coarse points.
struct SplatGradients {
  std::vector<double> raw_weights;
  std::vector<double> rotation;
  std::vector<double> log_scale;
  std::vector<double> raw_opacity;
  std::vector<double> raw_color;
  std::vector<Vec3> points;

  SplatGradients() = default;
  SplatGradients(const GaussianSet& s, std::size_t num_points)
      : raw_weights(s.raw_weights.size(), 0.0),
        rotation(s.rotation.size(), 0.0),
        log_scale(s.log_scale.size(), 0.0),
        raw_opacity(s.raw_opacity.size(), 0.0),
        raw_color(s.raw_color.size(), 0.0),
        points(num_points, Vec3::Zero()) {}

  void add(const SplatGradients& o, double scale = 1.0) {
    auto acc = [scale](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
    };
    acc(raw_weights, o.raw_weights);
    acc(rotation, o.rotation);
    acc(log_scale, o.log_scale);
    acc(raw_opacity, o.raw_opacity);
    acc(raw_color, o.raw_color);
    for (std::size_t i = 0; i < points.size(); ++i) points[i] += scale * o.points[i];
  }
};

namespace detail {

inline ProjectedGaussian project_gaussian(const GaussianSet& set, std::size_t i, const std::vector<Vec3>& points,
                                          const Camera& cam, const RenderOptions& opt, bool* singular) {
  ProjectedGaussian g;
  g.mu = center_at(set, i, points);
  g.cam = cam.pose.apply(g.mu);
  const double z = g.cam.z();
  if (z < opt.near_plane) return g;
  g.opacity = set.opacity(i);
  if (g.opacity < opt.min_alpha) return g;
  const auto& k = cam.intrinsics;
  const double x = g.cam.x(), y = g.cam.y();
  g.mean = Vec2(k.fx * x / z + k.cx, k.fy * y / z + k.cy);
  Eigen::Matrix<double, 2, 3> J;
  J << k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z);
  g.T = J * cam.pose.R;
  g.R = set.quaternion(i).toRotationMatrix();
  g.scale = set.scale(i);
  const Mat3 M = g.R * g.scale.asDiagonal();
  g.sigma = M * M.transpose();
  Eigen::Matrix2d cov = g.T * g.sigma * g.T.transpose();
  cov(0, 0) += opt.dilation;
  cov(1, 1) += opt.dilation;
  const double det = cov.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) {
    *singular = true;
    return g;
  }
  g.conic = cov.inverse();
  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double lambda = mid + std::sqrt(std::max(0.1, mid * mid - det));
  const double radius = std::ceil(3.0 * std::sqrt(lambda));
  // The 3-sigma box, cut down to the ellipse outside of which alpha stays
  // below min_alpha. Pixels removed this way would be skipped anyway.
  const double reach = -2.0 * (std::log(opt.min_alpha / g.opacity) - 1e-6);
  const double rx = std::min(radius, std::sqrt(reach * cov(0, 0)) + 1e-6);
  const double ry = std::min(radius, std::sqrt(reach * cov(1, 1)) + 1e-6);
  g.x0 = std::max({0, static_cast<int>(std::floor(g.mean.x() - radius)), static_cast<int>(std::floor(g.mean.x() - rx))});
  g.x1 = std::min({k.width - 1, static_cast<int>(std::ceil(g.mean.x() + radius)), static_cast<int>(std::ceil(g.mean.x() + rx))});
  g.y0 = std::max({0, static_cast<int>(std::floor(g.mean.y() - radius)), static_cast<int>(std::floor(g.mean.y() - ry))});
  g.y1 = std::min({k.height - 1, static_cast<int>(std::ceil(g.mean.y() + radius)), static_cast<int>(std::ceil(g.mean.y() + ry))});
  if (g.x0 > g.x1 || g.y0 > g.y1) return g;
  g.color = set.color(i);
  g.visible = true;
  return g;
}

inline double gaussian_power(const TileSplat& g, double dx, double dy) {
  return -0.5 * (g.c00 * dx * dx + 2.0 * g.c01 * dx * dy + g.c11 * dy * dy);
}

/// Entries of a tile list whose vertical extent covers row py, in order.
inline void row_entries(const std::vector<TileSplat>& packed, int py, std::vector<int>& row) {
  row.clear();
  for (std::size_t e = 0; e < packed.size(); ++e)
    if (py >= packed[e].y0 && py <= packed[e].y1) row.push_back(static_cast<int>(e));
}

inline TileSplat pack(const ProjectedGaussian& g, const RenderOptions& opt) {
  TileSplat p;
  p.mx = g.mean.x();
  p.my = g.mean.y();
  p.c00 = g.conic(0, 0);
  p.c01 = g.conic(0, 1);
  p.c11 = g.conic(1, 1);
  p.opacity = g.opacity;
  for (int c = 0; c < 3; ++c) p.color[c] = g.color[c];
  p.cut = std::log(opt.min_alpha / g.opacity) - 1e-6;
  p.x0 = g.x0;
  p.x1 = g.x1;
  p.y0 = g.y0;
  p.y1 = g.y1;
  return p;
}

}  // namespace detail

/// Tile-based front-to-back splatting of the anchored Gaussians, whose
/// centers follow the given coarse points.
inline RenderedView splat(const GaussianSet& set, const std::vector<Vec3>& points, const Camera& cam,
                          const RenderOptions& opt, double t = 0.0) {
  const int W = cam.intrinsics.width;
  const int H = cam.intrinsics.height;
  RenderedView view;
  view.t = t;
  view.camera = cam;
  view.options = opt;
  view.intensity = Image(W, H, opt.channels);
  view.alpha = Image(W, H, 1);
  RasterState& st = view.state;
  const std::size_t n = set.size();
  st.gaussians.resize(n);
  std::vector<char> singular(n, 0);
  parallel_for((n + 255) / 256, [&](std::size_t block) {
    for (std::size_t i = block * 256; i < std::min(n, (block + 1) * 256); ++i) {
      bool s = false;
      st.gaussians[i] = detail::project_gaussian(set, i, points, cam, opt, &s);
      singular[i] = s;
    }
  });
  for (char s : singular) st.singular += s;

  st.tiles_x = (W + kTileSize - 1) / kTileSize;
  st.tiles_y = (H + kTileSize - 1) / kTileSize;
  st.tiles.assign(static_cast<std::size_t>(st.tiles_x) * st.tiles_y, {});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = st.gaussians[i];
    if (!g.visible) continue;
    for (int ty = g.y0 / kTileSize; ty <= g.y1 / kTileSize; ++ty)
      for (int tx = g.x0 / kTileSize; tx <= g.x1 / kTileSize; ++tx)
        st.tiles[static_cast<std::size_t>(ty) * st.tiles_x + tx].push_back(static_cast<int>(i));
  }
  st.processed.assign(static_cast<std::size_t>(W) * H, 0);
  st.packed.assign(st.tiles.size(), {});

  parallel_for(st.tiles.size(), [&](std::size_t tile) {
    auto& list = st.tiles[tile];
    std::sort(list.begin(), list.end(), [&](int a, int b) {
      const double da = st.gaussians[a].cam.z(), db = st.gaussians[b].cam.z();
      return da < db || (da == db && a < b);
    });
    auto& packed = st.packed[tile];
    packed.reserve(list.size());
    for (int i : list) packed.push_back(detail::pack(st.gaussians[i], opt));
    const int tx = static_cast<int>(tile) % st.tiles_x;
    const int ty = static_cast<int>(tile) / st.tiles_x;
    std::vector<int> row;
    for (int py = ty * kTileSize; py < std::min(H, (ty + 1) * kTileSize); ++py) {
      detail::row_entries(packed, py, row);
      for (int px = tx * kTileSize; px < std::min(W, (tx + 1) * kTileSize); ++px) {
        double T = 1.0;
        double C[3] = {0.0, 0.0, 0.0};
        int visited = static_cast<int>(packed.size());
        for (int e : row) {
          const TileSplat& g = packed[e];
          if (px < g.x0 || px > g.x1) continue;
          const double power = detail::gaussian_power(g, px - g.mx, py - g.my);
          if (power < g.cut) continue;
          const double a = g.opacity * std::exp(power);
          if (a < opt.min_alpha) continue;
          for (int c = 0; c < opt.channels; ++c) C[c] += T * a * g.color[c];
          T *= 1.0 - a;
          if (T < opt.min_transmittance) {
            visited = e + 1;
            break;
          }
        }
        const std::size_t pix = static_cast<std::size_t>(py) * W + px;
        st.processed[pix] = visited;
        for (int c = 0; c < opt.channels; ++c) view.intensity.at(c, py, px) = C[c] + T * opt.background[c];
        view.alpha(py, px) = 1.0 - T;
      }
    }
  });
  return view;
}

/// Reverse-mode pass for splat(). `d_intensity` / `d_alpha` hold
/// d(loss)/d(output); either may be empty (treated as zero).
inline SplatGradients splat_backward(const RenderedView& view, const GaussianSet& set,
                                     const std::vector<Vec3>& points, const Image& d_intensity,
                                     const Image& d_alpha) {
  SplatGradients out(set, points.size());
  const RasterState& st = view.state;
  const RenderOptions& opt = view.options;
  const int W = view.intensity.width;
  const int H = view.intensity.height;
  const bool has_di = !d_intensity.data.empty();
  const bool has_da = !d_alpha.data.empty();
  if (!has_di && !has_da) return out;

  // Screen-space gradients per (tile, list entry): mean(2), conic(3), opacity, color(3).
  struct Entry {
    double dmean[2] = {0, 0};
    double dconic[3] = {0, 0, 0};  // d/dQ00, d/dQ01 (= d/dQ10), d/dQ11
    double dopacity = 0.0;
    double dcolor[3] = {0, 0, 0};
  };
  std::vector<std::vector<Entry>> tile_grads(st.tiles.size());

  parallel_for(st.tiles.size(), [&](std::size_t tile) {
    const auto& list = st.tiles[tile];
    const auto& packed = st.packed[tile];
    auto& grads = tile_grads[tile];
    grads.assign(list.size(), Entry{});
    struct Hit {
      int entry;
      double alpha;
      double G;
      double T;
      double dx, dy;
    };
    std::vector<Hit> hits;
    std::vector<int> row;
    const int tx = static_cast<int>(tile) % st.tiles_x;
    const int ty = static_cast<int>(tile) / st.tiles_x;
    for (int py = ty * kTileSize; py < std::min(H, (ty + 1) * kTileSize); ++py) {
      detail::row_entries(packed, py, row);
      for (int px = tx * kTileSize; px < std::min(W, (tx + 1) * kTileSize); ++px) {
        const std::size_t pix = static_cast<std::size_t>(py) * W + px;
        double gC[3] = {0, 0, 0};
        bool any = false;
        if (has_di)
          for (int c = 0; c < opt.channels; ++c) {
            gC[c] = d_intensity.at(c, py, px);
            any = any || gC[c] != 0.0;
          }
        const double gA = has_da ? d_alpha(py, px) : 0.0;
        if (!any && gA == 0.0) continue;

        hits.clear();
        double T = 1.0;
        for (int e : row) {
          if (e >= st.processed[pix]) break;
          const TileSplat& g = packed[e];
          if (px < g.x0 || px > g.x1) continue;
          const double dx = px - g.mx, dy = py - g.my;
          const double power = detail::gaussian_power(g, dx, dy);
          if (power < g.cut) continue;
          const double G = std::exp(power);
          const double a = g.opacity * G;
          if (a < opt.min_alpha) continue;
          hits.push_back({e, a, G, T, dx, dy});
          T *= 1.0 - a;
          if (T < opt.min_transmittance) break;
        }
        double R[3] = {opt.background[0], opt.background[1], opt.background[2]};
        double Q = 1.0;
        for (std::size_t h = hits.size(); h-- > 0;) {
          const Hit& hit = hits[h];
          const TileSplat& g = packed[hit.entry];
          Entry& en = grads[hit.entry];
          double dalpha = gA * hit.T * Q;
          for (int c = 0; c < opt.channels; ++c) {
            dalpha += gC[c] * hit.T * (g.color[c] - R[c]);
            en.dcolor[c] += gC[c] * hit.T * hit.alpha;
            R[c] = hit.alpha * g.color[c] + (1.0 - hit.alpha) * R[c];
          }
          Q *= 1.0 - hit.alpha;
          en.dopacity += dalpha * hit.G;
          const double dpower = dalpha * hit.alpha;
          // power = -1/2 d^T Q d with d = pixel - mean
          en.dmean[0] += dpower * (g.c00 * hit.dx + g.c01 * hit.dy);
          en.dmean[1] += dpower * (g.c01 * hit.dx + g.c11 * hit.dy);
          en.dconic[0] += -0.5 * dpower * hit.dx * hit.dx;
          en.dconic[1] += -0.5 * dpower * hit.dx * hit.dy;
          en.dconic[2] += -0.5 * dpower * hit.dy * hit.dy;
        }
      }
    }
  });

  // Fixed tile order keeps the reduction independent of scheduling.
  std::vector<Entry> screen(set.size());
  for (std::size_t tile = 0; tile < st.tiles.size(); ++tile) {
    const auto& list = st.tiles[tile];
    for (std::size_t e = 0; e < list.size(); ++e) {
      const Entry& src = tile_grads[tile][e];
      Entry& dst = screen[list[e]];
      for (int a = 0; a < 2; ++a) dst.dmean[a] += src.dmean[a];
      for (int a = 0; a < 3; ++a) dst.dconic[a] += src.dconic[a];
      dst.dopacity += src.dopacity;
      for (int a = 0; a < 3; ++a) dst.dcolor[a] += src.dcolor[a];
    }
  }

  const auto& K = view.camera.intrinsics;
  const Mat3& Wc = view.camera.pose.R;
  std::vector<Vec3> dmu(set.size(), Vec3::Zero());
  parallel_for((set.size() + 255) / 256, [&](std::size_t block) {
    for (std::size_t i = block * 256; i < std::min(set.size(), (block + 1) * 256); ++i) {
      const ProjectedGaussian& g = st.gaussians[i];
      if (!g.visible) continue;
      const Entry& s = screen[i];

      const double o = g.opacity;
      out.raw_opacity[i] = s.dopacity * o * (1.0 - o);
      for (int c = 0; c < 3; ++c) out.raw_color[3 * i + c] = s.dcolor[c] * g.color[c] * (1.0 - g.color[c]);

      Eigen::Matrix2d GQ;
      GQ << s.dconic[0], s.dconic[1], s.dconic[1], s.dconic[2];
      const Eigen::Matrix2d GS2 = -g.conic * GQ * g.conic;
      const Mat3 GSigma = g.T.transpose() * GS2 * g.T;
      const Eigen::Matrix<double, 2, 3> GT = 2.0 * GS2 * g.T * g.sigma;
      const Eigen::Matrix<double, 2, 3> GJ = GT * Wc.transpose();

      const double x = g.cam.x(), y = g.cam.y(), z = g.cam.z();
      const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
      Vec3 gcam = Vec3::Zero();
      gcam.x() += GJ(0, 2) * (-K.fx * iz2);
      gcam.y() += GJ(1, 2) * (-K.fy * iz2);
      gcam.z() += GJ(0, 0) * (-K.fx * iz2) + GJ(0, 2) * (2.0 * K.fx * x * iz3) + GJ(1, 1) * (-K.fy * iz2) +
                  GJ(1, 2) * (2.0 * K.fy * y * iz3);
      gcam.x() += s.dmean[0] * K.fx * iz;
      gcam.z() += s.dmean[0] * (-K.fx * x * iz2);
      gcam.y() += s.dmean[1] * K.fy * iz;
      gcam.z() += s.dmean[1] * (-K.fy * y * iz2);
      dmu[i] = Wc.transpose() * gcam;

      // Sigma = M M^T, M = R diag(s)
      const Mat3 M = g.R * g.scale.asDiagonal();
      const Mat3 GM = 2.0 * GSigma * M;
      Mat3 GR;
      for (int c = 0; c < 3; ++c) {
        GR.col(c) = GM.col(c) * g.scale[c];
        out.log_scale[3 * i + c] = GM.col(c).dot(g.R.col(c)) * g.scale[c];
      }
      const double* rq = set.rotation.data() + 4 * i;
      const double norm = std::sqrt(rq[0] * rq[0] + rq[1] * rq[1] + rq[2] * rq[2] + rq[3] * rq[3]);
      const double qw = rq[0] / norm, qx = rq[1] / norm, qy = rq[2] / norm, qz = rq[3] / norm;
      const double gw = 2.0 * (-qz * GR(0, 1) + qy * GR(0, 2) + qz * GR(1, 0) - qx * GR(1, 2) - qy * GR(2, 0) +
                               qx * GR(2, 1));
      const double gx = 2.0 * (qy * GR(0, 1) + qz * GR(0, 2) + qy * GR(1, 0) - 2.0 * qx * GR(1, 1) -
                               qw * GR(1, 2) + qz * GR(2, 0) + qw * GR(2, 1) - 2.0 * qx * GR(2, 2));
      const double gy = 2.0 * (-2.0 * qy * GR(0, 0) + qx * GR(0, 1) + qw * GR(0, 2) + qx * GR(1, 0) +
                               qz * GR(1, 2) - qw * GR(2, 0) + qz * GR(2, 1) - 2.0 * qy * GR(2, 2));
      const double gz = 2.0 * (-2.0 * qz * GR(0, 0) - qw * GR(0, 1) + qx * GR(0, 2) + qw * GR(1, 0) -
                               2.0 * qz * GR(1, 1) + qy * GR(1, 2) + qx * GR(2, 0) + qy * GR(2, 1));
      const double dot = qw * gw + qx * gx + qy * gy + qz * gz;
      out.rotation[4 * i + 0] = (gw - qw * dot) / norm;
      out.rotation[4 * i + 1] = (gx - qx * dot) / norm;
      out.rotation[4 * i + 2] = (gy - qy * dot) / norm;
      out.rotation[4 * i + 3] = (gz - qz * dot) / norm;

      // softmax anchor weights
      const auto w = set.weights(i);
      double gw_mean = 0.0;
      std::array<double, 8> gweight{};
      for (int j = 0; j < set.k; ++j) {
        gweight[j] = dmu[i].dot(points[set.neighbors[i * set.k + j]]);
        gw_mean += w[j] * gweight[j];
      }
      for (int j = 0; j < set.k; ++j) out.raw_weights[i * set.k + j] = w[j] * (gweight[j] - gw_mean);
    }
  });
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!st.gaussians[i].visible) continue;
    const auto w = set.weights(i);
    for (int j = 0; j < set.k; ++j) out.points[set.neighbors[i * set.k + j]] += w[j] * dmu[i];
  }
  return out;
}

/// L = ln(max(I^(1/gamma), eps)) per pixel and channel.
inline Image log_gamma(const Image& intensity, double gamma = 2.2, double eps = 1e-3) {
  Image out = intensity;
  for (auto& v : out.data) v = std::log(std::max(std::pow(std::max(v, 0.0), 1.0 / gamma), eps));
  return out;
}

inline Image log_gamma(const RenderedView& view, double gamma = 2.2, double eps = 1e-3) {
  return log_gamma(view.intensity, gamma, eps);
}

/// dL/dI of log_gamma at I (zero where the floor is active).
inline double log_gamma_derivative(double intensity, double gamma = 2.2, double eps = 1e-3) {
  if (intensity <= 0.0 || std::pow(intensity, 1.0 / gamma) <= eps) return 0.0;
  return 1.0 / (gamma * intensity);
}

}  // namespace ev4dgs
