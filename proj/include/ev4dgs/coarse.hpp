#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "ev4dgs/binary_mask.hpp"
#include "ev4dgs/camera.hpp"
#include "ev4dgs/chamfer.hpp"
#include "ev4dgs/core/parallel.hpp"
#include "ev4dgs/core/rng.hpp"
#include "ev4dgs/mlp.hpp"

namespace ev4dgs {

/// [t, sin(2^0 pi t), cos(2^0 pi t), ..., sin(2^(F-1) pi t), cos(2^(F-1) pi t)]
inline std::vector<double> positional_encoding(double t, int freqs) {
  std::vector<double> out;
  out.reserve(2 * freqs + 1);
  out.push_back(t);
  double f = std::numbers::pi;
  for (int i = 0; i < freqs; ++i, f *= 2.0) {
    out.push_back(std::sin(f * t));
    out.push_back(std::cos(f * t));
  }
  return out;
}

/// K point clouds of N points each, stored [k][i][xyz].
struct DeformationBasis {
  int num_bases = 0;
  int num_points = 0;
  std::vector<double> coords;

  DeformationBasis() = default;
  DeformationBasis(int k, int n) : num_bases(k), num_points(n), coords(static_cast<std::size_t>(k) * n * 3, 0.0) {}

  std::size_t offset(int k, int i) const { return (static_cast<std::size_t>(k) * num_points + i) * 3; }
  Vec3 point(int k, int i) const {
    const double* p = coords.data() + offset(k, i);
    return {p[0], p[1], p[2]};
  }
  void set_point(int k, int i, const Vec3& v) {
    double* p = coords.data() + offset(k, i);
    p[0] = v.x();
    p[1] = v.y();
    p[2] = v.z();
  }
};

/// MLP from encoded time to K blend weights.
struct TimeWeightNet {
  int freqs = 6;
  Mlp mlp;

  TimeWeightNet() = default;
  TimeWeightNet(int num_freqs, int hidden_width, int hidden_layers, int num_bases)
      : freqs(num_freqs), mlp(2 * num_freqs + 1, hidden_width, hidden_layers, num_bases) {}

  int num_bases() const { return mlp.output_dim(); }

  std::vector<double> weights(double t_normalized, Mlp::Cache* cache = nullptr) const {
    const auto phi = positional_encoding(t_normalized, freqs);
    return mlp.forward(phi, cache);
  }
};

inline std::vector<Vec3> blend(const DeformationBasis& basis, std::span<const double> alpha) {
  if (static_cast<int>(alpha.size()) != basis.num_bases) throw std::invalid_argument("blend: weight count != K");
  std::vector<Vec3> out(basis.num_points, Vec3::Zero());
  for (int k = 0; k < basis.num_bases; ++k) {
    const double a = alpha[k];
    const double* src = basis.coords.data() + basis.offset(k, 0);
    for (int i = 0; i < basis.num_points; ++i) {
      out[i].x() += a * src[3 * i];
      out[i].y() += a * src[3 * i + 1];
      out[i].z() += a * src[3 * i + 2];
    }
  }
  return out;
}

/// P(t) = sum_k alpha_k(t) B_k; t is normalized over [t_begin, t_end].
struct CoarsePointModel {
  DeformationBasis basis;
  TimeWeightNet net;
  double t_begin = 0.0;
  double t_end = 1.0;

  int num_points() const { return basis.num_points; }

  double normalized_time(double t) const {
    const double span = t_end - t_begin;
    return span > 0.0 ? (t - t_begin) / span : 0.0;
  }

  std::vector<double> weights_at(double t, Mlp::Cache* cache = nullptr) const {
    return net.weights(normalized_time(t), cache);
  }

  std::vector<Vec3> points_at(double t) const { return blend(basis, weights_at(t)); }
};

inline std::vector<Vec3> blend(const DeformationBasis& basis, const TimeWeightNet& net, double t_normalized) {
  return blend(basis, net.weights(t_normalized));
}

/// Gradients with the same layout as the model's parameters.
struct CoarseGradients {
  std::vector<double> basis;
  std::vector<double> net;

  CoarseGradients() = default;
  explicit CoarseGradients(const CoarsePointModel& m)
      : basis(m.basis.coords.size(), 0.0), net(m.net.mlp.params.size(), 0.0) {}

  void add(const CoarseGradients& o, double scale = 1.0) {
    for (std::size_t i = 0; i < basis.size(); ++i) basis[i] += scale * o.basis[i];
    for (std::size_t i = 0; i < net.size(); ++i) net[i] += scale * o.net[i];
  }
};

/// Pushes d(loss)/dP(t) through the blend and the weight network.
/// `net_grad` may alias `grads.net`; it is separate so callers can keep
/// per-thread network buffers.
inline void backprop_points(const CoarsePointModel& model, double t, const std::vector<Vec3>& dpoints,
                            std::span<double> basis_grad, std::span<double> net_grad) {
  Mlp::Cache cache;
  const auto alpha = model.weights_at(t, &cache);
  const int K = model.basis.num_bases;
  const int N = model.basis.num_points;
  std::vector<double> dalpha(K, 0.0);
  for (int k = 0; k < K; ++k) {
    const std::size_t off = model.basis.offset(k, 0);
    const double* B = model.basis.coords.data() + off;
    double* dB = basis_grad.data() + off;
    double s = 0.0;
    for (int i = 0; i < N; ++i) {
      const Vec3& g = dpoints[i];
      dB[3 * i] += alpha[k] * g.x();
      dB[3 * i + 1] += alpha[k] * g.y();
      dB[3 * i + 2] += alpha[k] * g.z();
      s += B[3 * i] * g.x() + B[3 * i + 1] * g.y() + B[3 * i + 2] * g.z();
    }
    dalpha[k] = s;
  }
  model.net.mlp.backward(cache, dalpha, net_grad);
}

/// d(pixel)/d(world point) for a pinhole camera, as a 2x3 Jacobian.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& world) {
  const Vec3 pc = cam.pose.apply(world);
  const auto& k = cam.intrinsics;
  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> J;
  J << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
  return J * cam.pose.R;
}

/// Stratified uniform sample of interior pixel centers: the true pixels (in
/// raster order) are cut into `count` equal strata with one draw per stratum.
inline std::vector<Vec2> sample_mask_points(const BinaryMask& mask, int count, Rng& rng) {
  std::vector<Vec2> inside;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) inside.emplace_back(x, y);
  if (static_cast<int>(inside.size()) <= count) return inside;
  std::vector<Vec2> out;
  out.reserve(count);
  const double stride = static_cast<double>(inside.size()) / count;
  for (int s = 0; s < count; ++s) {
    const auto lo = static_cast<std::size_t>(std::floor(s * stride));
    const auto hi = std::max(lo + 1, static_cast<std::size_t>(std::floor((s + 1) * stride)));
    out.push_back(inside[lo + rng.below(hi - lo)]);
  }
  return out;
}

/// One training view of the coarse stage.
struct MaskView {
  Camera camera;
  double t = 0.0;
  std::vector<Vec2> samples;
};

struct ViewChamfer {
  double value = 0.0;
  bool used = false;
};

/// Chamfer between mask samples and the projected model for one view, plus
/// d(value)/dP(t) under the fixed nearest-neighbor matching of this pass.
inline ViewChamfer view_mask_chamfer(const std::vector<Vec3>& points, const MaskView& view,
                                     std::vector<Vec3>* dpoints) {
  ViewChamfer out;
  const Projection proj = project(points, view.camera);
  std::vector<Vec2> projected;
  std::vector<int> source;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!proj.valid[i]) continue;
    projected.push_back(proj.pixels[i]);
    source.push_back(static_cast<int>(i));
  }
  if (dpoints) dpoints->assign(points.size(), Vec3::Zero());
  if (view.samples.empty() || projected.empty()) return out;
  const ChamferResult cr = chamfer_matched(view.samples, projected);
  out.value = cr.value;
  out.used = true;
  if (!dpoints) return out;

  std::vector<Vec2> dproj(projected.size(), Vec2::Zero());
  const double inv_m = 1.0 / static_cast<double>(view.samples.size());
  const double inv_n = 1.0 / static_cast<double>(projected.size());
  for (std::size_t a = 0; a < view.samples.size(); ++a) {
    const int b = cr.a_to_b[a];
    dproj[b] += 2.0 * inv_m * (projected[b] - view.samples[a]);
  }
  for (std::size_t b = 0; b < projected.size(); ++b) {
    dproj[b] += 2.0 * inv_n * (projected[b] - view.samples[cr.b_to_a[b]]);
  }
  for (std::size_t j = 0; j < projected.size(); ++j) {
    if (dproj[j].isZero(0.0)) continue;
    const int i = source[j];
    (*dpoints)[i] += projection_jacobian(view.camera, points[i]).transpose() * dproj[j];
  }
  return out;
}

/// Sum over views of the mask Chamfer term. When `grads` is given, the
/// gradients are accumulated into it in view order.
inline double mask_loss(const CoarsePointModel& model, const std::vector<MaskView>& views,
                        CoarseGradients* grads = nullptr, int* skipped = nullptr) {
  struct PerView {
    ViewChamfer chamfer;
    std::vector<Vec3> dpoints;
  };
  std::vector<PerView> per(views.size());
  parallel_for(views.size(), [&](std::size_t v) {
    const auto P = model.points_at(views[v].t);
    per[v].chamfer = view_mask_chamfer(P, views[v], grads ? &per[v].dpoints : nullptr);
  });
  double total = 0.0;
  int skip = 0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (!per[v].chamfer.used) {
      ++skip;
      continue;
    }
    total += per[v].chamfer.value;
    if (grads) backprop_points(model, views[v].t, per[v].dpoints, grads->basis, grads->net);
  }
  if (skipped) *skipped = skip;
  return total;
}

struct CoarseInitOptions {
  int num_bases = 20;
  int num_points = 3000;
  int pe_freqs = 6;
  int hidden_width = 128;
  int hidden_layers = 4;
  int hull_views = 8;
  int hull_resolution = 40;
  double basis_noise = 0.01;  // fraction of the scene extent
};

struct HullBox {
  Vec3 lo;
  Vec3 hi;
  bool carved = false;
};

/// Bounding box of a voxel visual hull carved from a subset of masks.
inline HullBox visual_hull_box(const CameraTrack& track, const std::vector<BinaryMask>& masks, int views,
                               int resolution) {
  // Point closest (least squares) to every optical axis.
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  double mean_dist = 0.0;
  for (std::size_t i = 0; i < track.size(); ++i) {
    const Pose& p = track.poses()[i].pose;
    const Vec3 c = p.center();
    const Vec3 d = p.R.row(2).transpose();
    const Mat3 M = Mat3::Identity() - d * d.transpose();
    A += M;
    b += M * c;
  }
  const Vec3 center = A.ldlt().solve(b);
  for (std::size_t i = 0; i < track.size(); ++i) mean_dist += (track.poses()[i].pose.center() - center).norm();
  mean_dist /= static_cast<double>(track.size());
  const double half = 0.5 * mean_dist;

  std::vector<std::size_t> subset;
  const std::size_t n = std::min(track.size(), masks.size());
  const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, views)));
  for (std::size_t s = 0; s < count; ++s) subset.push_back(s * n / count);

  HullBox box{center - Vec3::Constant(half), center + Vec3::Constant(half), false};
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = -lo;
  const double step = 2.0 * half / resolution;
  for (int iz = 0; iz < resolution; ++iz)
    for (int iy = 0; iy < resolution; ++iy)
      for (int ix = 0; ix < resolution; ++ix) {
        const Vec3 p = box.lo + step * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
        bool inside = true;
        for (std::size_t v : subset) {
          const Camera cam = track.camera(v);
          const Vec3 pc = cam.pose.apply(p);
          if (pc.z() < kMinDepth) {
            inside = false;
            break;
          }
          const int u = static_cast<int>(std::lround(cam.intrinsics.fx * pc.x() / pc.z() + cam.intrinsics.cx));
          const int w = static_cast<int>(std::lround(cam.intrinsics.fy * pc.y() / pc.z() + cam.intrinsics.cy));
          const BinaryMask& m = masks[v];
          if (u < 0 || w < 0 || u >= m.width || w >= m.height || !m.at(u, w)) {
            inside = false;
            break;
          }
        }
        if (inside) {
          lo = lo.cwiseMin(p);
          hi = hi.cwiseMax(p);
          box.carved = true;
        }
      }
  if (box.carved) {
    box.lo = lo - Vec3::Constant(0.5 * step);
    box.hi = hi + Vec3::Constant(0.5 * step);
  } else {
    box.lo = center - Vec3::Constant(0.25 * half);
    box.hi = center + Vec3::Constant(0.25 * half);
  }
  return box;
}

/// B_1 on a sphere fitted to the visual-hull box, B_k = B_1 + small noise.
/// The output layer starts at alpha_k = 1/K so that P(t) ~ B_1.
inline CoarsePointModel init_coarse_model(const CoarseInitOptions& opt, const CameraTrack& track,
                                          const std::vector<BinaryMask>& masks, Rng& rng) {
  if (opt.num_bases < 1 || opt.num_points < 4) throw std::invalid_argument("coarse model needs K >= 1, N_c >= 4");
  const HullBox box = visual_hull_box(track, masks, opt.hull_views, opt.hull_resolution);
  const Vec3 center = 0.5 * (box.lo + box.hi);
  const Vec3 ext = box.hi - box.lo;
  const double radius = ext.mean() / 2.0;
  const double noise = opt.basis_noise * ext.maxCoeff();

  CoarsePointModel m;
  m.t_begin = track.t_begin();
  m.t_end = track.t_end();
  m.basis = DeformationBasis(opt.num_bases, opt.num_points);
  for (int i = 0; i < opt.num_points; ++i) {
    Vec3 d;
    do {
      d = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (d.norm() < 1e-12);
    m.basis.set_point(0, i, center + radius * d.normalized());
  }
  for (int k = 1; k < opt.num_bases; ++k)
    for (int i = 0; i < opt.num_points; ++i)
      m.basis.set_point(k, i, m.basis.point(0, i) + noise * Vec3(rng.normal(), rng.normal(), rng.normal()));
  m.net = TimeWeightNet(opt.pe_freqs, opt.hidden_width, opt.hidden_layers, opt.num_bases);
  m.net.mlp.initialize(rng, 1.0 / opt.num_bases);
  return m;
}

/// Symmetric mean pixel distance between the projected model and the true
/// pixels of each mask, averaged over views with a non-empty mask.
inline double reprojection_chamfer_px(const CoarsePointModel& model, const CameraTrack& track,
                                      const std::vector<BinaryMask>& masks) {
  const std::size_t n = std::min(track.size(), masks.size());
  std::vector<double> per(n, -1.0);
  parallel_for(n, [&](std::size_t v) {
    std::vector<Vec2> pixels;
    for (int y = 0; y < masks[v].height; ++y)
      for (int x = 0; x < masks[v].width; ++x)
        if (masks[v].at(x, y)) pixels.emplace_back(x, y);
    const Projection proj = project(model.points_at(track.time(v)), track.camera(v));
    std::vector<Vec2> pts;
    for (std::size_t i = 0; i < proj.pixels.size(); ++i)
      if (proj.valid[i]) pts.push_back(proj.pixels[i]);
    if (pixels.empty() || pts.empty()) return;
    const ChamferResult cr = chamfer_matched(pixels, pts);
    double ab = 0.0, ba = 0.0;
    for (std::size_t a = 0; a < pixels.size(); ++a) ab += (pixels[a] - pts[cr.a_to_b[a]]).norm();
    for (std::size_t b = 0; b < pts.size(); ++b) ba += (pts[b] - pixels[cr.b_to_a[b]]).norm();
    per[v] = 0.5 * (ab / pixels.size() + ba / pts.size());
  });
  double sum = 0.0;
  int used = 0;
  for (double d : per)
    if (d >= 0.0) {
      sum += d;
      ++used;
    }
  return used ? sum / used : 0.0;
}

}  // namespace ev4dgs
