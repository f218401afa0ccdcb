#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "ev4dgs/camera.hpp"
#include "ev4dgs/coarse.hpp"
#include "ev4dgs/core/rng.hpp"

namespace ev4dgs {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One Gaussian in natural parameters. Raw anchor weights go through a
/// softmax, so only their differences matter.
struct AnchoredGaussian {
  std::vector<int> neighbors;
  std::vector<double> weights;  // convex weights, sum 1
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 scale = Vec3::Ones();
  double opacity = 0.5;
  Vec3 color = Vec3::Constant(0.5);
};

/// Gaussians anchored to coarse points, stored as raw (unconstrained)
/// parameter arrays: softmax weights, quaternion (w,x,y,z), log scale,
/// logit opacity, logit color.
struct GaussianSet {
  int k = 4;
  std::vector<int> neighbors;
  std::vector<double> raw_weights;
  std::vector<double> rotation;
  std::vector<double> log_scale;
  std::vector<double> raw_opacity;
  std::vector<double> raw_color;

  std::size_t size() const { return raw_opacity.size(); }
  bool empty() const { return raw_opacity.empty(); }

  void push_back(const AnchoredGaussian& g) {
    if (static_cast<int>(g.neighbors.size()) != k || static_cast<int>(g.weights.size()) != k) {
      throw std::invalid_argument("anchored Gaussian needs k neighbors and k weights");
    }
    for (int j = 0; j < k; ++j) {
      neighbors.push_back(g.neighbors[j]);
      raw_weights.push_back(std::log(std::max(g.weights[j], 1e-12)));
    }
    const Eigen::Quaterniond q = g.rotation.normalized();
    rotation.insert(rotation.end(), {q.w(), q.x(), q.y(), q.z()});
    for (int a = 0; a < 3; ++a) log_scale.push_back(std::log(g.scale[a]));
    raw_opacity.push_back(logit(std::clamp(g.opacity, 1e-9, 1.0 - 1e-9)));
    for (int a = 0; a < 3; ++a) raw_color.push_back(logit(std::clamp(g.color[a], 1e-9, 1.0 - 1e-9)));
  }

  std::array<double, 8> weights(std::size_t i) const {
    std::array<double, 8> w{};
    const double* r = raw_weights.data() + i * k;
    const double m = *std::max_element(r, r + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += (w[j] = std::exp(r[j] - m));
    for (int j = 0; j < k; ++j) w[j] /= s;
    return w;
  }

  Eigen::Quaterniond quaternion(std::size_t i) const {
    const double* q = rotation.data() + 4 * i;
    return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized();
  }

  Vec3 scale(std::size_t i) const {
    const double* s = log_scale.data() + 3 * i;
    return {std::exp(s[0]), std::exp(s[1]), std::exp(s[2])};
  }

  double opacity(std::size_t i) const { return sigmoid(raw_opacity[i]); }

  Vec3 color(std::size_t i) const {
    const double* c = raw_color.data() + 3 * i;
    return {sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])};
  }

  AnchoredGaussian get(std::size_t i) const {
    AnchoredGaussian g;
    const auto w = weights(i);
    for (int j = 0; j < k; ++j) {
      g.neighbors.push_back(neighbors[i * k + j]);
      g.weights.push_back(w[j]);
    }
    g.rotation = quaternion(i);
    g.scale = scale(i);
    g.opacity = opacity(i);
    g.color = color(i);
    return g;
  }

  void validate(int num_points) const {
    if (k < 1 || k > 8) throw std::invalid_argument("neighbors per Gaussian must be in [1, 8]");
    const std::size_t n = size();
    if (neighbors.size() != n * k || raw_weights.size() != n * k || rotation.size() != n * 4 ||
        log_scale.size() != n * 3 || raw_color.size() != n * 3) {
      throw std::invalid_argument("Gaussian parameter arrays disagree in length");
    }
    for (int idx : neighbors)
      if (idx < 0 || idx >= num_points) throw std::invalid_argument("Gaussian anchor index out of range");
  }

  /// Keeps entries whose index satisfies `keep`, in order.
  template <class Pred>
  std::vector<std::size_t> retain(Pred keep) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < size(); ++i)
      if (keep(i)) kept.push_back(i);
    auto compact = [&](auto& v, std::size_t stride) {
      using T = typename std::remove_reference_t<decltype(v)>::value_type;
      std::vector<T> out;
      out.reserve(kept.size() * stride);
      for (std::size_t i : kept) out.insert(out.end(), v.begin() + i * stride, v.begin() + (i + 1) * stride);
      v = std::move(out);
    };
    compact(neighbors, k);
    compact(raw_weights, k);
    compact(rotation, 4);
    compact(log_scale, 3);
    compact(raw_opacity, 1);
    compact(raw_color, 3);
    return kept;
  }
};

/// mu(t) = sum_j w_j P_{n_j}(t)
inline Vec3 center_at(const GaussianSet& set, std::size_t i, const std::vector<Vec3>& points) {
  const auto w = set.weights(i);
  Vec3 mu = Vec3::Zero();
  for (int j = 0; j < set.k; ++j) mu += w[j] * points[set.neighbors[i * set.k + j]];
  return mu;
}

inline Vec3 center_at(const GaussianSet& set, std::size_t i, const CoarsePointModel& model, double t) {
  return center_at(set, i, model.points_at(t));
}

/// Sigma = R diag(s^2) R^T
inline Mat3 covariance(const Eigen::Quaterniond& q, const Vec3& scale) {
  const Mat3 R = q.normalized().toRotationMatrix();
  return R * scale.cwiseAbs2().asDiagonal() * R.transpose();
}

inline Mat3 covariance(const AnchoredGaussian& g) { return covariance(g.rotation, g.scale); }

struct SeedOptions {
  int neighbors = 4;
  double scale_factor = 0.5;
  double opacity = 0.1;
  double color = 0.5;
};

/// Seeds n_g Gaussians at random convex combinations of k-nearest coarse
/// neighborhoods, bound once at the start of the sequence.
inline GaussianSet seed_gaussians(const CoarsePointModel& model, int n_g, Rng& rng, const SeedOptions& opt = {}) {
  if (n_g < 1) throw std::invalid_argument("seed_gaussians: need at least one Gaussian");
  const auto points = model.points_at(model.t_begin);
  const int n_c = static_cast<int>(points.size());
  const int k = std::min(opt.neighbors, n_c);
  GaussianSet set;
  set.k = k;
  std::vector<std::pair<double, int>> dist(n_c);
  for (int g = 0; g < n_g; ++g) {
    const int anchor = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_c)));
    for (int i = 0; i < n_c; ++i) dist[i] = {(points[i] - points[anchor]).squaredNorm(), i};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    AnchoredGaussian a;
    double spacing = 0.0;
    double wsum = 0.0;
    for (int j = 0; j < k; ++j) {
      a.neighbors.push_back(dist[j].second);
      a.weights.push_back(rng.exponential());
      wsum += a.weights.back();
      spacing += std::sqrt(dist[j].first);
    }
    for (auto& w : a.weights) w /= wsum;
    spacing = k > 1 ? spacing / (k - 1) : 1e-2;
    a.scale = Vec3::Constant(std::max(opt.scale_factor * spacing, 1e-6));
    a.opacity = opt.opacity;
    a.color = Vec3::Constant(opt.color);
    set.push_back(a);
  }
  return set;
}

}  // namespace ev4dgs
