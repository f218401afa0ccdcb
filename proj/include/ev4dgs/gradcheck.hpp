#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ev4dgs/camera.hpp"
#include "ev4dgs/coarse.hpp"
#include "ev4dgs/core/rng.hpp"
#include "ev4dgs/gaussians.hpp"
#include "ev4dgs/rasterizer.hpp"

namespace ev4dgs {

struct GradCheckEntry {
  std::string group;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-3;

  std::size_t passed() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.rel_error < tolerance; }));
  }
  double pass_fraction() const { return entries.empty() ? 0.0 : static_cast<double>(passed()) / entries.size(); }
  std::map<std::string, std::pair<int, int>> by_group() const {
    std::map<std::string, std::pair<int, int>> out;
    for (const auto& e : entries) {
      auto& p = out[e.group];
      p.first += e.rel_error < tolerance;
      p.second += 1;
    }
    return out;
  }
};

/// |a - n| / max(|a|, |n|, 1e-8); the floor keeps round-off around an
/// exactly zero derivative from counting as a mismatch.
inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

namespace detail {

struct ParamRef {
  std::string group;
  std::vector<double>* values;
  std::size_t index;
  const std::vector<double>* grad;
};

inline GradCheckReport run_check(std::vector<ParamRef> params, const std::function<double()>& loss, double h,
                                 double tol) {
  GradCheckReport rep;
  rep.tolerance = tol;
  for (const ParamRef& p : params) {
    double& v = (*p.values)[p.index];
    const double v0 = v;
    v = v0 + h;
    const double fp = loss();
    v = v0 - h;
    const double fm = loss();
    v = v0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = (*p.grad)[p.index];
    rep.entries.push_back({p.group, p.index, analytic, numeric, relative_error(analytic, numeric)});
  }
  return rep;
}

/// Picks `count` entries spread evenly over the groups, uniformly inside each.
inline std::vector<ParamRef> pick(const std::vector<std::pair<std::string, std::pair<std::vector<double>*, const std::vector<double>*>>>& groups,
                                  int count, Rng& rng) {
  std::vector<ParamRef> out;
  for (int i = 0; i < count; ++i) {
    const auto& g = groups[static_cast<std::size_t>(i) % groups.size()];
    out.push_back({g.first, g.second.first, rng.below(g.second.first->size()), g.second.second});
  }
  return out;
}

}  // namespace detail

/// A small random scene for derivative tests: coarse model, anchored
/// Gaussians and a camera looking at them.
struct GradCheckScene {
  CoarsePointModel coarse;
  GaussianSet gaussians;
  Camera camera;
  RenderOptions options;
  double t = 0.3;
};

inline GradCheckScene make_gradcheck_scene(Rng& rng, int channels = 1) {
  GradCheckScene s;
  const int K = 3, N = 24;
  s.coarse.basis = DeformationBasis(K, N);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i)
      s.coarse.basis.set_point(k, i, Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)));
  s.coarse.net = TimeWeightNet(2, 8, 2, K);
  s.coarse.net.mlp.initialize(rng, 1.0 / K, 0.3);
  s.gaussians.k = 4;
  for (int g = 0; g < 16; ++g) {
    AnchoredGaussian a;
    for (int j = 0; j < 4; ++j) {
      a.neighbors.push_back(static_cast<int>(rng.below(N)));
      a.weights.push_back(0.2 + rng.uniform());
    }
    double sum = 0.0;
    for (double w : a.weights) sum += w;
    for (double& w : a.weights) w /= sum;
    a.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
    a.scale = Vec3(rng.uniform(0.06, 0.15), rng.uniform(0.06, 0.15), rng.uniform(0.06, 0.15));
    a.opacity = rng.uniform(0.3, 0.8);
    a.color = Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    s.gaussians.push_back(a);
  }
  s.camera.intrinsics = {40.0, 40.0, 15.5, 15.5, 32, 32};
  s.camera.pose = look_at(Vec3(0.3, -2.0, 0.4), Vec3::Zero());
  s.options.channels = channels;
  s.options.background = {0.2, 0.3, 0.1};
  return s;
}

/// Central differences against splat_backward (chained into the coarse
/// model) for a random linear functional of intensity and alpha.
inline GradCheckReport renderer_gradient_check(std::uint64_t seed, int samples = 200, double h = 1e-4,
                                               double tol = 1e-3) {
  Rng rng(seed);
  GradCheckScene s = make_gradcheck_scene(rng, 3);
  const int W = s.camera.intrinsics.width, H = s.camera.intrinsics.height;
  Image wI(W, H, s.options.channels), wA(W, H, 1);
  for (auto& v : wI.data) v = rng.uniform(-1.0, 1.0);
  for (auto& v : wA.data) v = rng.uniform(-1.0, 1.0);

  auto loss = [&]() {
    const RenderedView v = splat(s.gaussians, s.coarse.points_at(s.t), s.camera, s.options, s.t);
    double l = 0.0;
    for (std::size_t i = 0; i < v.intensity.data.size(); ++i) l += wI.data[i] * v.intensity.data[i];
    for (std::size_t i = 0; i < v.alpha.data.size(); ++i) l += wA.data[i] * v.alpha.data[i];
    return l;
  };
  const auto P = s.coarse.points_at(s.t);
  const RenderedView view = splat(s.gaussians, P, s.camera, s.options, s.t);
  const SplatGradients g = splat_backward(view, s.gaussians, P, wI, wA);
  CoarseGradients cg(s.coarse);
  backprop_points(s.coarse, s.t, g.points, cg.basis, cg.net);

  GaussianSet& G = s.gaussians;
  const auto params = detail::pick({{"opacity", {&G.raw_opacity, &g.raw_opacity}},
                                    {"scale", {&G.log_scale, &g.log_scale}},
                                    {"rotation", {&G.rotation, &g.rotation}},
                                    {"color", {&G.raw_color, &g.raw_color}},
                                    {"weights", {&G.raw_weights, &g.raw_weights}},
                                    {"basis", {&s.coarse.basis.coords, &cg.basis}},
                                    {"mlp", {&s.coarse.net.mlp.params, &cg.net}}},
                                   samples, rng);
  return detail::run_check(params, loss, h, tol);
}

/// Central differences of the coarse mask loss with respect to basis
/// coordinates and network weights.
inline GradCheckReport coarse_gradient_check(std::uint64_t seed, int samples = 200, double h = 1e-4,
                                             double tol = 1e-3) {
  Rng rng(seed);
  GradCheckScene s = make_gradcheck_scene(rng);
  std::vector<MaskView> views;
  for (int v = 0; v < 3; ++v) {
    MaskView mv;
    mv.camera = s.camera;
    mv.camera.pose = look_at(Vec3(2.0 * std::cos(v * 2.1), 2.0 * std::sin(v * 2.1), 0.5), Vec3::Zero());
    mv.t = 0.2 + 0.3 * v;
    for (int i = 0; i < 40; ++i) mv.samples.emplace_back(rng.uniform(8.0, 24.0), rng.uniform(8.0, 24.0));
    views.push_back(mv);
  }
  CoarseGradients cg(s.coarse);
  mask_loss(s.coarse, views, &cg);
  auto loss = [&]() { return mask_loss(s.coarse, views); };
  const auto params = detail::pick(
      {{"basis", {&s.coarse.basis.coords, &cg.basis}}, {"mlp", {&s.coarse.net.mlp.params, &cg.net}}}, samples, rng);
  return detail::run_check(params, loss, h, tol);
}

}  // namespace ev4dgs
