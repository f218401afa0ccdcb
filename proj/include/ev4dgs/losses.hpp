#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ev4dgs/binary_mask.hpp"
#include "ev4dgs/camera.hpp"
#include "ev4dgs/core/image.hpp"
#include "ev4dgs/core/rng.hpp"
#include "ev4dgs/events.hpp"
#include "ev4dgs/rasterizer.hpp"
#include "ev4dgs/scene.hpp"

namespace ev4dgs {

inline constexpr double kDefaultLMax = 0.02;

/// One event-loss sample: training view `view` at t_i and a window end t_j.
struct WindowSample {
  std::size_t view = 0;
  double t_i = 0.0;
  double t_j = 0.0;
};

/// Draws n views uniformly (with replacement) and one window per view.
/// Window ends past `t_stop` are clipped to it.
inline std::vector<WindowSample> draw_windows(const CameraTrack& track, int n, double l_max, double t_stop,
                                              Rng& rng) {
  std::vector<WindowSample> out;
  out.reserve(n);
  for (int s = 0; s < n; ++s) {
    WindowSample w;
    w.view = static_cast<std::size_t>(rng.below(track.size()));
    w.t_i = track.time(w.view);
    w.t_j = std::clamp(sample_window(w.t_i, l_max, rng), w.t_i, std::max(w.t_i, t_stop));
    out.push_back(w);
  }
  return out;
}

inline double stream_stop(const EventStream& stream, const CameraTrack& track) {
  return stream.empty() ? track.t_end() : stream.t_end();
}

struct SceneGradients {
  SplatGradients gaussians;
  CoarseGradients coarse;
  bool with_coarse = false;

  SceneGradients() = default;
  SceneGradients(const Scene& s, bool coarse_too)
      : gaussians(s.gaussians, static_cast<std::size_t>(s.coarse.num_points())),
        coarse(coarse_too ? CoarseGradients(s.coarse) : CoarseGradients()),
        with_coarse(coarse_too) {}

  void add(const SceneGradients& o, double scale = 1.0) {
    gaussians.add(o.gaussians, scale);
    if (with_coarse) coarse.add(o.coarse, scale);
  }
};

namespace detail {

inline double sgn(double v) { return (v > 0.0) - (v < 0.0); }

/// Mean over pixels of |dL - E| for one window. For color streams each pixel
/// compares only its Bayer channel. Fills d(term)/dI for both renders.
inline double event_term(const RenderedView& vi, const RenderedView& vj, const AccumulatedDifferenceMap& E,
                         Image* gi, Image* gj) {
  const int W = vi.intensity.width, H = vi.intensity.height;
  const bool color = E.channels == 3;
  const double inv = 1.0 / (static_cast<double>(W) * H);
  if (gi) *gi = Image(W, H, vi.intensity.channels);
  if (gj) *gj = Image(W, H, vj.intensity.channels);
  double sum = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int c = color ? static_cast<int>(bayer_channel(x, y)) : 0;
      const int rc = vi.intensity.channels == 1 ? 0 : c;
      const double Ii = vi.intensity.at(rc, y, x);
      const double Ij = vj.intensity.at(rc, y, x);
      const double Li = std::log(std::max(std::pow(std::max(Ii, 0.0), 1.0 / 2.2), 1e-3));
      const double Lj = std::log(std::max(std::pow(std::max(Ij, 0.0), 1.0 / 2.2), 1e-3));
      const double r = (Lj - Li) - E.value(color ? c : 0, y, x);
      sum += std::abs(r);
      if (gi || gj) {
        const double g = sgn(r) * inv;
        if (gj) gj->at(rc, y, x) += g * log_gamma_derivative(Ij);
        if (gi) gi->at(rc, y, x) -= g * log_gamma_derivative(Ii);
      }
    }
  return sum * inv;
}

/// Mean over pixels of |alpha - target|, with d/d(alpha).
inline double silhouette_term(const RenderedView& v, const Image& target, Image* galpha) {
  const std::size_t n = v.alpha.data.size();
  const double inv = 1.0 / static_cast<double>(n);
  if (galpha) *galpha = Image(v.alpha.width, v.alpha.height, 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = v.alpha.data[i] - target.data[i];
    sum += std::abs(r);
    if (galpha) galpha->data[i] = sgn(r) * inv;
  }
  return sum * inv;
}

inline void accumulate_render_grads(const Scene& scene, const RenderedView& view, const std::vector<Vec3>& points,
                                    const Image& dI, const Image& dA, double scale, SceneGradients& out) {
  SplatGradients g = splat_backward(view, scene.gaussians, points, dI, dA);
  if (out.with_coarse) {
    for (auto& p : g.points) p *= scale;
    backprop_points(scene.coarse, view.t, g.points, out.coarse.basis, out.coarse.net);
    for (auto& p : g.points) p /= scale;
  }
  out.gaussians.add(g, scale);
}

}  // namespace detail

inline Image blurred_mask(const BinaryMask& m, double sigma) { return gaussian_blur(m.to_image(), sigma); }

/// Mean over windows of the per-pixel L1 between rendered log-intensity
/// change and accumulated events.
inline double event_loss(const Scene& scene, const CameraTrack& track, const EventStream& stream,
                         const std::vector<WindowSample>& windows, SceneGradients* grads = nullptr) {
  if (windows.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(windows.size());
  double total = 0.0;
  for (const WindowSample& w : windows) {
    const Camera ci = track.camera_at(w.t_i);
    const Camera cj = track.camera_at(w.t_j);
    const auto Pi = scene.coarse.points_at(w.t_i);
    const auto Pj = scene.coarse.points_at(w.t_j);
    const RenderedView vi = splat(scene.gaussians, Pi, ci, scene.render, w.t_i);
    const RenderedView vj = splat(scene.gaussians, Pj, cj, scene.render, w.t_j);
    const AccumulatedDifferenceMap E = accumulate(stream, w.t_i, w.t_j);
    Image gi, gj;
    total += detail::event_term(vi, vj, E, grads ? &gi : nullptr, grads ? &gj : nullptr);
    if (grads) {
      detail::accumulate_render_grads(scene, vi, Pi, gi, Image(), scale, *grads);
      detail::accumulate_render_grads(scene, vj, Pj, gj, Image(), scale, *grads);
    }
  }
  return total * scale;
}

inline double event_loss(const Scene& scene, const CameraTrack& track, const EventStream& stream, int n_samples,
                         Rng& rng, double l_max = kDefaultLMax) {
  return event_loss(scene, track, stream, draw_windows(track, n_samples, l_max, stream_stop(stream, track), rng));
}

/// Sum over views of the per-pixel-normalized L1 between the rendered alpha
/// and the blurred mask. Views whose mask is missing (empty) are skipped.
inline double silhouette_loss(const Scene& scene, const CameraTrack& track, const std::vector<BinaryMask>& masks,
                              double blur_sigma = 2.0, int* skipped = nullptr) {
  double total = 0.0;
  int skip = 0;
  for (std::size_t i = 0; i < track.size(); ++i) {
    if (i >= masks.size() || masks[i].values.empty()) {
      ++skip;
      continue;
    }
    const RenderedView v = render_scene(scene, track.camera(i), track.time(i));
    total += detail::silhouette_term(v, blurred_mask(masks[i], blur_sigma), nullptr);
  }
  if (skipped) *skipped = skip;
  return total;
}

struct LossWeights {
  double event = 1.0;
  double silhouette = 1.0;
};

struct LossBreakdown {
  double event = 0.0;
  double silhouette = 0.0;
  double total = 0.0;
};

/// lambda_e * event + lambda_s * silhouette on one batch. The silhouette
/// part is the mean over the batch views (whose masks are `targets`,
/// already blurred); views without a target are left out of it.
inline LossBreakdown total_loss(const Scene& scene, const CameraTrack& track, const EventStream& stream,
                                const std::vector<Image>& targets, const std::vector<WindowSample>& windows,
                                const LossWeights& weights, SceneGradients* grads = nullptr) {
  LossBreakdown out;
  if (windows.empty()) return out;
  int with_mask = 0;
  for (const auto& w : windows) with_mask += w.view < targets.size() && !targets[w.view].data.empty();
  const double es = weights.event / static_cast<double>(windows.size());
  const double ss = with_mask > 0 ? weights.silhouette / with_mask : 0.0;
  const bool need_event = weights.event != 0.0 || !grads;
  const bool sil_grad = grads && weights.silhouette != 0.0;
  double ev = 0.0, sil = 0.0;
  for (const WindowSample& w : windows) {
    const Camera ci = track.camera_at(w.t_i);
    const auto Pi = scene.coarse.points_at(w.t_i);
    const RenderedView vi = splat(scene.gaussians, Pi, ci, scene.render, w.t_i);
    Image gi, gai;
    const bool has_mask = w.view < targets.size() && !targets[w.view].data.empty();
    if (has_mask) {
      Image ga;
      sil += detail::silhouette_term(vi, targets[w.view], sil_grad ? &ga : nullptr);
      if (sil_grad) {
        for (auto& v : ga.data) v *= ss;
        gai = std::move(ga);
      }
    }
    if (need_event) {
      const Camera cj = track.camera_at(w.t_j);
      const auto Pj = scene.coarse.points_at(w.t_j);
      const RenderedView vj = splat(scene.gaussians, Pj, cj, scene.render, w.t_j);
      const AccumulatedDifferenceMap E = accumulate(stream, w.t_i, w.t_j);
      Image gj;
      ev += detail::event_term(vi, vj, E, grads ? &gi : nullptr, grads ? &gj : nullptr);
      if (grads) {
        for (auto& v : gi.data) v *= es;
        detail::accumulate_render_grads(scene, vj, Pj, gj, Image(), es, *grads);
      }
    }
    if (grads && (!gi.data.empty() || !gai.data.empty()))
      detail::accumulate_render_grads(scene, vi, Pi, gi, gai, 1.0, *grads);
  }
  out.event = ev / static_cast<double>(windows.size());
  out.silhouette = with_mask > 0 ? sil / with_mask : 0.0;
  out.total = weights.event * out.event + weights.silhouette * out.silhouette;
  return out;
}

}  // namespace ev4dgs
