#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ev4dgs/binary_mask.hpp"
#include "ev4dgs/camera.hpp"
#include "ev4dgs/coarse.hpp"
#include "ev4dgs/config.hpp"
#include "ev4dgs/core/error.hpp"
#include "ev4dgs/core/rng.hpp"
#include "ev4dgs/events.hpp"
#include "ev4dgs/gaussians.hpp"
#include "ev4dgs/losses.hpp"
#include "ev4dgs/masks.hpp"
#include "ev4dgs/optim.hpp"
#include "ev4dgs/scene.hpp"

namespace ev4dgs {

struct TrainConfig {
  std::uint64_t seed = 1;

  // coarse model and stage
  CoarseInitOptions coarse;
  int coarse_iters = 5000;
  int coarse_batch_views = 8;
  int mask_samples = 512;
  double lr_basis = 1e-3;
  double lr_net = 5e-4;

  // fine stage
  int num_gaussians = 3000;
  SeedOptions seeding;
  int fine_iters = 2000;
  int batch_views = 4;
  double l_max = kDefaultLMax;
  double blur_sigma = 2.0;
  LossWeights weights;
  double lr_weights = 2e-3;
  double lr_rotation = 1e-3;
  double lr_scale = 5e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;
  bool finetune_coarse = true;
  int unfreeze_step = 300;
  double coarse_lr_scale = 0.1;
  int prune_every = 1000;
  double prune_opacity = 0.01;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  ScheduleKind schedule = ScheduleKind::Cosine;

  MaskOptions masks;

  static TrainConfig from(const Config& c) {
    TrainConfig t;
    t.seed = static_cast<std::uint64_t>(c.get("seed", static_cast<long>(t.seed)));
    t.coarse.num_bases = c.get("num_bases", t.coarse.num_bases);
    t.coarse.num_points = c.get("num_points", t.coarse.num_points);
    t.coarse.pe_freqs = c.get("pe_freqs", t.coarse.pe_freqs);
    t.coarse.hidden_width = c.get("hidden_width", t.coarse.hidden_width);
    t.coarse.hidden_layers = c.get("hidden_layers", t.coarse.hidden_layers);
    t.coarse.hull_views = c.get("hull_views", t.coarse.hull_views);
    t.coarse.hull_resolution = c.get("hull_resolution", t.coarse.hull_resolution);
    t.coarse.basis_noise = c.get("basis_noise", t.coarse.basis_noise);
    t.coarse_iters = c.get("coarse_iters", t.coarse_iters);
    t.coarse_batch_views = c.get("coarse_batch_views", t.coarse_batch_views);
    t.mask_samples = c.get("mask_samples", t.mask_samples);
    t.lr_basis = c.get("lr_basis", t.lr_basis);
    t.lr_net = c.get("lr_net", t.lr_net);

    t.num_gaussians = c.get("num_gaussians", t.num_gaussians);
    t.seeding.neighbors = c.get("neighbors", t.seeding.neighbors);
    t.seeding.scale_factor = c.get("seed_scale_factor", t.seeding.scale_factor);
    t.seeding.opacity = c.get("seed_opacity", t.seeding.opacity);
    t.seeding.color = c.get("seed_color", t.seeding.color);
    t.fine_iters = c.get("fine_iters", t.fine_iters);
    t.batch_views = c.get("batch_views", t.batch_views);
    t.l_max = c.get("l_max", t.l_max);
    t.blur_sigma = c.get("blur_sigma", t.blur_sigma);
    t.weights.event = c.get("lambda_event", t.weights.event);
    t.weights.silhouette = c.get("lambda_sil", t.weights.silhouette);
    t.lr_weights = c.get("lr_weights", t.lr_weights);
    t.lr_rotation = c.get("lr_rotation", t.lr_rotation);
    t.lr_scale = c.get("lr_scale", t.lr_scale);
    t.lr_opacity = c.get("lr_opacity", t.lr_opacity);
    t.lr_color = c.get("lr_color", t.lr_color);
    t.finetune_coarse = c.get("finetune_coarse", t.finetune_coarse);
    t.unfreeze_step = c.get("unfreeze_step", t.unfreeze_step);
    t.coarse_lr_scale = c.get("coarse_lr_scale", t.coarse_lr_scale);
    t.prune_every = c.get("prune_every", t.prune_every);
    t.prune_opacity = c.get("prune_opacity", t.prune_opacity);
    const auto bg = c.get_list("background", {t.background[0], t.background[1], t.background[2]});
    if (bg.size() == 1) t.background = {bg[0], bg[0], bg[0]};
    else if (bg.size() == 3) t.background = {bg[0], bg[1], bg[2]};
    else throw DataError("background needs 1 or 3 values");
    const std::string sched = c.get("schedule", "cosine");
    if (sched == "cosine") t.schedule = ScheduleKind::Cosine;
    else if (sched == "constant") t.schedule = ScheduleKind::Constant;
    else throw DataError("schedule must be cosine or constant");

    const std::string method = c.get("mask_method", "snake");
    if (method == "snake") t.masks.method = MaskMethod::Snake;
    else if (method == "threshold") t.masks.method = MaskMethod::Threshold;
    else throw DataError("mask_method must be snake or threshold");
    t.masks.half_window = c.get("mask_half_window", t.masks.half_window);
    t.masks.density_blur = c.get("mask_density_blur", t.masks.density_blur);
    t.masks.elasticity = c.get("snake_elasticity", t.masks.elasticity);
    t.masks.rigidity = c.get("snake_rigidity", t.masks.rigidity);
    t.masks.external = c.get("snake_external", t.masks.external);
    t.masks.step = c.get("snake_step", t.masks.step);
    t.masks.iters = c.get("snake_iters", t.masks.iters);
    t.masks.vertices = c.get("snake_vertices", t.masks.vertices);
    t.masks.edge_quantile = c.get("snake_edge_quantile", t.masks.edge_quantile);
    t.masks.threshold_fallback = c.get("mask_threshold_fallback", t.masks.threshold_fallback);
    t.masks.closing_radius = c.get("mask_closing_radius", t.masks.closing_radius);
    t.validate();
    return t;
  }

  Config to_config() const {
    Config c;
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    auto list = [&](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
      return s;
    };
    c.set("seed", std::to_string(seed));
    c.set("num_bases", std::to_string(coarse.num_bases));
    c.set("num_points", std::to_string(coarse.num_points));
    c.set("pe_freqs", std::to_string(coarse.pe_freqs));
    c.set("hidden_width", std::to_string(coarse.hidden_width));
    c.set("hidden_layers", std::to_string(coarse.hidden_layers));
    c.set("hull_views", std::to_string(coarse.hull_views));
    c.set("hull_resolution", std::to_string(coarse.hull_resolution));
    c.set("basis_noise", num(coarse.basis_noise));
    c.set("coarse_iters", std::to_string(coarse_iters));
    c.set("coarse_batch_views", std::to_string(coarse_batch_views));
    c.set("mask_samples", std::to_string(mask_samples));
    c.set("lr_basis", num(lr_basis));
    c.set("lr_net", num(lr_net));
    c.set("num_gaussians", std::to_string(num_gaussians));
    c.set("neighbors", std::to_string(seeding.neighbors));
    c.set("seed_scale_factor", num(seeding.scale_factor));
    c.set("seed_opacity", num(seeding.opacity));
    c.set("seed_color", num(seeding.color));
    c.set("fine_iters", std::to_string(fine_iters));
    c.set("batch_views", std::to_string(batch_views));
    c.set("l_max", num(l_max));
    c.set("blur_sigma", num(blur_sigma));
    c.set("lambda_event", num(weights.event));
    c.set("lambda_sil", num(weights.silhouette));
    c.set("lr_weights", num(lr_weights));
    c.set("lr_rotation", num(lr_rotation));
    c.set("lr_scale", num(lr_scale));
    c.set("lr_opacity", num(lr_opacity));
    c.set("lr_color", num(lr_color));
    c.set("finetune_coarse", finetune_coarse ? "true" : "false");
    c.set("unfreeze_step", std::to_string(unfreeze_step));
    c.set("coarse_lr_scale", num(coarse_lr_scale));
    c.set("prune_every", std::to_string(prune_every));
    c.set("prune_opacity", num(prune_opacity));
    c.set("background", list({background[0], background[1], background[2]}));
    c.set("schedule", schedule == ScheduleKind::Cosine ? "cosine" : "constant");
    c.set("mask_method", masks.method == MaskMethod::Snake ? "snake" : "threshold");
    c.set("mask_half_window", num(masks.half_window));
    c.set("mask_density_blur", num(masks.density_blur));
    c.set("snake_elasticity", num(masks.elasticity));
    c.set("snake_rigidity", num(masks.rigidity));
    c.set("snake_external", num(masks.external));
    c.set("snake_step", num(masks.step));
    c.set("snake_iters", std::to_string(masks.iters));
    c.set("snake_vertices", std::to_string(masks.vertices));
    c.set("snake_edge_quantile", num(masks.edge_quantile));
    c.set("mask_threshold_fallback", masks.threshold_fallback ? "true" : "false");
    c.set("mask_closing_radius", std::to_string(masks.closing_radius));
    return c;
  }

  void validate() const {
    auto need = [](bool ok, const char* what) {
      if (!ok) throw DataError(std::string("invalid config: ") + what);
    };
    need(coarse.num_bases >= 1 && coarse.num_points >= 4, "num_bases >= 1 and num_points >= 4");
    need(coarse_iters >= 0 && fine_iters >= 0, "iteration counts must be non-negative");
    need(coarse_batch_views >= 1 && batch_views >= 1, "batch sizes must be positive");
    need(mask_samples >= 1, "mask_samples must be positive");
    need(num_gaussians >= 1, "num_gaussians must be positive");
    need(seeding.neighbors >= 1 && seeding.neighbors <= 8, "neighbors must be in [1, 8]");
    need(l_max > 0.0, "l_max must be positive");
    need(blur_sigma >= 0.0, "blur_sigma must be non-negative");
    need(prune_every >= 0, "prune_every must be non-negative");
    need(masks.half_window > 0.0 && masks.iters >= 1 && masks.vertices >= 8, "mask options");
    need(masks.edge_quantile > 0.0 && masks.edge_quantile <= 1.0, "snake_edge_quantile must be in (0, 1]");
  }
};

struct CoarseTrainResult {
  CoarsePointModel model;
  std::vector<double> history;  // mean per-view mask loss of each iteration's batch
  double initial_loss = 0.0;    // over all views, before training
  double final_loss = 0.0;      // over all views, after training
  bool diverged = false;
};

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

inline std::vector<MaskView> make_mask_views(const CameraTrack& track, const std::vector<BinaryMask>& masks,
                                             int samples, Rng& rng) {
  std::vector<MaskView> views(track.size());
  for (std::size_t i = 0; i < track.size(); ++i) {
    views[i].camera = track.camera(i);
    views[i].t = track.time(i);
    if (i < masks.size()) views[i].samples = sample_mask_points(masks[i], samples, rng);
  }
  return views;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Fits the deformation bases and the weight network to the masks.
inline CoarseTrainResult train_coarse(const TrainConfig& cfg, const std::vector<BinaryMask>& masks,
                                      const CameraTrack& track, Rng& rng, const ProgressFn& progress = {}) {
  if (masks.size() != track.size()) throw DataError("train_coarse: need one mask per camera pose");
  CoarseTrainResult out;
  out.model = init_coarse_model(cfg.coarse, track, masks, rng);
  CoarsePointModel& model = out.model;

  std::vector<MaskView> views = detail::make_mask_views(track, masks, cfg.mask_samples, rng);
  out.initial_loss = mask_loss(model, views) / static_cast<double>(views.size());

  AdamState basis_state(model.basis.coords.size(), cfg.lr_basis);
  AdamState net_state(model.net.mlp.params.size(), cfg.lr_net);
  const Schedule basis_sched{cfg.lr_basis, std::max(1, cfg.coarse_iters), cfg.schedule};
  const Schedule net_sched{cfg.lr_net, std::max(1, cfg.coarse_iters), cfg.schedule};
  const int batch = std::min<int>(cfg.coarse_batch_views, static_cast<int>(views.size()));
  const int epoch = std::max<int>(1, static_cast<int>(views.size()) / batch);

  CoarsePointModel last_good = model;
  for (int it = 0; it < cfg.coarse_iters; ++it) {
    if (it > 0 && it % epoch == 0) views = detail::make_mask_views(track, masks, cfg.mask_samples, rng);
    std::vector<MaskView> chosen;
    chosen.reserve(batch);
    for (int b = 0; b < batch; ++b) chosen.push_back(views[rng.below(views.size())]);
    CoarseGradients g(model);
    const double loss = mask_loss(model, chosen, &g) / batch;
    if (!std::isfinite(loss) || !detail::all_finite(g.basis) || !detail::all_finite(g.net)) {
      out.model = last_good;
      out.diverged = true;
      if (progress) progress("coarse: non-finite loss at iteration " + std::to_string(it));
      return out;
    }
    out.history.push_back(loss);
    adam_step(basis_state, model.basis.coords, g.basis, lr_at(basis_sched, it));
    adam_step(net_state, model.net.mlp.params, g.net, lr_at(net_sched, it));
    if (!detail::all_finite(model.basis.coords) || !detail::all_finite(model.net.mlp.params)) {
      out.model = last_good;
      out.diverged = true;
      return out;
    }
    last_good = model;
    if (progress && (it % 500 == 0 || it + 1 == cfg.coarse_iters))
      progress("coarse " + std::to_string(it) + " loss " + std::to_string(loss));
  }
  out.final_loss = mask_loss(model, views) / static_cast<double>(views.size());
  return out;
}

struct FineTrainResult {
  Scene scene;
  std::vector<LossBreakdown> history;
  bool diverged = false;
  int pruned = 0;
  long skipped_steps = 0;
};

/// Seeds Gaussians on the coarse model and optimizes the joint objective.
/// Coarse parameters join the optimization from `unfreeze_step` on when
/// fine-tuning is enabled.
inline FineTrainResult train_fine(const TrainConfig& cfg, const EventStream& stream,
                                  const std::vector<BinaryMask>& masks, const CameraTrack& track,
                                  const CoarsePointModel& coarse, Rng& rng, const ProgressFn& progress = {}) {
  if (masks.size() != track.size()) throw DataError("train_fine: need one mask per camera pose");
  if (stream.width() != track.intrinsics().width || stream.height() != track.intrinsics().height)
    throw DataError("train_fine: event sensor size differs from camera resolution");
  FineTrainResult out;
  Scene& scene = out.scene;
  scene.coarse = coarse;
  scene.gaussians = seed_gaussians(coarse, cfg.num_gaussians, rng, cfg.seeding);
  scene.render.channels = stream.channels();
  scene.render.background = cfg.background;

  std::vector<Image> targets(masks.size());
  parallel_for(masks.size(), [&](std::size_t i) {
    if (!masks[i].values.empty()) targets[i] = blurred_mask(masks[i], cfg.blur_sigma);
  });

  GaussianSet& G = scene.gaussians;
  AdamState s_w(G.raw_weights.size(), cfg.lr_weights), s_r(G.rotation.size(), cfg.lr_rotation),
      s_s(G.log_scale.size(), cfg.lr_scale), s_o(G.raw_opacity.size(), cfg.lr_opacity),
      s_c(G.raw_color.size(), cfg.lr_color);
  AdamState s_basis(scene.coarse.basis.coords.size(), cfg.lr_basis * cfg.coarse_lr_scale);
  AdamState s_net(scene.coarse.net.mlp.params.size(), cfg.lr_net * cfg.coarse_lr_scale);
  const long total = std::max(1, cfg.fine_iters);
  auto rate = [&](double base, int it) { return lr_at(Schedule{base, total, cfg.schedule}, it); };
  const double stop = stream_stop(stream, track);

  Scene last_good = scene;
  for (int it = 0; it < cfg.fine_iters; ++it) {
    const bool coarse_on = cfg.finetune_coarse && cfg.unfreeze_step >= 0 && it >= cfg.unfreeze_step;
    const auto windows = draw_windows(track, cfg.batch_views, cfg.l_max, stop, rng);
    SceneGradients g(scene, coarse_on);
    const LossBreakdown loss = total_loss(scene, track, stream, targets, windows, cfg.weights, &g);
    if (!std::isfinite(loss.total)) {
      out.scene = last_good;
      out.diverged = true;
      if (progress) progress("fine: non-finite loss at iteration " + std::to_string(it));
      return out;
    }
    out.history.push_back(loss);
    adam_step(s_w, G.raw_weights, g.gaussians.raw_weights, rate(cfg.lr_weights, it));
    adam_step(s_r, G.rotation, g.gaussians.rotation, rate(cfg.lr_rotation, it));
    adam_step(s_s, G.log_scale, g.gaussians.log_scale, rate(cfg.lr_scale, it));
    adam_step(s_o, G.raw_opacity, g.gaussians.raw_opacity, rate(cfg.lr_opacity, it));
    adam_step(s_c, G.raw_color, g.gaussians.raw_color, rate(cfg.lr_color, it));
    if (coarse_on) {
      adam_step(s_basis, scene.coarse.basis.coords, g.coarse.basis, rate(cfg.lr_basis * cfg.coarse_lr_scale, it));
      adam_step(s_net, scene.coarse.net.mlp.params, g.coarse.net, rate(cfg.lr_net * cfg.coarse_lr_scale, it));
    }
    if (cfg.prune_every > 0 && (it + 1) % cfg.prune_every == 0 && it + 1 < cfg.fine_iters) {
      const std::size_t before = G.size();
      const auto kept = G.retain([&](std::size_t i) { return G.opacity(i) >= cfg.prune_opacity; });
      if (kept.empty()) throw DivergenceError("pruning removed every Gaussian");
      s_w.retain(kept, G.k);
      s_r.retain(kept, 4);
      s_s.retain(kept, 3);
      s_o.retain(kept, 1);
      s_c.retain(kept, 3);
      out.pruned += static_cast<int>(before - G.size());
    }
    last_good = scene;
    if (progress && (it % 100 == 0 || it + 1 == cfg.fine_iters))
      progress("fine " + std::to_string(it) + " event " + std::to_string(loss.event) + " sil " +
               std::to_string(loss.silhouette) + " gaussians " + std::to_string(G.size()));
  }
  out.skipped_steps = s_w.skipped + s_r.skipped + s_s.skipped + s_o.skipped + s_c.skipped + s_basis.skipped +
                      s_net.skipped;
  return out;
}

}  // namespace ev4dgs
