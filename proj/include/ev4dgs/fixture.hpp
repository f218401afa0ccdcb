#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "ev4dgs/binary_mask.hpp"
#include "ev4dgs/camera.hpp"
#include "ev4dgs/coarse.hpp"
#include "ev4dgs/config.hpp"
#include "ev4dgs/core/rng.hpp"
#include "ev4dgs/events.hpp"
#include "ev4dgs/gaussians.hpp"
#include "ev4dgs/io/image_io.hpp"
#include "ev4dgs/rasterizer.hpp"
#include "ev4dgs/simulator.hpp"
#include "ev4dgs/trainer.hpp"

namespace ev4dgs {

struct FixtureOptions {
  int size = 96;
  double focal = 100.0;
  double orbit_radius = 3.0;
  double elevation_deg = 20.0;
  int views = 120;
  int heldout = 20;
  int points = 300;
  double fps = 4000.0;
  double sigma = 0.2;
  double background = 0.1;
  double tail = 0.025;   // simulated time past the last training pose
  double warmup = 0.05;  // simulated time before t = 0
  double texture_light = 0.75;
  double texture_dark = 0.3;
  double texture_ripple = 0.08;
  int texture_sectors = 8;
  int texture_bands = 4;
};

/// Camera on a circular orbit, one revolution per second, facing the origin.
inline Pose orbit_pose(const FixtureOptions& o, double t) {
  const double phi = 2.0 * std::numbers::pi * t;
  const double el = o.elevation_deg * std::numbers::pi / 180.0;
  const Vec3 eye(o.orbit_radius * std::cos(el) * std::cos(phi), o.orbit_radius * std::cos(el) * std::sin(phi),
                 o.orbit_radius * std::sin(el));
  return look_at(eye, Vec3::Zero());
}

/// Synthetic deforming object seen by an orbiting camera, with everything
/// needed to train and score a reconstruction.
struct ToyFixture {
  FixtureOptions options;
  DeformationBasis basis;  // two ground-truth bases
  GaussianSet gaussians;   // one Gaussian per ground-truth point (k = 1)
  RenderOptions render;
  CameraTrack track;
  CameraTrack heldout;
  EventStream events;
  std::vector<BinaryMask> masks;        // ground truth, one per training pose
  std::vector<Image> heldout_images;    // linear intensity
  TrainConfig config;                   // fixture-sized training setup

  /// Blend weight of the second basis.
  static double blend_weight(double t) { return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t); }

  std::vector<Vec3> points_at(double t) const {
    const double a = blend_weight(t);
    const double w[2] = {1.0 - a, a};
    return blend(basis, w);
  }

  RenderedView render_at(const Camera& cam, double t) const { return splat(gaussians, points_at(t), cam, render, t); }

  /// Display-encoded frame on the continuous orbit; this is what the event
  /// simulator sees, so event log changes match the log-gamma of renders.
  Image display_frame(double t) const;
};

inline Image ToyFixture::display_frame(double t) const {
  Image img = render_at(Camera{track.intrinsics(), orbit_pose(options, t)}, t).intensity;
  for (auto& v : img.data) v = std::pow(std::max(v, 0.0), 1.0 / io::kDisplayGamma);
  return img;
}

/// Checker of longitude sectors and latitude bands on the unit sphere, with a
/// mild smooth modulation.
inline double toy_texture(const Vec3& u, double phase, const FixtureOptions& o = {}) {
  const double lon = std::atan2(u.y(), u.x()) + phase;
  const int sector = static_cast<int>(std::floor(lon / (2.0 * std::numbers::pi) * o.texture_sectors));
  const int band = static_cast<int>(std::floor((u.z() + 1.0) * 0.5 * o.texture_bands));
  const double base = ((sector + band) % 2 == 0) ? o.texture_light : o.texture_dark;
  return std::clamp(base + o.texture_ripple * std::sin(3.0 * u.z() + lon), 0.02, 0.98);
}

inline ToyFixture make_toy_fixture(std::uint64_t seed, const FixtureOptions& opt = {}) {
  ToyFixture fx;
  fx.options = opt;
  Rng rng(seed);
  const double phase = 2.0 * std::numbers::pi * rng.uniform();

  // Ellipsoid shell; the second basis stretches it along x and bends it.
  fx.basis = DeformationBasis(2, opt.points);
  std::vector<Vec3> unit;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < opt.points; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / opt.points;
    const double r = std::sqrt(1.0 - z * z);
    const double th = golden * i + 0.05 * rng.normal();
    const Vec3 u(r * std::cos(th), r * std::sin(th), z);
    const Vec3 b1(0.8 * u.x(), 0.6 * u.y(), 0.6 * u.z());
    unit.push_back(u);
    const Vec3 b2(1.05 * b1.x(), 0.9 * b1.y(), b1.z() + 0.35 * (b1.x() * b1.x() - 0.2));
    fx.basis.set_point(0, i, b1);
    fx.basis.set_point(1, i, b2);
  }
  fx.gaussians.k = 1;
  const double spacing = std::sqrt(4.0 * std::numbers::pi * 0.65 * 0.65 / opt.points);
  for (int i = 0; i < opt.points; ++i) {
    AnchoredGaussian g;
    g.neighbors = {i};
    g.weights = {1.0};
    const Vec3 p = fx.basis.point(0, i);
    const Vec3 n = Vec3(p.x() / 0.64, p.y() / 0.36, p.z() / 0.36).normalized();
    g.rotation = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), n);
    g.scale = Vec3(0.75 * spacing, 0.75 * spacing, 0.3 * spacing);
    g.opacity = 0.95;
    g.color = Vec3::Constant(toy_texture(unit[i], phase, opt));
    fx.gaussians.push_back(g);
  }
  fx.render.channels = 1;
  fx.render.background = {opt.background, opt.background, opt.background};

  Intrinsics K{opt.focal, opt.focal, 0.5 * (opt.size - 1), 0.5 * (opt.size - 1), opt.size, opt.size};
  std::vector<TimedPose> poses, held;
  for (int i = 0; i < opt.views; ++i) {
    const double t = static_cast<double>(i) / opt.views;
    poses.push_back({t, orbit_pose(opt, t)});
  }
  const int stride = std::max(1, opt.views / std::max(1, opt.heldout));
  for (int k = 0; k < opt.heldout; ++k) {
    const double t = (stride * k + 0.5 * stride + 0.5) / opt.views;
    held.push_back({t, orbit_pose(opt, t)});
  }
  fx.track = CameraTrack(K, poses);
  fx.heldout = CameraTrack(K, held);

  for (std::size_t i = 0; i < fx.track.size(); ++i) {
    BinaryMask m = BinaryMask::from_image(fx.render_at(fx.track.camera(i), fx.track.time(i)).alpha, 0.5);
    m.t = fx.track.time(i);
    m.view = static_cast<int>(i);
    fx.masks.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < fx.heldout.size(); ++i)
    fx.heldout_images.push_back(fx.render_at(fx.heldout.camera(i), fx.heldout.time(i)).intensity);

  // The simulator starts `warmup` seconds early (on a shifted clock) so the
  // reference levels are settled by t = 0; earlier events are dropped.
  const double t_end = fx.track.t_end() + opt.tail;
  const long first = -static_cast<long>(std::ceil(opt.warmup * opt.fps));
  const long last = static_cast<long>(std::ceil(t_end * opt.fps));
  const double shift = -static_cast<double>(first) / opt.fps;
  EventSimulator sim(fx.display_frame(first / opt.fps), 0.0, opt.sigma, false);
  for (long f = first + 1; f <= last; ++f) {
    const double t = static_cast<double>(f) / opt.fps;
    sim.feed(fx.display_frame(t), t + shift);
  }
  const EventStream shifted = sim.finish();
  std::vector<Event> kept;
  for (const Event& e : shifted.events())
    if (e.t - shift >= 0.0) {
      Event c = e;
      c.t = std::max(0.0, e.t - shift);
      kept.push_back(c);
    }
  fx.events = EventStream(opt.size, opt.size, opt.sigma, false, std::move(kept));

  TrainConfig& c = fx.config;
  c.seed = seed;
  c.coarse.num_points = 1000;
  c.num_gaussians = 1500;
  c.masks.half_window = 0.03;
  c.masks.elasticity = 0.06;
  c.masks.edge_quantile = 0.5;
  c.masks.iters = 600;
  c.background = fx.render.background;
  return fx;
}

/// Writes the fixture in the external formats: events, camera tracks, ground
/// truth masks and held-out renders, and a run config.
inline void write_fixture(const ToyFixture& fx, const std::string& dir, bool write_frames = false) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "masks");
  fs::create_directories(fs::path(dir) / "heldout");
  write_events((fs::path(dir) / "events.ev4d").string(), fx.events);
  fx.track.save((fs::path(dir) / "cameras.json").string());
  fx.heldout.save((fs::path(dir) / "heldout.json").string());
  char name[64];
  for (std::size_t i = 0; i < fx.masks.size(); ++i) {
    std::snprintf(name, sizeof name, "mask_%04zu.png", i);
    write_mask_png((fs::path(dir) / "masks" / name).string(), fx.masks[i]);
  }
  for (std::size_t i = 0; i < fx.heldout_images.size(); ++i) {
    std::snprintf(name, sizeof name, "view_%04zu.png", i);
    io::write_png_gamma((fs::path(dir) / "heldout" / name).string(), fx.heldout_images[i]);
    std::snprintf(name, sizeof name, "view_%04zu.pfm", i);
    io::write_pfm((fs::path(dir) / "heldout" / name).string(), fx.heldout_images[i]);
  }
  if (write_frames) {
    fs::create_directories(fs::path(dir) / "frames");
    const double t_end = fx.track.t_end() + fx.options.tail;
    const long frames = static_cast<long>(std::ceil(t_end * fx.options.fps));
    for (long f = 0; f <= frames; ++f) {
      const double t = static_cast<double>(f) / fx.options.fps;
      std::snprintf(name, sizeof name, "frame_%06ld.pfm", f);
      io::write_pfm((fs::path(dir) / "frames" / name).string(), fx.display_frame(t));
    }
  }
  std::ofstream cfg(fs::path(dir) / "run.cfg");
  cfg << "# toy fixture training setup\n" << fx.config.to_config().to_string();
}

}  // namespace ev4dgs
