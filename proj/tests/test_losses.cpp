#include <gtest/gtest.h>

#include <cmath>

#include "ev4dgs/gradcheck.hpp"
#include "ev4dgs/losses.hpp"
#include "test_support.hpp"

namespace ev4dgs {
namespace {

const ToyFixture& fixture() { return test::small_fixture(); }

Scene ground_truth_scene(const ToyFixture& fx) {
  Scene s;
  s.coarse = test::exact_coarse_model(fx);
  s.gaussians = fx.gaussians;
  s.render = fx.render;
  return s;
}

std::vector<Image> blurred_targets(const std::vector<BinaryMask>& masks, double sigma = 2.0) {
  std::vector<Image> out;
  for (const auto& m : masks) out.push_back(blurred_mask(m, sigma));
  return out;
}

// Two static coarse points on the x axis, seen head-on from z = -3.
struct MiniScene {
  Scene scene;
  CameraTrack track;
};

MiniScene mini_scene(double far_x) {
  MiniScene m;
  m.scene.coarse.basis = DeformationBasis(1, 2);
  m.scene.coarse.basis.set_point(0, 0, Vec3(0, 0, 0));
  m.scene.coarse.basis.set_point(0, 1, Vec3(far_x, 0, 0));
  m.scene.coarse.net = TimeWeightNet(2, 0, 0, 1);
  std::fill(m.scene.coarse.net.mlp.params.begin(), m.scene.coarse.net.mlp.params.end(), 0.0);
  m.scene.coarse.net.mlp.params[5] = 1.0;
  m.scene.gaussians.k = 1;
  const Intrinsics k{60.0, 60.0, 31.5, 31.5, 64, 64};
  Pose p;
  p.t = Vec3(0, 0, 3);
  m.track = CameraTrack(k, {{0.0, p}, {0.5, p}, {1.0, p}});
  return m;
}

AnchoredGaussian blob(int anchor, double scale) {
  AnchoredGaussian g;
  g.neighbors = {anchor};
  g.weights = {1.0};
  g.scale = Vec3::Constant(scale);
  g.opacity = 0.8;
  g.color = Vec3::Constant(0.7);
  return g;
}

TEST(EventLoss, StaticSceneWithoutEventsIsZero) {
  MiniScene m = mini_scene(0.5);
  m.scene.gaussians.push_back(blob(0, 0.1));
  m.scene.gaussians.push_back(blob(1, 0.05));
  const EventStream none(64, 64, 0.2, false, {});
  Rng rng(1);
  EXPECT_EQ(event_loss(m.scene, m.track, none, 8, rng), 0.0);
}

TEST(EventLoss, GroundTruthSceneStaysWithinSigma) {
  const ToyFixture& fx = fixture();
  Rng rng(2);
  const double l = event_loss(ground_truth_scene(fx), fx.track, fx.events, 24, rng);
  EXPECT_LT(l, fx.events.sigma());
}

TEST(EventLoss, RespondsToASingleGaussianColor) {
  const ToyFixture& fx = fixture();
  const Scene gt = ground_truth_scene(fx);
  Rng rng(3);
  const auto windows = draw_windows(fx.track, 16, kDefaultLMax, stream_stop(fx.events, fx.track), rng);
  const double base = event_loss(gt, fx.track, fx.events, windows);
  for (std::size_t i = 0; i < gt.gaussians.size(); i += gt.gaussians.size() / 5) {
    Scene s = gt;
    s.gaussians.raw_color[3 * i] += 3.0;
    EXPECT_NE(event_loss(s, fx.track, fx.events, windows), base) << "Gaussian " << i;
  }
}

TEST(EventLoss, InvertedTextureRaisesTheLoss) {
  const ToyFixture& fx = fixture();
  const Scene gt = ground_truth_scene(fx);
  Rng rng(3);
  const auto windows = draw_windows(fx.track, 16, kDefaultLMax, stream_stop(fx.events, fx.track), rng);
  Scene inv = gt;
  for (double& c : inv.gaussians.raw_color) c = -c;
  EXPECT_GT(event_loss(inv, fx.track, fx.events, windows), event_loss(gt, fx.track, fx.events, windows));
}

TEST(EventLoss, EventFreePixelsContribute) {
  const ToyFixture& fx = fixture();
  const Scene gt = ground_truth_scene(fx);
  const double ti = fx.track.time(6), tj = ti + 0.015;
  const RenderedView vi = render_scene(gt, fx.track.camera_at(ti), ti);
  RenderedView vj = render_scene(gt, fx.track.camera_at(tj), tj);
  const AccumulatedDifferenceMap E = accumulate(fx.events, ti, tj);
  const double before = detail::event_term(vi, vj, E, nullptr, nullptr);
  std::size_t changed = 0;
  for (std::size_t p = 0; p < E.counts.size(); ++p)
    if (E.counts[p] == 0 && vj.intensity.data[p] != vi.intensity.data[p]) {
      vj.intensity.data[p] = vi.intensity.data[p];
      ++changed;
    }
  ASSERT_GT(changed, 0u);
  EXPECT_NE(detail::event_term(vi, vj, E, nullptr, nullptr), before);
}

TEST(EventLoss, SwappingWindowEndsIsSymmetric) {
  const ToyFixture& fx = fixture();
  const Scene gt = ground_truth_scene(fx);
  const double ti = fx.track.time(9), tj = ti + 0.02;
  const RenderedView vi = render_scene(gt, fx.track.camera_at(ti), ti);
  const RenderedView vj = render_scene(gt, fx.track.camera_at(tj), tj);
  const AccumulatedDifferenceMap E = accumulate(fx.events, ti, tj);
  AccumulatedDifferenceMap R = E;
  for (auto& c : R.counts) c = -c;
  std::swap(R.t0, R.t1);
  EXPECT_EQ(detail::event_term(vi, vj, E, nullptr, nullptr), detail::event_term(vj, vi, R, nullptr, nullptr));
}

TEST(EventLoss, ColorStreamComparesOnlyTheBayerChannel) {
  MiniScene m = mini_scene(0.5);
  m.scene.gaussians.push_back(blob(0, 0.1));
  m.scene.render.channels = 3;
  const RenderedView vi = render_scene(m.scene, m.track.camera(0), 0.0);
  RenderedView vj = vi;
  AccumulatedDifferenceMap E;
  E.width = E.height = 64;
  E.channels = 3;
  E.counts.assign(3 * 64 * 64, 0);
  EXPECT_EQ(detail::event_term(vi, vj, E, nullptr, nullptr), 0.0);
  // Brightening green everywhere only shows at G sites, which are half the pixels.
  for (std::size_t p = 0; p < 64 * 64; ++p) vj.intensity.data[64 * 64 + p] = 1.0;
  double expect = 0.0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (bayer_channel(x, y) == Channel::G) expect += -std::log(std::max(std::pow(vi.intensity.at(1, y, x), 1 / 2.2), 1e-3));
  EXPECT_NEAR(detail::event_term(vi, vj, E, nullptr, nullptr), expect / (64.0 * 64.0), 1e-12);
}

TEST(SilhouetteLoss, EmptySceneEmptyMasksIsZero) {
  MiniScene m = mini_scene(0.5);
  const std::vector<BinaryMask> masks(3, BinaryMask(64, 64));
  EXPECT_EQ(silhouette_loss(m.scene, m.track, masks), 0.0);
}

TEST(SilhouetteLoss, EmptySceneFullMasksIsAboutOnePerView) {
  MiniScene m = mini_scene(0.5);
  BinaryMask full(64, 64);
  std::fill(full.values.begin(), full.values.end(), true);
  const std::vector<BinaryMask> masks(3, full);
  const double per_view = silhouette_loss(m.scene, m.track, masks) / 3.0;
  EXPECT_GE(per_view, 0.9);
  EXPECT_LE(per_view, 1.0);
}

TEST(SilhouetteLoss, MissingMaskIsSkipped) {
  MiniScene m = mini_scene(0.5);
  BinaryMask full(64, 64);
  std::fill(full.values.begin(), full.values.end(), true);
  std::vector<BinaryMask> masks = {full, BinaryMask(), full};
  int skipped = 0;
  const double two = silhouette_loss(m.scene, m.track, masks, 2.0, &skipped);
  EXPECT_EQ(skipped, 1);
  masks.pop_back();
  const double one = silhouette_loss(m.scene, m.track, masks, 2.0, &skipped);
  EXPECT_EQ(skipped, 2);
  EXPECT_NEAR(two, 2.0 * one, 1e-15);
}

TEST(SilhouetteLoss, BackgroundGaussianAddsItsFootprint) {
  MiniScene m = mini_scene(1.3);
  m.scene.gaussians.push_back(blob(0, 0.15));
  // Mask: the projected footprint of the object Gaussian, dilated well past its support.
  const RenderedView obj = render_scene(m.scene, m.track.camera(0), 0.0);
  BinaryMask mask(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) mask.set(x, y, (Vec2(x, y) - Vec2(31.5, 31.5)).norm() < 12.0);
  const std::vector<BinaryMask> masks(3, mask);
  const double before = silhouette_loss(m.scene, m.track, masks);

  Scene only_far = m.scene;
  only_far.gaussians = GaussianSet();
  only_far.gaussians.k = 1;
  only_far.gaussians.push_back(blob(1, 0.05));
  const RenderedView far = render_scene(only_far, m.track.camera(0), 0.0);
  double footprint = 0.0;
  for (double a : far.alpha.data) footprint += a;
  ASSERT_GT(footprint, 1.0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (far.alpha(y, x) > 0.0) {
        ASSERT_FALSE(mask.at(x, y));
        ASSERT_EQ(obj.alpha(y, x), 0.0);
      }
    }

  m.scene.gaussians.push_back(blob(1, 0.05));
  const double after = silhouette_loss(m.scene, m.track, masks);
  // Blurred mask mass leaking onto the far footprint is below 1e-6 per pixel.
  EXPECT_NEAR(after - before, 3.0 * footprint / (64.0 * 64.0), 1e-6);
}

class TotalLossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const ToyFixture& fx = fixture();
    scene = ground_truth_scene(fx);
    // Shift the Gaussians off the ground truth so every term has a gradient.
    for (auto& c : scene.gaussians.raw_color) c += 0.4;
    for (auto& s : scene.gaussians.log_scale) s += 0.2;
    targets = blurred_targets(fx.masks);
    Rng rng(5);
    windows = draw_windows(fx.track, 4, kDefaultLMax, stream_stop(fx.events, fx.track), rng);
  }
  Scene scene;
  std::vector<Image> targets;
  std::vector<WindowSample> windows;
};

TEST_F(TotalLossTest, ZeroEventWeightLeavesSilhouetteOnly) {
  const ToyFixture& fx = fixture();
  const LossBreakdown both = total_loss(scene, fx.track, fx.events, targets, windows, {1.0, 1.0});
  const LossBreakdown sil = total_loss(scene, fx.track, fx.events, targets, windows, {0.0, 1.0});
  EXPECT_EQ(sil.total, both.silhouette);
}

TEST_F(TotalLossTest, TotalIsTheSumOfItsParts) {
  const ToyFixture& fx = fixture();
  const LossBreakdown b = total_loss(scene, fx.track, fx.events, targets, windows, {1.0, 1.0});
  EXPECT_NEAR(b.total, b.event + b.silhouette, 1e-12);
  EXPECT_NEAR(b.event, event_loss(scene, fx.track, fx.events, windows), 1e-12);
  double sil = 0.0;
  for (const auto& w : windows)
    sil += detail::silhouette_term(render_scene(scene, fx.track.camera(w.view), w.t_i), targets[w.view], nullptr);
  EXPECT_NEAR(b.silhouette, sil / static_cast<double>(windows.size()), 1e-12);
}

TEST_F(TotalLossTest, GradientIsTheWeightedSumOfPartGradients) {
  const ToyFixture& fx = fixture();
  const double le = 0.7, ls = 1.9;
  SceneGradients g_tot(scene, true), g_ev(scene, true), g_sil(scene, true);
  total_loss(scene, fx.track, fx.events, targets, windows, {le, ls}, &g_tot);
  total_loss(scene, fx.track, fx.events, targets, windows, {1.0, 0.0}, &g_ev);
  total_loss(scene, fx.track, fx.events, targets, windows, {0.0, 1.0}, &g_sil);
  auto check = [](const std::vector<double>& t, const std::vector<double>& e, const std::vector<double>& s,
                  double a, double b, const char* name) {
    ASSERT_EQ(t.size(), e.size());
    double scale = 0.0;
    for (double v : t) scale = std::max(scale, std::abs(v));
    ASSERT_GT(scale, 0.0) << name;
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], a * e[i] + b * s[i], 1e-12 * scale) << name << i;
  };
  check(g_tot.gaussians.raw_color, g_ev.gaussians.raw_color, g_sil.gaussians.raw_color, le, ls, "color");
  check(g_tot.gaussians.raw_opacity, g_ev.gaussians.raw_opacity, g_sil.gaussians.raw_opacity, le, ls, "opacity");
  check(g_tot.gaussians.log_scale, g_ev.gaussians.log_scale, g_sil.gaussians.log_scale, le, ls, "scale");
  check(g_tot.coarse.basis, g_ev.coarse.basis, g_sil.coarse.basis, le, ls, "basis");
  check(g_tot.coarse.net, g_ev.coarse.net, g_sil.coarse.net, le, ls, "mlp");
}

TEST_F(TotalLossTest, GradientMatchesFiniteDifferencesOnOpacity) {
  const ToyFixture& fx = fixture();
  SceneGradients g(scene, false);
  total_loss(scene, fx.track, fx.events, targets, windows, {1.0, 1.0}, &g);
  // The L1 terms are piecewise smooth; a small step stays on one piece for most parameters.
  Rng rng(8);
  int agree = 0, tried = 0;
  for (int n = 0; n < 20; ++n) {
    const std::size_t i = rng.below(scene.gaussians.size());
    if (g.gaussians.raw_opacity[i] == 0.0) continue;
    Scene s = scene;
    const double h = 1e-7;
    s.gaussians.raw_opacity[i] += h;
    const double up = total_loss(s, fx.track, fx.events, targets, windows, {1.0, 1.0}).total;
    s.gaussians.raw_opacity[i] -= 2 * h;
    const double dn = total_loss(s, fx.track, fx.events, targets, windows, {1.0, 1.0}).total;
    ++tried;
    agree += relative_error(g.gaussians.raw_opacity[i], (up - dn) / (2 * h)) < 1e-3;
  }
  ASSERT_GT(tried, 5);
  EXPECT_GE(agree, tried * 9 / 10);
}

TEST_F(TotalLossTest, DeterministicForAFixedSeed) {
  const ToyFixture& fx = fixture();
  auto run = [&]() {
    Rng rng(21);
    const auto w = draw_windows(fx.track, 4, kDefaultLMax, stream_stop(fx.events, fx.track), rng);
    SceneGradients g(scene, true);
    const double l = total_loss(scene, fx.track, fx.events, targets, w, {1.0, 1.0}, &g).total;
    return std::make_pair(l, g.gaussians.raw_color);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(DrawWindows, ClipsToStreamEnd) {
  const ToyFixture& fx = fixture();
  Rng rng(6);
  const double stop = fx.track.time(fx.track.size() - 1) + 1e-3;
  for (const WindowSample& w : draw_windows(fx.track, 500, 0.05, stop, rng)) {
    EXPECT_EQ(w.t_i, fx.track.time(w.view));
    EXPECT_GE(w.t_j, w.t_i);
    EXPECT_LE(w.t_j, std::max(w.t_i, stop));
  }
}

}  // namespace
}  // namespace ev4dgs
