#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ev4dgs/fixture.hpp"
#include "ev4dgs/masks.hpp"
#include "test_support.hpp"

namespace ev4dgs {
namespace {

Event at(double t, int x, int y, int p = 1) {
  Event e;
  e.t = t;
  e.x = static_cast<std::uint16_t>(x);
  e.y = static_cast<std::uint16_t>(y);
  e.p = static_cast<std::int8_t>(p);
  return e;
}

Image disk_image(int size, const Vec2& c, double r) {
  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) img(y, x) = (Vec2(x, y) - c).norm() <= r ? 1.0 : 0.0;
  return img;
}

double mean_radius(const SnakeContour& s, const Vec2& c) {
  double r = 0.0;
  for (const auto& v : s.vertices) r += (v - c).norm();
  return r / static_cast<double>(s.vertices.size());
}

const ToyFixture& fixture() { return test::small_fixture(); }

TEST(EventDensity, EmptyWindowIsZero) {
  const EventStream s(16, 16, 0.2, false, {at(1.0, 3, 3)});
  const Image d = event_density(s, 0.0, 0.01);
  for (double v : d.data) EXPECT_EQ(v, 0.0);
}

TEST(EventDensity, SingleEventPeaksAtItsPixel) {
  const EventStream s(32, 24, 0.2, false, {at(0.5, 11, 7)});
  const Image d = event_density(s, 0.5, 0.01);
  EXPECT_EQ(d(7, 11), 1.0);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x)
      if (x != 11 || y != 7) {
        EXPECT_LT(d(y, x), 1.0);
      }
}

TEST(EventDensity, WindowIsClosedOnBothEnds) {
  const EventStream s(8, 8, 0.2, false, {at(0.49, 1, 1), at(0.51, 6, 6)});
  const Image d = event_density(s, 0.5, 0.01, 0.5);
  EXPECT_GT(d(1, 1), 0.9);
  EXPECT_GT(d(6, 6), 0.9);
}

TEST(EventDensity, RejectsNonPositiveWindow) {
  const EventStream s(8, 8, 0.2, false, {});
  EXPECT_THROW(event_density(s, 0.0, 0.0), std::invalid_argument);
}

TEST(EventDensity, SupportLiesOnTheObject) {
  const ToyFixture& fx = fixture();
  for (std::size_t i = 0; i < fx.track.size(); i += 4) {
    const double t = fx.track.time(i);
    BinaryMask dilated = detail::morph(fx.masks[i], 3, true);
    const auto [b, e] = fx.events.range_closed(t - 0.01, t + 0.01);
    ASSERT_GT(e, b);
    std::size_t inside = 0;
    for (std::size_t k = b; k < e; ++k) inside += dilated.at(fx.events.events()[k].x, fx.events.events()[k].y);
    EXPECT_GE(static_cast<double>(inside) / static_cast<double>(e - b), 0.9) << "view " << i;
  }
}

TEST(MaskProperty, PolarityFlipLeavesMaskUnchanged) {
  const ToyFixture& fx = fixture();
  std::vector<Event> flipped(fx.events.events().begin(), fx.events.events().end());
  for (auto& e : flipped) e.p = static_cast<std::int8_t>(-e.p);
  const EventStream neg(fx.events.width(), fx.events.height(), fx.events.sigma(), false, flipped);
  const double t = fx.track.time(5);
  EXPECT_EQ(event_density(fx.events, t, 0.01).data, event_density(neg, t, 0.01).data);
  EXPECT_EQ(gen_mask(fx.events, t).mask.values, gen_mask(neg, t).mask.values);
}

TEST(MaskProperty, WiderWindowNeverShrinksSupport) {
  Rng rng(9);
  const EventStream s = test::random_stream(rng, 32, 32, 3000, false);
  const double t = 0.5 * s.t_end();
  const Image narrow = event_density(s, t, 0.02 * s.t_end());
  const Image wide = event_density(s, t, 0.1 * s.t_end());
  for (std::size_t i = 0; i < narrow.data.size(); ++i)
    if (narrow.data[i] > 0.0) {
      EXPECT_GT(wide.data[i], 0.0);
    }
}

TEST(FitSnake, ConvergesOntoFilledDisk) {
  const Vec2 c(32.0, 30.0);
  const double r = 14.0;
  const Image density = disk_image(64, c, r);
  SnakeContour init = circle_contour(c, 24.0);
  const SnakeContour fit = fit_snake(density, init, 600);
  double err = 0.0;
  for (const auto& v : fit.vertices) err += std::abs((v - c).norm() - r);
  EXPECT_LT(err / static_cast<double>(fit.vertices.size()), 2.0);
}

TEST(FitSnake, WithoutExternalForceContractsMonotonically) {
  const Vec2 c(32.0, 32.0);
  SnakeContour s = circle_contour(c, 20.0);
  s.external = 0.0;
  const Image density(64, 64);
  double prev = mean_radius(s, c);
  for (int k = 0; k < 30; ++k) {
    s = fit_snake(density, s, 5);
    const double r = mean_radius(s, c);
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(FitSnake, StaysPutWhenStartedOnTheBoundary) {
  const Vec2 c(32.0, 32.0);
  const double r = 15.0;
  const Image density = disk_image(64, c, r);
  const SnakeContour init = circle_contour(c, r);
  const SnakeContour fit = fit_snake(density, init, 100);
  double moved = 0.0;
  for (std::size_t i = 0; i < init.vertices.size(); ++i) moved += (fit.vertices[i] - init.vertices[i]).norm();
  EXPECT_LT(moved / static_cast<double>(init.vertices.size()), 0.5);
}

TEST(FitSnake, EnergyNeverIncreases) {
  const Vec2 c(30.0, 34.0);
  const Image density = gaussian_blur(disk_image(64, c, 12.0), 2.0);
  SnakeContour s = circle_contour(c, 22.0);
  const auto field = detail::edge_field(density, s.edge_quantile);
  double prev = detail::snake_energy(s.vertices, s, field);
  for (int k = 0; k < 20; ++k) {
    s = fit_snake(density, s, 3);
    const double e = detail::snake_energy(s.vertices, s, field);
    EXPECT_LE(e, prev);
    prev = e;
  }
}

TEST(FitSnake, BitwiseDeterministic) {
  const Image density = gaussian_blur(disk_image(48, Vec2(20, 25), 10.0), 2.0);
  const SnakeContour init = circle_contour(Vec2(24, 24), 18.0);
  const SnakeContour a = fit_snake(density, init, 200), b = fit_snake(density, init, 200);
  ASSERT_EQ(a.vertices.size(), b.vertices.size());
  for (std::size_t i = 0; i < a.vertices.size(); ++i) {
    EXPECT_EQ(a.vertices[i].x(), b.vertices[i].x());
    EXPECT_EQ(a.vertices[i].y(), b.vertices[i].y());
  }
}

TEST(FitSnake, RejectsBadArguments) {
  const Image density(16, 16);
  EXPECT_THROW(fit_snake(density, circle_contour(Vec2(8, 8), 4.0), 0), std::invalid_argument);
  EXPECT_THROW(fit_snake(density, circle_contour(Vec2(8, 8), 4.0, 6), 10), std::invalid_argument);
}

TEST(RasterizeMask, TenByTenSquareHasEightyOneInteriorCenters) {
  SnakeContour sq;
  sq.vertices = resample_closed({{10, 10}, {20, 10}, {20, 20}, {10, 20}}, 40);
  const RasterizedMask r = rasterize_mask(sq, 32, 32);
  EXPECT_EQ(r.status, MaskStatus::Ok);
  EXPECT_EQ(r.mask.count(), 81u);
  EXPECT_TRUE(r.mask.at(11, 11));
  EXPECT_FALSE(r.mask.at(10, 15));
}

TEST(RasterizeMask, DegenerateContourGivesEmptyMask) {
  SnakeContour s;
  s.vertices.assign(16, Vec2(5, 5));
  const RasterizedMask r = rasterize_mask(s, 16, 16);
  EXPECT_EQ(r.status, MaskStatus::Degenerate);
  EXPECT_EQ(r.mask.count(), 0u);
}

TEST(RasterizeMask, CircleAreaWithinFivePercent) {
  const RasterizedMask r = rasterize_mask(circle_contour(Vec2(31.5, 32.2), 20.0, 128), 64, 64);
  const double area = std::numbers::pi * 400.0;
  EXPECT_NEAR(static_cast<double>(r.mask.count()), area, 0.05 * area);
}

TEST(RasterizeMask, SelfIntersectionFallsBackToHull) {
  SnakeContour bow;
  bow.vertices = resample_closed({{4, 4}, {20, 20}, {20, 4}, {4, 20}}, 32);
  const RasterizedMask r = rasterize_mask(bow, 24, 24);
  EXPECT_EQ(r.status, MaskStatus::HullFallback);
  EXPECT_EQ(r.mask.count(), 15u * 15u);
}

TEST(ThresholdMask, SeparatesBimodalImageAndClosesHoles) {
  Image img = disk_image(48, Vec2(24, 24), 12.0);
  img(24, 24) = 0.0;
  for (auto& v : img.data) v = 0.1 + 0.8 * v;
  const double th = otsu_threshold(img);
  EXPECT_GT(th, 0.1);
  EXPECT_LT(th, 0.9);
  const BinaryMask m = threshold_mask(img, 2);
  EXPECT_TRUE(m.at(24, 24));
  EXPECT_FALSE(m.at(2, 2));
}

TEST(GenMask, SnakeMasksAgreeWithGroundTruth) {
  const ToyFixture& fx = fixture();
  MaskOptions opt;
  opt.iters = fx.config.masks.iters;
  const auto masks = gen_masks(fx.events, fx.track, opt);
  double iou_sum = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t p = 0; p < masks[i].mask.values.size(); ++p) {
      inter += masks[i].mask.values[p] && fx.masks[i].values[p];
      uni += masks[i].mask.values[p] || fx.masks[i].values[p];
    }
    EXPECT_EQ(masks[i].mask.view, static_cast<int>(i));
    iou_sum += static_cast<double>(inter) / static_cast<double>(uni);
  }
  EXPECT_GT(iou_sum / static_cast<double>(masks.size()), 0.75);
}

TEST(GenMask, ThresholdMethodFlagsItself) {
  const ToyFixture& fx = fixture();
  MaskOptions opt;
  opt.method = MaskMethod::Threshold;
  const MaskResult r = gen_mask(fx.events, fx.track.time(3), opt);
  EXPECT_TRUE(r.used_threshold);
  EXPECT_GT(r.mask.count(), 0u);
}

TEST(BinaryMask, PngRoundTrip) {
  BinaryMask m(10, 7);
  m.set(3, 2, true);
  m.set(9, 6, true);
  test::TempDir dir("mask");
  write_mask_png(dir.file("m.png"), m);
  EXPECT_EQ(read_mask_png(dir.file("m.png")).values, m.values);
}

}  // namespace
}  // namespace ev4dgs
