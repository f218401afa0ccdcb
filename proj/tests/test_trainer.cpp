#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ev4dgs/trainer.hpp"
#include "test_support.hpp"

namespace ev4dgs {
namespace {

const ToyFixture& fixture() { return test::small_fixture(); }

TrainConfig quick_config() {
  TrainConfig c = fixture().config;
  c.coarse_iters = 300;
  c.fine_iters = 120;
  c.num_gaussians = 400;
  c.unfreeze_step = 40;
  c.prune_every = 50;
  return c;
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p = {1.0, -2.0, 0.5};
  const std::vector<double> g(3, 0.0);
  AdamState s(3, 0.1);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(adam_step(s, p, g));
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, ConstantGradientStepApproachesBaseRate) {
  std::vector<double> p = {0.0, 0.0};
  const std::vector<double> g = {3.0, -0.02};
  AdamState s(2, 1e-2);
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 200; ++i) {
    prev0 = p[0];
    prev1 = p[1];
    adam_step(s, p, g);
  }
  EXPECT_LT(p[0], 0.0);
  EXPECT_GT(p[1], 0.0);
  EXPECT_NEAR(prev0 - p[0], 1e-2, 1e-8);
  EXPECT_NEAR(p[1] - prev1, 1e-2, 1e-5);
}

TEST(Adam, ConvergesInAQuadraticBowl) {
  std::vector<double> x = {1.0};
  AdamState s(1, 0.1);
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> g = {2.0 * x[0]};
    adam_step(s, x, g);
  }
  EXPECT_LT(std::abs(x[0]), 1e-3);
}

TEST(Adam, NonFiniteGradientSkipsTheStep) {
  std::vector<double> p = {1.0, 2.0};
  AdamState s(2, 0.1);
  const std::vector<double> bad = {0.5, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_FALSE(adam_step(s, p, bad));
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(s.skipped, 1);
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(s.m, (std::vector<double>{0.0, 0.0}));
}

TEST(Adam, RejectsShapeMismatch) {
  std::vector<double> p = {1.0, 2.0};
  AdamState s(2, 0.1);
  const std::vector<double> g = {1.0};
  EXPECT_THROW(adam_step(s, p, g), std::invalid_argument);
}

TEST(Adam, RetainKeepsMomentsOfSurvivors) {
  AdamState s(6, 0.1);
  for (int i = 0; i < 6; ++i) s.m[i] = i, s.v[i] = 10 + i;
  s.retain({0, 2}, 2);
  EXPECT_EQ(s.m, (std::vector<double>{0, 1, 4, 5}));
  EXPECT_EQ(s.v, (std::vector<double>{10, 11, 14, 15}));
}

TEST(Schedule, CosineEndpointsAreExact) {
  const Schedule s{0.3, 1000, ScheduleKind::Cosine};
  EXPECT_EQ(lr_at(s, 0), 0.3);
  EXPECT_EQ(lr_at(s, 1000), 0.0);
  EXPECT_NEAR(lr_at(s, 500), 0.15, 1e-16);
  for (long k = 1; k <= 1000; ++k) EXPECT_LE(lr_at(s, k), lr_at(s, k - 1));
}

TEST(Schedule, ConstantKindIgnoresStep) {
  const Schedule s{0.02, 10, ScheduleKind::Constant};
  for (long k = 0; k <= 10; ++k) EXPECT_EQ(lr_at(s, k), 0.02);
}

TEST(Schedule, RejectsOutOfRangeSteps) {
  EXPECT_THROW(lr_at(Schedule{0.1, 0, ScheduleKind::Cosine}, 0), std::invalid_argument);
  EXPECT_THROW(lr_at(Schedule{0.1, 10, ScheduleKind::Cosine}, 11), std::out_of_range);
  EXPECT_THROW(lr_at(Schedule{0.1, 10, ScheduleKind::Cosine}, -1), std::out_of_range);
}

TEST(TrainConfig, RoundTripsThroughKeyValueConfig) {
  TrainConfig c = quick_config();
  c.weights.silhouette = 0.0;
  c.finetune_coarse = false;
  c.lr_color = 0.0125;
  c.masks.method = MaskMethod::Threshold;
  const TrainConfig back = TrainConfig::from(c.to_config());
  EXPECT_EQ(back.to_config().to_string(), c.to_config().to_string());
  EXPECT_EQ(back.weights.silhouette, 0.0);
  EXPECT_FALSE(back.finetune_coarse);
  EXPECT_EQ(back.lr_color, 0.0125);
  EXPECT_EQ(back.masks.method, MaskMethod::Threshold);
}

TEST(TrainConfig, RejectsInvalidValues) {
  Config c = TrainConfig().to_config();
  c.set("fine_iters", "-5");
  EXPECT_THROW(TrainConfig::from(c), DataError);
  Config d = TrainConfig().to_config();
  d.set("mask_method", "magic");
  EXPECT_THROW(TrainConfig::from(d), DataError);
}

TEST(TrainCoarse, ReducesTheMaskLoss) {
  const ToyFixture& fx = fixture();
  Rng rng(1);
  const CoarseTrainResult r = train_coarse(quick_config(), fx.masks, fx.track, rng);
  EXPECT_FALSE(r.diverged);
  EXPECT_EQ(r.history.size(), 300u);
  EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(TrainCoarse, SameSeedGivesBitwiseIdenticalModel) {
  const ToyFixture& fx = fixture();
  TrainConfig c = quick_config();
  c.coarse_iters = 60;
  Rng a(5), b(5);
  const CoarseTrainResult ra = train_coarse(c, fx.masks, fx.track, a);
  const CoarseTrainResult rb = train_coarse(c, fx.masks, fx.track, b);
  EXPECT_EQ(ra.model.basis.coords, rb.model.basis.coords);
  EXPECT_EQ(ra.model.net.mlp.params, rb.model.net.mlp.params);
}

TEST(TrainCoarse, RejectsMisalignedMasks) {
  const ToyFixture& fx = fixture();
  Rng rng(1);
  std::vector<BinaryMask> fewer(fx.masks.begin(), fx.masks.end() - 1);
  EXPECT_THROW(train_coarse(quick_config(), fewer, fx.track, rng), DataError);
}

class TrainFineTest : public ::testing::Test {
 protected:
  static FineTrainResult run(const TrainConfig& c, std::uint64_t seed = 2) {
    const ToyFixture& fx = fixture();
    Rng rng(seed);
    return train_fine(c, fx.events, fx.masks, fx.track, test::exact_coarse_model(fx), rng);
  }
};

TEST_F(TrainFineTest, TotalLossDropsTenfold) {
  TrainConfig c = quick_config();
  c.fine_iters = 800;
  c.prune_every = 1000;
  const FineTrainResult r = run(c);
  ASSERT_FALSE(r.diverged);
  double tail = 0.0;
  for (std::size_t i = r.history.size() - 50; i < r.history.size(); ++i) tail += r.history[i].total;
  tail /= 50.0;
  EXPECT_GE(r.history.front().total / tail, 10.0);
}

TEST_F(TrainFineTest, FrozenCoarseModelIsBitwiseUnchanged) {
  const ToyFixture& fx = fixture();
  const CoarsePointModel before = test::exact_coarse_model(fx);
  TrainConfig c = quick_config();
  c.finetune_coarse = false;
  const FineTrainResult r = run(c);
  EXPECT_EQ(r.scene.coarse.basis.coords, before.basis.coords);
  EXPECT_EQ(r.scene.coarse.net.mlp.params, before.net.mlp.params);
  TrainConfig late = quick_config();
  late.unfreeze_step = late.fine_iters;
  const FineTrainResult r2 = run(late);
  EXPECT_EQ(r2.scene.coarse.basis.coords, before.basis.coords);
}

TEST_F(TrainFineTest, UnfrozenCoarseModelMoves) {
  const ToyFixture& fx = fixture();
  const FineTrainResult r = run(quick_config());
  EXPECT_NE(r.scene.coarse.basis.coords, test::exact_coarse_model(fx).basis.coords);
}

TEST_F(TrainFineTest, NoSilhouetteAblationReportsBothComponents) {
  TrainConfig c = quick_config();
  c.weights.silhouette = 0.0;
  const FineTrainResult r = run(c);
  ASSERT_EQ(r.history.size(), static_cast<std::size_t>(c.fine_iters));
  for (const LossBreakdown& l : r.history) {
    EXPECT_GT(l.silhouette, 0.0);
    EXPECT_GT(l.event, 0.0);
    EXPECT_EQ(l.total, l.event);
  }
}

TEST_F(TrainFineTest, PruningDropsTransparentGaussians) {
  TrainConfig c = quick_config();
  // At the first prune (step 50) opacities sit in about [0.24, 0.28].
  c.prune_opacity = 0.27;
  const FineTrainResult r = run(c);
  EXPECT_GT(r.pruned, 0);
  EXPECT_LT(r.pruned, c.num_gaussians);
  EXPECT_EQ(r.scene.gaussians.size() + static_cast<std::size_t>(r.pruned), static_cast<std::size_t>(c.num_gaussians));
}

TEST_F(TrainFineTest, DeterministicAcrossRunsAndThreadCounts) {
  TrainConfig c = quick_config();
  c.fine_iters = 60;
  set_num_threads(1);
  const FineTrainResult a = run(c);
  set_num_threads(4);
  const FineTrainResult b = run(c);
  set_num_threads(1);
  const FineTrainResult d = run(c);
  for (const FineTrainResult* o : {&b, &d}) {
    EXPECT_EQ(a.scene.gaussians.raw_color, o->scene.gaussians.raw_color);
    EXPECT_EQ(a.scene.gaussians.raw_weights, o->scene.gaussians.raw_weights);
    EXPECT_EQ(a.scene.gaussians.log_scale, o->scene.gaussians.log_scale);
    EXPECT_EQ(a.scene.coarse.basis.coords, o->scene.coarse.basis.coords);
  }
}

TEST_F(TrainFineTest, RejectsSensorSizeMismatch) {
  const ToyFixture& fx = fixture();
  const EventStream other(fx.events.width() + 2, fx.events.height(), 0.2, false, {});
  Rng rng(1);
  EXPECT_THROW(train_fine(quick_config(), other, fx.masks, fx.track, test::exact_coarse_model(fx), rng), DataError);
}

}  // namespace
}  // namespace ev4dgs
