#include <gtest/gtest.h>

#include <cmath>

#include "ev4dgs/metrics.hpp"
#include "test_support.hpp"

namespace ev4dgs {
namespace {

Image random_image(Rng& rng, int w, int h, int c = 1, double lo = 0.0, double hi = 1.0) {
  Image img(w, h, c);
  for (auto& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

// Direct 2D-window SSIM over valid positions.
double brute_ssim(const Image& a, const Image& b) {
  const int R = 5;
  double w[11][11], ws = 0.0;
  for (int i = -R; i <= R; ++i)
    for (int j = -R; j <= R; ++j) ws += (w[i + R][j + R] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5)));
  const double C1 = 1e-4, C2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    double sum = 0.0;
    int count = 0;
    for (int y = R; y < a.height - R; ++y)
      for (int x = R; x < a.width - R; ++x) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = -R; i <= R; ++i)
          for (int j = -R; j <= R; ++j) {
            const double k = w[i + R][j + R] / ws;
            const double p = a.at(c, y + i, x + j), q = b.at(c, y + i, x + j);
            mx += k * p;
            my += k * q;
            xx += k * p * p;
            yy += k * q * q;
            xy += k * p * q;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cv = xy - mx * my;
        sum += (2 * mx * my + C1) * (2 * cv + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        ++count;
      }
    total += sum / count;
  }
  return total / a.channels;
}

TEST(Psnr, IdenticalImagesHitTheCap) {
  Rng rng(1);
  const Image a = random_image(rng, 16, 16);
  EXPECT_EQ(psnr(a, a), 99.0);
}

TEST(Psnr, UniformOffsetOfOneTenthIsTwentyDecibels) {
  EXPECT_NEAR(psnr(Image(8, 8, 1, 0.0), Image(8, 8, 1, 0.1)), 20.0, 1e-12);
}

TEST(Psnr, FallsAsNoiseGrows) {
  Rng rng(2);
  const Image ref = random_image(rng, 32, 32, 1, 0.3, 0.7);
  const Image noise = random_image(rng, 32, 32, 1, -1.0, 1.0);
  double prev = 99.0;
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    Image n = ref;
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] += amp * noise.data[i];
    const double p = psnr(ref, n);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Psnr, SymmetricAndRejectsShapeMismatch) {
  Rng rng(3);
  const Image a = random_image(rng, 12, 9), b = random_image(rng, 12, 9);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, Image(9, 12)), std::invalid_argument);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  Rng rng(4);
  const Image a = random_image(rng, 24, 20, 3);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, MatchesDirectWindowOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Image a = random_image(rng, 20 + trial, 17 + 2 * trial, trial % 2 ? 3 : 1);
    Image b = a;
    for (auto& v : b.data) v = std::clamp(v + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), brute_ssim(a, b), 1e-12);
  }
}

TEST(Ssim, NegativeOfGrayFreeContentIsAnticorrelated) {
  Rng rng(6);
  Image a(32, 32);
  for (auto& v : a.data) v = rng.uniform() < 0.5 ? rng.uniform(0.0, 0.3) : rng.uniform(0.7, 1.0);
  Image neg = a;
  for (auto& v : neg.data) v = 1.0 - v;
  EXPECT_LT(ssim(a, neg), 0.0);
}

TEST(Ssim, InvariantToJointTranslation) {
  Rng rng(7);
  const Image pa = random_image(rng, 14, 12), pb = random_image(rng, 14, 12);
  auto place = [](const Image& patch, int ox, int oy) {
    // Every window that touches the patch lies fully inside the canvas.
    Image canvas(40, 36, 1, 0.25);
    for (int y = 0; y < patch.height; ++y)
      for (int x = 0; x < patch.width; ++x) canvas(oy + y, ox + x) = patch(y, x);
    return canvas;
  };
  EXPECT_NEAR(ssim(place(pa, 12, 11), place(pb, 12, 11)), ssim(place(pa, 16, 13), place(pb, 16, 13)), 1e-12);
}

TEST(Ssim, SymmetricAndRejectsBadShapes) {
  Rng rng(8);
  const Image a = random_image(rng, 16, 16, 3), b = random_image(rng, 16, 16, 3);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-9);
  EXPECT_THROW(ssim(a, Image(16, 16, 1)), std::invalid_argument);
  EXPECT_THROW(ssim(Image(8, 8), Image(8, 8)), std::invalid_argument);
}

TEST(ColorCorrect, IdentityInputsKeepIdentityCorrection) {
  Rng rng(9);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_image(rng, 24, 24, 1, 0.05, 0.95));
  const ColorCorrection c = color_correct(imgs, imgs);
  EXPECT_NEAR(c.s, 1.0, 1e-3);
  EXPECT_NEAR(c.b, 0.0, 1e-3);
  EXPECT_NEAR(c.mean_psnr_after, c.mean_psnr_before, 0.01);
}

TEST(ColorCorrect, RecoversKnownScaleAndBias) {
  Rng rng(10);
  std::vector<Image> renders, refs;
  for (int i = 0; i < 5; ++i) {
    renders.push_back(random_image(rng, 32, 32, 1, 0.05, 0.9));
    refs.push_back(apply_correction(renders.back(), 1.2, -0.1));
  }
  const ColorCorrection c = color_correct(renders, refs);
  EXPECT_GE(c.mean_psnr_after, 50.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) mean += psnr(c.corrected[i], refs[i]);
  EXPECT_NEAR(mean / refs.size(), c.mean_psnr_after, 1e-9);
  EXPECT_NEAR(c.s, 1.2, 1e-2);
  EXPECT_NEAR(c.b, -0.1, 1e-2);
}

TEST(ColorCorrect, NeverWorseThanIdentity) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Image> renders, refs;
    for (int i = 0; i < 3; ++i) {
      renders.push_back(random_image(rng, 16, 16));
      refs.push_back(random_image(rng, 16, 16));
    }
    const ColorCorrection c = color_correct(renders, refs);
    double identity = 0.0;
    for (int i = 0; i < 3; ++i) identity += psnr(renders[i], refs[i]);
    EXPECT_GE(c.mean_psnr_after, identity / 3.0 - 1e-6);
  }
}

TEST(ColorCorrect, CorrectedImagesAreClamped) {
  Rng rng(12);
  std::vector<Image> renders = {random_image(rng, 16, 16)};
  const Image bright = apply_correction(renders[0], 1.0, 2.0);
  for (double v : bright.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NEAR(apply_correction(Image(2, 2, 1, 0.0), 1.0, 0.0).data[0], 1e-3, 1e-15);
}

TEST(ColorCorrect, RejectsUnpairedInput) {
  EXPECT_THROW(color_correct({Image(4, 4)}, {}), std::invalid_argument);
  EXPECT_THROW(color_correct({}, {}), std::invalid_argument);
  EXPECT_THROW(color_correct({Image(4, 4)}, {Image(5, 4)}), std::invalid_argument);
}

}  // namespace
}  // namespace ev4dgs
