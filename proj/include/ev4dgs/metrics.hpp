#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ev4dgs/core/image.hpp"
#include "ev4dgs/core/parallel.hpp"
#include "ev4dgs/optim.hpp"

namespace ev4dgs {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("image dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

/// 10 log10(1 / MSE) for unit peak, capped at 99 dB.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over
/// channels.
inline double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("image dimensions differ");
  constexpr int R = 5;
  if (a.width < 2 * R + 1 || a.height < 2 * R + 1) throw std::invalid_argument("ssim needs images of at least 11x11");
  std::vector<double> k(2 * R + 1);
  double ks = 0.0;
  for (int i = -R; i <= R; ++i) ks += (k[i + R] = std::exp(-0.5 * i * i / (1.5 * 1.5)));
  for (auto& v : k) v /= ks;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int W = a.width - 2 * R, H = a.height - 2 * R;

  // Separable filtering of x, y, x^2, y^2, xy restricted to the valid region.
  auto filter = [&](int c, auto value) {
    std::vector<double> tmp(static_cast<std::size_t>(a.height) * W), out(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0.0;
        for (int i = 0; i <= 2 * R; ++i) s += k[i] * value(c, y, x + i);
        tmp[static_cast<std::size_t>(y) * W + x] = s;
      }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0.0;
        for (int i = 0; i <= 2 * R; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * W + x];
        out[static_cast<std::size_t>(y) * W + x] = s;
      }
    return out;
  };
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    const auto mx = filter(c, [&](int cc, int y, int x) { return a.at(cc, y, x); });
    const auto my = filter(c, [&](int cc, int y, int x) { return b.at(cc, y, x); });
    const auto xx = filter(c, [&](int cc, int y, int x) { return a.at(cc, y, x) * a.at(cc, y, x); });
    const auto yy = filter(c, [&](int cc, int y, int x) { return b.at(cc, y, x) * b.at(cc, y, x); });
    const auto xy = filter(c, [&](int cc, int y, int x) { return a.at(cc, y, x) * b.at(cc, y, x); });
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = xx[i] - mx[i] * mx[i];
      const double vy = yy[i] - my[i] * my[i];
      const double cxy = xy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / a.channels;
}

struct ColorCorrection {
  double s = 1.0;
  double b = 0.0;
  std::vector<Image> corrected;
  double mean_psnr_before = 0.0;
  double mean_psnr_after = 0.0;
  bool aborted = false;
};

inline constexpr double kCorrectionFloor = 1e-3;

/// exp(s log(max(I, eps)) + b), clamped to [0, 1].
inline Image apply_correction(const Image& img, double s, double b, double eps = kCorrectionFloor) {
  Image out = img;
  for (auto& v : out.data) v = std::clamp(std::exp(s * std::log(std::max(v, eps)) + b), 0.0, 1.0);
  return out;
}

struct CorrectionOptions {
  int steps = 500;
  double lr = 1e-2;
  double eps = kCorrectionFloor;
};

/// Scale/bias in log space maximizing the mean PSNR over all pairs, by Adam
/// from (1, 0). The best iterate seen (including the start) is returned.
inline ColorCorrection color_correct(const std::vector<Image>& renders, const std::vector<Image>& refs,
                                     const CorrectionOptions& opt = {}) {
  if (renders.size() != refs.size() || renders.empty()) throw std::invalid_argument("color_correct: need paired images");
  for (std::size_t i = 0; i < renders.size(); ++i)
    if (!renders[i].same_shape(refs[i])) throw std::invalid_argument("color_correct: image dimensions differ");
  const std::size_t n = renders.size();
  std::vector<std::vector<double>> logs(n);
  for (std::size_t i = 0; i < n; ++i) {
    logs[i].resize(renders[i].data.size());
    for (std::size_t p = 0; p < logs[i].size(); ++p) logs[i][p] = std::log(std::max(renders[i].data[p], opt.eps));
  }

  // Mean PSNR and its gradient at (s, b).
  auto evaluate = [&](double s, double b, double* gs, double* gb) {
    std::vector<double> val(n), ds(n), db(n);
    parallel_for(n, [&](std::size_t i) {
      const auto& L = logs[i];
      const auto& G = refs[i].data;
      double m = 0.0, ms = 0.0, mb = 0.0;
      for (std::size_t p = 0; p < L.size(); ++p) {
        const double raw = std::exp(s * L[p] + b);
        const double f = std::clamp(raw, 0.0, 1.0);
        const double r = f - G[p];
        m += r * r;
        if (raw < 1.0) {
          ms += 2.0 * r * f * L[p];
          mb += 2.0 * r * f;
        }
      }
      const double inv = 1.0 / static_cast<double>(L.size());
      m *= inv;
      const double capped = std::pow(10.0, -kPsnrCap / 10.0);
      if (m <= capped) {
        val[i] = kPsnrCap;
        ds[i] = db[i] = 0.0;
      } else {
        val[i] = -10.0 * std::log10(m);
        const double k = -10.0 / (std::log(10.0) * m);
        ds[i] = k * ms * inv;
        db[i] = k * mb * inv;
      }
    });
    double v = 0.0, a = 0.0, c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v += val[i];
      a += ds[i];
      c += db[i];
    }
    if (gs) *gs = a / n;
    if (gb) *gb = c / n;
    return v / n;
  };

  ColorCorrection out;
  double params[2] = {1.0, 0.0};
  AdamState state(2, opt.lr);
  double best = evaluate(1.0, 0.0, nullptr, nullptr);
  out.mean_psnr_before = best;
  double best_s = 1.0, best_b = 0.0;
  for (int step = 0; step < opt.steps; ++step) {
    double gs = 0.0, gb = 0.0;
    const double v = evaluate(params[0], params[1], &gs, &gb);
    if (!std::isfinite(v) || !std::isfinite(gs) || !std::isfinite(gb)) {
      out.aborted = true;
      best_s = 1.0;
      best_b = 0.0;
      best = out.mean_psnr_before;
      break;
    }
    if (v > best) {
      best = v;
      best_s = params[0];
      best_b = params[1];
    }
    const double grad[2] = {-gs, -gb};  // ascend PSNR
    adam_step(state, params, grad);
  }
  if (!out.aborted) {
    const double v = evaluate(params[0], params[1], nullptr, nullptr);
    if (std::isfinite(v) && v > best) {
      best = v;
      best_s = params[0];
      best_b = params[1];
    }
  }
  out.s = best_s;
  out.b = best_b;
  out.mean_psnr_after = best;
  out.corrected.reserve(n);
  for (const auto& r : renders) out.corrected.push_back(apply_correction(r, best_s, best_b, opt.eps));
  return out;
}

}  // namespace ev4dgs
