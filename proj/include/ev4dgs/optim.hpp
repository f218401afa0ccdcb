#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace ev4dgs {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;
  long skipped = 0;  // steps dropped for non-finite gradients

  AdamState() = default;
  AdamState(std::size_t n, double base_lr) : m(n, 0.0), v(n, 0.0), lr(base_lr) {}

  /// Keeps the moments of the listed entries (each `stride` wide), in order.
  void retain(const std::vector<std::size_t>& kept, std::size_t stride) {
    std::vector<double> nm, nv;
    nm.reserve(kept.size() * stride);
    nv.reserve(kept.size() * stride);
    for (std::size_t i : kept)
      for (std::size_t s = 0; s < stride; ++s) {
        nm.push_back(m[i * stride + s]);
        nv.push_back(v[i * stride + s]);
      }
    m = std::move(nm);
    v = std::move(nv);
  }
};

/// Bias-corrected Adam at the given rate. A non-finite gradient anywhere in
/// the group skips the whole step. Returns false when skipped.
inline bool adam_step(AdamState& s, std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size() || s.m.size() != params.size()) throw std::invalid_argument("adam_step: size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) {
      ++s.skipped;
      return false;
    }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double mh = s.m[i] / c1;
    const double vh = s.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + s.eps);
  }
  return true;
}

inline bool adam_step(AdamState& s, std::span<double> params, std::span<const double> grads) {
  return adam_step(s, params, grads, s.lr);
}

enum class ScheduleKind { Constant, Cosine };

struct Schedule {
  double base = 1e-3;
  long total = 1;
  ScheduleKind kind = ScheduleKind::Cosine;
};

inline double lr_at(const Schedule& s, long step) {
  if (s.total < 1) throw std::invalid_argument("schedule needs total >= 1");
  if (step < 0 || step > s.total) throw std::out_of_range("schedule step outside [0, total]");
  if (s.kind == ScheduleKind::Constant) return s.base;
  if (step == s.total) return 0.0;
  return s.base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(s.total)));
}

}  // namespace ev4dgs
