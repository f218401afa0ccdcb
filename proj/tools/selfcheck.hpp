#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ev4dgs/chamfer.hpp"
#include "ev4dgs/events.hpp"
#include "ev4dgs/gradcheck.hpp"
#include "ev4dgs/metrics.hpp"
#include "ev4dgs/simulator.hpp"

namespace ev4dgs::cli {

struct CheckRow {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace check {

inline EventStream random_stream(Rng& rng, int w, int h, std::size_t n, bool color) {
  std::vector<Event> ev(n);
  double t = 0.0;
  for (auto& e : ev) {
    t += rng.exponential() * 1e-4;
    e.t = t;
    e.x = static_cast<std::uint16_t>(rng.below(w));
    e.y = static_cast<std::uint16_t>(rng.below(h));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
  }
  return EventStream(w, h, 0.2, color, std::move(ev));
}

inline CheckRow accumulate_oracle(int streams) {
  Rng rng(11);
  int bad = 0;
  for (int s = 0; s < streams; ++s) {
    const bool color = s % 2 == 1;
    const EventStream st = random_stream(rng, 32, 32, 2000 + rng.below(3000), color);
    const double t0 = rng.uniform(0.0, st.t_end()), t1 = rng.uniform(t0, st.t_end());
    std::vector<std::int32_t> ref(static_cast<std::size_t>(32 * 32 * st.channels()), 0);
    for (const Event& e : st.events())
      if (e.t > t0 && e.t <= t1) {
        const int c = color ? static_cast<int>(bayer_channel(e.x, e.y)) : 0;
        ref[static_cast<std::size_t>(c) * 1024 + e.y * 32 + e.x] += e.p;
      }
    if (accumulate(st, t0, t1).counts != ref) ++bad;
  }
  return {"accumulate vs brute force", bad == 0, std::to_string(streams - bad) + "/" + std::to_string(streams)};
}

inline CheckRow chamfer_oracle(int pairs) {
  Rng rng(12);
  double worst = 0.0;
  for (int p = 0; p < pairs; ++p) {
    std::vector<Vec2> a(1 + rng.below(150)), b(1 + rng.below(150));
    for (auto& v : a) v = Vec2(rng.uniform(0, 64), rng.uniform(0, 64));
    for (auto& v : b) v = Vec2(rng.uniform(0, 64), rng.uniform(0, 64));
    auto directed = [](const std::vector<Vec2>& x, const std::vector<Vec2>& y) {
      double s = 0.0;
      for (const auto& p : x) {
        double best = INFINITY;
        for (const auto& q : y) best = std::min(best, (p - q).squaredNorm());
        s += best;
      }
      return s / static_cast<double>(x.size());
    };
    worst = std::max(worst, std::abs(chamfer(a, b) - (directed(a, b) + directed(b, a))));
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max |diff| %.2e", worst);
  return {"chamfer vs brute force", worst <= 1e-9, buf};
}

inline CheckRow simulator_residual(int sequences) {
  Rng rng(13);
  double worst = 0.0;
  for (int s = 0; s < sequences; ++s) {
    FrameSequence seq;
    const int frames = 5 + static_cast<int>(rng.below(20));
    for (int f = 0; f < frames; ++f) {
      Image img(16, 16, 1);
      for (auto& v : img.data) v = rng.uniform(0.05, 1.0);
      seq.frames.push_back(img);
      seq.timestamps.push_back(0.01 * f);
    }
    const EventStream st = simulate(seq, 0.2);
    const auto acc = accumulate(st, -1.0, seq.timestamps.back());
    const Image l0 = log_intensity(seq.frames.front()), l1 = log_intensity(seq.frames.back());
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) worst = std::max(worst, std::abs(acc.value(0, y, x) - (l1(y, x) - l0(y, x))));
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max residual %.4f", worst);
  return {"simulator residual <= sigma", worst <= 0.2 + 1e-12, buf};
}

inline CheckRow gradient(const std::string& name, const GradCheckReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu/%zu within 1e-3", r.passed(), r.entries.size());
  return {name, r.pass_fraction() >= 0.95, buf};
}

inline CheckRow color_correction() {
  Rng rng(14);
  std::vector<Image> refs, distorted;
  for (int i = 0; i < 4; ++i) {
    Image g(32, 32, 1);
    for (auto& v : g.data) v = rng.uniform(0.05, 0.7);
    refs.push_back(g);
    Image d = g;
    for (auto& v : d.data) v = std::exp((std::log(v) + 0.1) / 1.2);
    distorted.push_back(d);
  }
  const ColorCorrection c = color_correct(distorted, refs);
  const ColorCorrection id = color_correct(refs, refs);
  const bool ok = c.mean_psnr_after >= 50.0 && std::abs(id.s - 1.0) <= 1e-3 && std::abs(id.b) <= 1e-3;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.1f dB, identity (%.4f, %.4f)", c.mean_psnr_after, id.s, id.b);
  return {"color correction recovery", ok, buf};
}

}  // namespace check

inline std::vector<CheckRow> run_selfcheck() {
  std::vector<CheckRow> rows;
  rows.push_back(check::accumulate_oracle(20));
  rows.push_back(check::chamfer_oracle(50));
  rows.push_back(check::simulator_residual(5));
  rows.push_back(check::gradient("renderer gradients", renderer_gradient_check(1)));
  rows.push_back(check::gradient("coarse model gradients", coarse_gradient_check(1)));
  rows.push_back(check::color_correction());
  return rows;
}

}  // namespace ev4dgs::cli
