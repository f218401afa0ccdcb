#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ev4dgs/binary_mask.hpp"
#include "ev4dgs/camera.hpp"
#include "ev4dgs/core/error.hpp"
#include "ev4dgs/core/image.hpp"
#include "ev4dgs/core/parallel.hpp"
#include "ev4dgs/events.hpp"

namespace ev4dgs {

/// Blurred, max-normalized count of events of either polarity in
/// [t_center - half_window, t_center + half_window].
inline Image event_density(const EventStream& stream, double t_center, double half_window, double blur_sigma = 2.0) {
  if (!(half_window > 0.0)) throw std::invalid_argument("event_density: half_window must be positive");
  Image counts(stream.width(), stream.height(), 1);
  const auto [b, e] = stream.range_closed(t_center - half_window, t_center + half_window);
  const auto& ev = stream.events();
  for (std::size_t i = b; i < e; ++i) counts(ev[i].y, ev[i].x) += 1.0;
  Image d = gaussian_blur(counts, blur_sigma);
  const double m = *std::max_element(d.data.begin(), d.data.end());
  if (m > 0.0)
    for (auto& v : d.data) v /= m;
  return d;
}

struct SnakeContour {
  std::vector<Vec2> vertices;  // closed implicitly
  double elasticity = 0.1;
  double rigidity = 0.05;
  double external = 1.0;
  double step = 0.5;
  double edge_quantile = 0.5;  // of positive |grad D|^2; 1 normalizes by the maximum

  void validate() const {
    if (vertices.size() < 8) throw std::invalid_argument("snake contour needs at least 8 vertices");
    for (const auto& v : vertices)
      if (!v.allFinite()) throw std::invalid_argument("snake contour has non-finite vertices");
  }
};

inline SnakeContour circle_contour(const Vec2& center, double radius, int n = 64) {
  SnakeContour c;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * i / n;
    c.vertices.emplace_back(center.x() + radius * std::cos(a), center.y() + radius * std::sin(a));
  }
  return c;
}

/// Uniform arc-length resampling to n vertices, starting at vertex 0.
inline std::vector<Vec2> resample_closed(const std::vector<Vec2>& v, int n) {
  const std::size_t m = v.size();
  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) cum[i + 1] = cum[i] + (v[(i + 1) % m] - v[i]).norm();
  const double total = cum[m];
  if (!(total > 0.0)) return std::vector<Vec2>(n, v.front());
  std::vector<Vec2> out;
  out.reserve(n);
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    const double s = total * k / n;
    while (seg + 1 < m && cum[seg + 1] <= s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double f = len > 0.0 ? (s - cum[seg]) / len : 0.0;
    out.push_back(v[seg] + f * (v[(seg + 1) % m] - v[seg]));
  }
  return out;
}

namespace detail {

/// |grad D|^2 divided by the given quantile of its positive values and
/// clipped to 1, with its central-difference gradient.
struct EdgeField {
  Image potential;
  Image gx;
  Image gy;
};

inline EdgeField edge_field(const Image& density, double quantile) {
  const int W = density.width, H = density.height;
  EdgeField f{Image(W, H, 1), Image(W, H, 1), Image(W, H, 1)};
  auto at = [&](const Image& img, int x, int y) {
    return img(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1));
  };
  std::vector<double> positive;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double dx = 0.5 * (at(density, x + 1, y) - at(density, x - 1, y));
      const double dy = 0.5 * (at(density, x, y + 1) - at(density, x, y - 1));
      f.potential(y, x) = dx * dx + dy * dy;
      if (f.potential(y, x) > 0.0) positive.push_back(f.potential(y, x));
    }
  if (!positive.empty()) {
    const auto k = std::min(positive.size() - 1, static_cast<std::size_t>(quantile * positive.size()));
    std::nth_element(positive.begin(), positive.begin() + k, positive.end());
    const double scale = positive[k];
    for (auto& v : f.potential.data) v = std::min(1.0, v / scale);
  }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      f.gx(y, x) = 0.5 * (at(f.potential, x + 1, y) - at(f.potential, x - 1, y));
      f.gy(y, x) = 0.5 * (at(f.potential, x, y + 1) - at(f.potential, x, y - 1));
    }
  return f;
}

inline double snake_energy(const std::vector<Vec2>& v, const SnakeContour& c, const EdgeField& f) {
  const std::size_t n = v.size();
  double e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& prev = v[(i + n - 1) % n];
    const Vec2& next = v[(i + 1) % n];
    e += c.elasticity * (next - v[i]).squaredNorm();
    e += c.rigidity * (next - 2.0 * v[i] + prev).squaredNorm();
    e -= c.external * sample_bilinear(f.potential, 0, v[i].x(), v[i].y());
  }
  return e;
}

inline Eigen::MatrixXd snake_system(std::size_t n, double alpha, double beta, double step) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  const double c0 = 4.0 * alpha + 12.0 * beta;
  const double c1 = -2.0 * alpha - 8.0 * beta;
  const double c2 = 2.0 * beta;
  for (std::size_t i = 0; i < n; ++i) {
    A(i, i) += step * c0;
    A(i, (i + 1) % n) += step * c1;
    A(i, (i + n - 1) % n) += step * c1;
    A(i, (i + 2) % n) += step * c2;
    A(i, (i + n - 2) % n) += step * c2;
  }
  return A.inverse();
}

}  // namespace detail

/// Semi-implicit descent on the snake energy
///   sum elasticity |v'|^2 + rigidity |v''|^2 - external P(v),
/// with P the normalized squared gradient magnitude of `density`. A step
/// that raises the energy is retried with half the step size, down to
/// step / 2^19; the fit stops early when no step is accepted.
inline SnakeContour fit_snake(const Image& density, const SnakeContour& init, int iters) {
  if (iters < 1) throw std::invalid_argument("fit_snake: iters must be >= 1");
  init.validate();
  const detail::EdgeField field = detail::edge_field(density, init.edge_quantile);
  const std::size_t n = init.vertices.size();
  SnakeContour cur = init;
  double energy = detail::snake_energy(cur.vertices, cur, field);
  if (!std::isfinite(energy)) throw DivergenceError("snake energy is not finite");
  // Inverse system matrices for step, step/2, step/4, ... built on demand.
  std::vector<Eigen::MatrixXd> inverses;
  auto inverse = [&](std::size_t level) -> const Eigen::MatrixXd& {
    while (inverses.size() <= level)
      inverses.push_back(detail::snake_system(n, init.elasticity, init.rigidity, std::ldexp(init.step, -static_cast<int>(inverses.size()))));
    return inverses[level];
  };
  Eigen::MatrixXd rhs(n, 2);
  std::vector<Vec2> next(n);
  const double xmax = density.width - 1, ymax = density.height - 1;
  for (int it = 0; it < iters; ++it) {
    bool accepted = false;
    for (std::size_t level = 0; level < 20 && !accepted; ++level) {
      const double step = std::ldexp(init.step, -static_cast<int>(level));
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2& v = cur.vertices[i];
        rhs(i, 0) = v.x() + step * init.external * sample_bilinear(field.gx, 0, v.x(), v.y());
        rhs(i, 1) = v.y() + step * init.external * sample_bilinear(field.gy, 0, v.x(), v.y());
      }
      const Eigen::MatrixXd sol = inverse(level) * rhs;
      for (std::size_t i = 0; i < n; ++i)
        next[i] = Vec2(std::clamp(sol(i, 0), 0.0, xmax), std::clamp(sol(i, 1), 0.0, ymax));
      const double e = detail::snake_energy(next, cur, field);
      if (!std::isfinite(e)) throw DivergenceError("snake energy is not finite");
      if (e <= energy) {
        cur.vertices = next;
        energy = e;
        accepted = true;
      }
    }
    if (!accepted) break;
  }
  return cur;
}

enum class MaskStatus { Ok, HullFallback, Degenerate };

struct RasterizedMask {
  BinaryMask mask;
  MaskStatus status = MaskStatus::Ok;
};

namespace detail {

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

inline bool segments_cross(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

inline bool self_intersecting(const std::vector<Vec2>& v) {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      if (segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return true;
    }
  return false;
}

inline std::vector<Vec2> convex_hull(std::vector<Vec2> p) {
  std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (p.size() < 3) return p;
  std::vector<Vec2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  return h;
}

inline bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  if (cross(a, b, p) != 0.0) return false;
  return p.x() >= std::min(a.x(), b.x()) && p.x() <= std::max(a.x(), b.x()) && p.y() >= std::min(a.y(), b.y()) &&
         p.y() <= std::max(a.y(), b.y());
}

inline double polygon_area(const std::vector<Vec2>& v) {
  double a = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2& p = v[i];
    const Vec2& q = v[(i + 1) % v.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

}  // namespace detail

/// Pixel centers strictly inside the polygon (even-odd rule; points on an
/// edge are outside). Self-intersecting contours are replaced by their
/// convex hull.
inline RasterizedMask rasterize_mask(const SnakeContour& contour, int width, int height) {
  RasterizedMask out{BinaryMask(width, height), MaskStatus::Ok};
  std::vector<Vec2> poly = contour.vertices;
  if (poly.size() >= 3 && detail::self_intersecting(poly)) {
    poly = detail::convex_hull(poly);
    out.status = MaskStatus::HullFallback;
  }
  if (poly.size() < 3 || std::abs(detail::polygon_area(poly)) < 1e-12) {
    out.status = MaskStatus::Degenerate;
    return out;
  }
  const std::size_t n = poly.size();
  double ylo = poly[0].y(), yhi = ylo;
  for (const auto& p : poly) {
    ylo = std::min(ylo, p.y());
    yhi = std::max(yhi, p.y());
  }
  const int y0 = std::max(0, static_cast<int>(std::ceil(ylo)));
  const int y1 = std::min(height - 1, static_cast<int>(std::floor(yhi)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec2 p(x, y);
      bool inside = false;
      bool boundary = false;
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if (detail::on_segment(p, a, b)) {
          boundary = true;
          break;
        }
        if ((a.y() > y) != (b.y() > y)) {
          const double xc = a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
          if (x < xc) inside = !inside;
        }
      }
      if (inside && !boundary) out.mask.set(x, y, true);
    }
  }
  return out;
}

/// Otsu threshold over 256 bins of a [0,1] image.
inline double otsu_threshold(const Image& img) {
  std::array<double, 256> hist{};
  for (double v : img.data) hist[std::clamp(static_cast<int>(v * 255.0 + 0.5), 0, 255)] += 1.0;
  const double total = static_cast<double>(img.data.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return (best_t + 0.5) / 255.0;
}

namespace detail {

inline BinaryMask morph(const BinaryMask& in, int radius, bool dilate) {
  BinaryMask out(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      bool v = !dilate;
      for (int dy = -radius; dy <= radius && v != dilate; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          const int xx = x + dx, yy = y + dy;
          const bool s = xx >= 0 && yy >= 0 && xx < in.width && yy < in.height && in.at(xx, yy);
          if (s == dilate) {
            v = dilate;
            break;
          }
        }
      out.set(x, y, v);
    }
  return out;
}

}  // namespace detail

inline BinaryMask morphological_close(const BinaryMask& m, int radius) {
  return detail::morph(detail::morph(m, radius, true), radius, false);
}

inline BinaryMask threshold_mask(const Image& density, int closing_radius = 3) {
  const double th = otsu_threshold(density);
  BinaryMask m(density.width, density.height);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = density.data[i] > th ? 1 : 0;
  return morphological_close(m, closing_radius);
}

enum class MaskMethod { Snake, Threshold };

struct MaskOptions {
  MaskMethod method = MaskMethod::Snake;
  double half_window = 0.01;
  double density_blur = 2.0;
  double elasticity = 0.1;
  double rigidity = 0.05;
  double external = 1.0;
  double step = 0.5;
  double edge_quantile = 0.5;
  int iters = 300;
  int vertices = 64;
  double init_percentile = 0.1;
  double init_inflate = 0.1;
  bool threshold_fallback = true;
  int closing_radius = 3;
};

/// Axis-aligned box around density pixels above the given quantile,
/// inflated and resampled as a closed contour. Empty if nothing qualifies.
inline SnakeContour box_init(const Image& density, const MaskOptions& opt) {
  SnakeContour c;
  c.elasticity = opt.elasticity;
  c.rigidity = opt.rigidity;
  c.external = opt.external;
  c.step = opt.step;
  c.edge_quantile = opt.edge_quantile;
  std::vector<double> sorted = density.data;
  const std::size_t rank = std::min(sorted.size() - 1, static_cast<std::size_t>(opt.init_percentile * sorted.size()));
  std::nth_element(sorted.begin(), sorted.begin() + rank, sorted.end());
  const double th = sorted[rank];
  int x0 = density.width, x1 = -1, y0 = density.height, y1 = -1;
  for (int y = 0; y < density.height; ++y)
    for (int x = 0; x < density.width; ++x)
      if (density(y, x) > th) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x1 < x0) return c;
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  const double hx = 0.5 * (x1 - x0) * (1.0 + opt.init_inflate) + 0.5;
  const double hy = 0.5 * (y1 - y0) * (1.0 + opt.init_inflate) + 0.5;
  const double xmax = density.width - 1, ymax = density.height - 1;
  const std::vector<Vec2> box{{std::max(0.0, cx - hx), std::max(0.0, cy - hy)},
                              {std::min(xmax, cx + hx), std::max(0.0, cy - hy)},
                              {std::min(xmax, cx + hx), std::min(ymax, cy + hy)},
                              {std::max(0.0, cx - hx), std::min(ymax, cy + hy)}};
  c.vertices = resample_closed(box, opt.vertices);
  return c;
}

struct MaskResult {
  BinaryMask mask;
  MaskStatus status = MaskStatus::Ok;
  bool used_threshold = false;
};

/// Object mask at time t from the event stream alone.
inline MaskResult gen_mask(const EventStream& stream, double t, const MaskOptions& opt = {}) {
  MaskResult out;
  const Image density = event_density(stream, t, opt.half_window, opt.density_blur);
  if (opt.method == MaskMethod::Threshold) {
    out.mask = threshold_mask(density, opt.closing_radius);
    out.used_threshold = true;
  } else {
    SnakeContour c = box_init(density, opt);
    if (c.vertices.empty()) {
      out.status = MaskStatus::Degenerate;
      out.mask = BinaryMask(stream.width(), stream.height());
    } else {
      c = fit_snake(density, c, opt.iters);
      RasterizedMask r = rasterize_mask(c, stream.width(), stream.height());
      out.mask = std::move(r.mask);
      out.status = r.status;
    }
    if ((out.status == MaskStatus::Degenerate || out.mask.count() == 0) && opt.threshold_fallback) {
      out.mask = threshold_mask(density, opt.closing_radius);
      out.used_threshold = true;
    }
  }
  out.mask.t = t;
  return out;
}

/// One mask per camera pose, computed in parallel.
inline std::vector<MaskResult> gen_masks(const EventStream& stream, const CameraTrack& track,
                                         const MaskOptions& opt = {}) {
  std::vector<MaskResult> out(track.size());
  parallel_for(track.size(), [&](std::size_t i) {
    out[i] = gen_mask(stream, track.poses()[i].t, opt);
    out[i].mask.view = static_cast<int>(i);
  });
  return out;
}

}  // namespace ev4dgs
