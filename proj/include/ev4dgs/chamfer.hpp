#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ev4dgs/camera.hpp"

namespace ev4dgs {

/// Uniform bucket grid over a 2D point set for exact nearest-neighbor queries.
class PointGrid2 {
 public:
  explicit PointGrid2(const std::vector<Vec2>& points) : points_(points) {
    lo_ = Vec2(std::numeric_limits<double>::max(), std::numeric_limits<double>::max());
    Vec2 hi = -lo_;
    for (const auto& p : points) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Vec2 ext = (hi - lo_).cwiseMax(Vec2(1e-9, 1e-9));
    // About two points per cell.
    const double area = ext.x() * ext.y();
    cell_ = std::max(std::sqrt(2.0 * area / std::max<std::size_t>(points.size(), 1)), 1e-6);
    cell_ = std::max(cell_, std::max(ext.x(), ext.y()) / 1024.0);
    nx_ = static_cast<int>(ext.x() / cell_) + 1;
    ny_ = static_cast<int>(ext.y() / cell_) + 1;
    start_.assign(static_cast<std::size_t>(nx_) * ny_ + 1, 0);
    std::vector<int> cell_of(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      cell_of[i] = cell_index(cell_x(points[i].x()), cell_y(points[i].y()));
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < start_.size(); ++c) start_[c] += start_[c - 1];
    items_.resize(points.size());
    std::vector<int> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points.size(); ++i) items_[fill[cell_of[i]]++] = static_cast<int>(i);
  }

  /// Index of the nearest point; ties go to the lowest index.
  int nearest(const Vec2& q, double* dist2 = nullptr) const {
    const int cx = cell_x(q.x());
    const int cy = cell_y(q.y());
    double best = std::numeric_limits<double>::infinity();
    int best_i = -1;
    const int max_ring = std::max(nx_, ny_) + 1;
    for (int ring = 0; ring <= max_ring; ++ring) {
      // Everything in rings >= `ring` is at least this far from q.
      if (best_i >= 0 && ring > 0) {
        const double gap = ring_gap(q, cx, cy, ring);
        if (gap * gap > best) break;
      }
      for (int y = cy - ring; y <= cy + ring; ++y) {
        if (y < 0 || y >= ny_) continue;
        const bool edge_row = (y == cy - ring || y == cy + ring);
        const int step = edge_row ? 1 : 2 * ring;
        for (int x = cx - ring; x <= cx + ring; x += (step == 0 ? 1 : step)) {
          if (x < 0 || x >= nx_) continue;
          const int c = cell_index(x, y);
          for (int k = start_[c]; k < start_[c + 1]; ++k) {
            const int i = items_[k];
            const double d = (points_[i] - q).squaredNorm();
            if (d < best || (d == best && i < best_i)) {
              best = d;
              best_i = i;
            }
          }
        }
      }
    }
    if (dist2) *dist2 = best;
    return best_i;
  }

 private:
  int cell_x(double x) const { return std::clamp(static_cast<int>(std::floor((x - lo_.x()) / cell_)), 0, nx_ - 1); }
  int cell_y(double y) const { return std::clamp(static_cast<int>(std::floor((y - lo_.y()) / cell_)), 0, ny_ - 1); }
  int cell_index(int x, int y) const { return y * nx_ + x; }

  // Lower bound on the distance from q to any existing cell at Chebyshev
  // index distance >= ring from the (clamped) home cell.
  double ring_gap(const Vec2& q, int cx, int cy, int ring) const {
    double gap = std::numeric_limits<double>::infinity();
    if (cx - ring >= 0) gap = std::min(gap, std::max(0.0, q.x() - (lo_.x() + (cx - ring + 1) * cell_)));
    if (cx + ring < nx_) gap = std::min(gap, std::max(0.0, lo_.x() + (cx + ring) * cell_ - q.x()));
    if (cy - ring >= 0) gap = std::min(gap, std::max(0.0, q.y() - (lo_.y() + (cy - ring + 1) * cell_)));
    if (cy + ring < ny_) gap = std::min(gap, std::max(0.0, lo_.y() + (cy + ring) * cell_ - q.y()));
    return gap;
  }

  const std::vector<Vec2>& points_;
  Vec2 lo_;
  double cell_ = 1.0;
  int nx_ = 1;
  int ny_ = 1;
  std::vector<int> start_;
  std::vector<int> items_;
};

struct ChamferResult {
  double value = 0.0;
  std::vector<int> a_to_b;  // nearest b for every a
  std::vector<int> b_to_a;  // nearest a for every b
};

/// Symmetric mean squared nearest-neighbor distance, with the matchings.
inline ChamferResult chamfer_matched(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: point sets must be non-empty");
  ChamferResult r;
  r.a_to_b.resize(a.size());
  r.b_to_a.resize(b.size());
  double sa = 0.0, sb = 0.0;
  {
    const PointGrid2 grid(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
      double d2;
      r.a_to_b[i] = grid.nearest(a[i], &d2);
      sa += d2;
    }
  }
  {
    const PointGrid2 grid(a);
    for (std::size_t i = 0; i < b.size(); ++i) {
      double d2;
      r.b_to_a[i] = grid.nearest(b[i], &d2);
      sb += d2;
    }
  }
  r.value = sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size());
  return r;
}

inline double chamfer(const std::vector<Vec2>& a, const std::vector<Vec2>& b) { return chamfer_matched(a, b).value; }

}  // namespace ev4dgs
