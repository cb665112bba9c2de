#pragma once

// Builds corridor maps around a centerline and a speed-profiled raceline
// along it. Used to author the shipped maps and the synthetic test tracks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <vector>

#include "objrace/track.hpp"

namespace objrace {

struct TrackSpec {
  double half_width = 1.5;
  double resolution = 0.05;
  double margin = 1.0;
  double spacing = 0.1;
  double v_cap = 6.5;
  double lateral_accel = 5.0;
  double long_accel = 4.0;
};

struct BuiltTrack {
  OccupancyGrid grid;
  Raceline raceline;
};

/// Resamples a polyline (closed or open) at a uniform arc spacing.
inline std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, bool closed, double spacing) {
  std::vector<Vec2> loop = pts;
  if (closed) loop.push_back(pts.front());
  std::vector<double> cum(loop.size(), 0.0);
  for (std::size_t i = 1; i < loop.size(); ++i) {
    cum[i] = cum[i - 1] + std::hypot(loop[i].x - loop[i - 1].x, loop[i].y - loop[i - 1].y);
  }
  const double total = cum.back();
  const int count = std::max(2, static_cast<int>(std::round(total / spacing)));
  const double step = total / count;
  std::vector<Vec2> out;
  std::size_t seg = 0;
  const int last = closed ? count - 1 : count;
  for (int k = 0; k <= last; ++k) {
    const double s = std::min(k * step, total);
    while (seg + 2 < loop.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0 ? (s - cum[seg]) / len : 0.0;
    out.push_back({loop[seg].x + t * (loop[seg + 1].x - loop[seg].x),
                   loop[seg].y + t * (loop[seg + 1].y - loop[seg].y)});
  }
  return out;
}

/// Raceline along the given centerline with a curvature-limited speed profile.
inline Raceline build_raceline(const std::vector<Vec2>& centerline, bool closed, const TrackSpec& spec) {
  const auto pts = resample_polyline(centerline, closed, spec.spacing);
  const std::size_t n = pts.size();
  auto at = [&](long i) -> const Vec2& {
    if (closed) return pts[static_cast<std::size_t>((i % long(n) + long(n)) % long(n))];
    return pts[static_cast<std::size_t>(std::clamp<long>(i, 0, long(n) - 1))];
  };
  std::vector<double> theta(n), kappa(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = at(long(i) - 1);
    const auto& b = at(long(i));
    const auto& c = at(long(i) + 1);
    theta[i] = std::atan2(c.y - a.y, c.x - a.x);
    // Menger curvature through three consecutive points
    const double ab = std::hypot(b.x - a.x, b.y - a.y);
    const double bc = std::hypot(c.x - b.x, c.y - b.y);
    const double ca = std::hypot(a.x - c.x, a.y - c.y);
    const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    const double denom = ab * bc * ca;
    kappa[i] = denom > 0 ? 2.0 * cross / denom : 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double k = std::abs(kappa[i]);
    v[i] = k > 1e-9 ? std::min(spec.v_cap, std::sqrt(spec.lateral_accel / k)) : spec.v_cap;
  }
  // two sweeps each way so closed loops settle across the seam
  const int sweeps = closed ? 2 : 1;
  for (int pass = 0; pass < sweeps; ++pass) {
    for (std::size_t k = 1; k <= n; ++k) {
      const std::size_t i = k % n, j = k - 1;
      if (!closed && k == n) break;
      const double ds = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
      v[i] = std::min(v[i], std::sqrt(v[j] * v[j] + 2.0 * spec.long_accel * ds));
    }
    for (long k = long(n) - 1; k >= 0; --k) {
      const std::size_t i = static_cast<std::size_t>(k);
      const std::size_t j = (i + 1) % n;
      if (!closed && i + 1 == n) continue;
      const double ds = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
      v[i] = std::min(v[i], std::sqrt(v[j] * v[j] + 2.0 * spec.long_accel * ds));
    }
  }
  std::vector<Waypoint> wps(n);
  for (std::size_t i = 0; i < n; ++i) wps[i] = {pts[i].x, pts[i].y, theta[i], v[i]};
  return Raceline(std::move(wps), closed);
}

/// Occupancy grid where every cell farther than half_width from the
/// centerline is occupied.
inline OccupancyGrid build_corridor_grid(const Raceline& line, const TrackSpec& spec) {
  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  for (const auto& w : line.waypoints()) {
    xmin = std::min(xmin, w.x);
    xmax = std::max(xmax, w.x);
    ymin = std::min(ymin, w.y);
    ymax = std::max(ymax, w.y);
  }
  const double pad = spec.half_width + spec.margin;
  const Pose2 origin{xmin - pad, ymin - pad, 0.0};
  const int width = static_cast<int>(std::ceil((xmax - xmin + 2 * pad) / spec.resolution));
  const int height = static_cast<int>(std::ceil((ymax - ymin + 2 * pad) / spec.resolution));
  // distance from each cell center to the centerline, via a coarse bucket pass
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(width) * height, 1);
  const double hw = spec.half_width;
  const auto& w = line.waypoints();
  for (std::size_t i = 0; i < line.segment_count(); ++i) {
    const auto& a = w[i];
    const auto& b = w[(i + 1) % w.size()];
    const int c0 = std::max(0, static_cast<int>((std::min(a.x, b.x) - hw - origin.x) / spec.resolution) - 1);
    const int c1 = std::min(width - 1, static_cast<int>((std::max(a.x, b.x) + hw - origin.x) / spec.resolution) + 1);
    const int r0 = std::max(0, static_cast<int>((std::min(a.y, b.y) - hw - origin.y) / spec.resolution) - 1);
    const int r1 = std::min(height - 1, static_cast<int>((std::max(a.y, b.y) + hw - origin.y) / spec.resolution) + 1);
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len2 = ex * ex + ey * ey;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double px = origin.x + (c + 0.5) * spec.resolution;
        const double py = origin.y + (r + 0.5) * spec.resolution;
        const double t = std::clamp(((px - a.x) * ex + (py - a.y) * ey) / len2, 0.0, 1.0);
        const double dx = px - (a.x + t * ex), dy = py - (a.y + t * ey);
        if (dx * dx + dy * dy <= hw * hw) occ[static_cast<std::size_t>(r) * width + c] = 0;
      }
    }
  }
  return OccupancyGrid::from_cells(width, height, spec.resolution, origin, std::move(occ));
}

inline BuiltTrack build_track(const std::vector<Vec2>& centerline, bool closed, const TrackSpec& spec) {
  auto line = build_raceline(centerline, closed, spec);
  auto grid = build_corridor_grid(line, spec);
  return {std::move(grid), std::move(line)};
}

/// Writes a grid as binary PGM (occupied = black) plus `key: value` metadata.
inline void save_grid(const std::filesystem::path& image_path, const std::filesystem::path& meta_path,
                      const OccupancyGrid& grid) {
  {
    std::ofstream out(image_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write map image: " + image_path.string());
    out << "P5\n" << grid.width() << ' ' << grid.height() << "\n255\n";
    for (int r = grid.height() - 1; r >= 0; --r) {
      for (int c = 0; c < grid.width(); ++c) {
        out.put(static_cast<char>(grid.occupied(c, r) ? 0 : 254));
      }
    }
  }
  std::ofstream meta(meta_path);
  if (!meta) throw std::runtime_error("cannot write map metadata: " + meta_path.string());
  meta << "image: " << image_path.filename().string() << '\n'
       << "resolution: " << csv::fmt(grid.resolution()) << '\n'
       << "origin_x: " << csv::fmt(grid.origin().x) << '\n'
       << "origin_y: " << csv::fmt(grid.origin().y) << '\n'
       << "origin_theta: " << csv::fmt(grid.origin().yaw) << '\n'
       << "occupied_thresh: 0.65\n";
}

}  // namespace objrace
