#pragma once

// Occupancy-grid maps, precomputed racelines and curvilinear (Frenet)
// coordinates. Lateral offsets are positive to the left of the raceline
// tangent.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "objrace/config.hpp"
#include "objrace/csv.hpp"

namespace objrace {

constexpr double kPi = std::numbers::pi;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

namespace detail {

// 1D squared Euclidean distance transform (Felzenszwalb & Huttenlocher).
// f holds 0 at sites and +inf elsewhere; result written back into f.
inline void edt_1d(std::span<double> f, std::vector<double>& d, std::vector<int>& v,
                   std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  d.assign(n, 0.0);
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    // z[0] is -inf, so the loop always stops at k >= 0
    double s = 0.0;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = inf;
  } else {
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      const double dq = q - v[j];
      d[q] = dq * dq + f[v[j]];
    }
  }
  std::copy(d.begin(), d.end(), f.begin());
}

}  // namespace detail

/// Occupancy grid with a precomputed Euclidean distance field (meters,
/// measured between cell centers). Row 0 is the bottom row (smallest y).
class OccupancyGrid {
 public:
  OccupancyGrid() = default;

  static OccupancyGrid from_cells(int width, int height, double resolution, Pose2 origin,
                                  std::vector<std::uint8_t> occupied) {
    if (width < 1 || height < 1) throw std::invalid_argument("grid: zero-size map");
    if (!(resolution > 0.0)) throw std::invalid_argument("grid: non-positive resolution");
    if (occupied.size() != static_cast<std::size_t>(width) * height) {
      throw std::invalid_argument("grid: cell count does not match dimensions");
    }
    OccupancyGrid g;
    g.width_ = width;
    g.height_ = height;
    g.resolution_ = resolution;
    g.origin_ = origin;
    g.cos_o_ = std::cos(origin.yaw);
    g.sin_o_ = std::sin(origin.yaw);
    g.occupied_ = std::move(occupied);
    g.compute_distance_field();
    return g;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  const Pose2& origin() const { return origin_; }

  bool occupied(int col, int row) const { return occupied_[index(col, row)] != 0; }
  /// Distance in meters from cell (col,row) to the nearest occupied cell.
  double distance(int col, int row) const { return dist_[index(col, row)]; }
  std::span<const double> distance_field() const { return dist_; }
  std::span<const std::uint8_t> occupancy() const { return occupied_; }

  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  /// World coordinates of a cell center.
  Vec2 cell_center(int col, int row) const {
    const double lx = (col + 0.5) * resolution_;
    const double ly = (row + 0.5) * resolution_;
    return {origin_.x + cos_o_ * lx - sin_o_ * ly, origin_.y + sin_o_ * lx + cos_o_ * ly};
  }

  /// Cell containing a world point; false when outside the map.
  bool cell_of(double x, double y, int& col, int& row) const {
    const double dx = x - origin_.x;
    const double dy = y - origin_.y;
    const double lx = cos_o_ * dx + sin_o_ * dy;
    const double ly = -sin_o_ * dx + cos_o_ * dy;
    const double cf = std::floor(lx / resolution_);
    const double rf = std::floor(ly / resolution_);
    if (cf < 0 || rf < 0 || cf >= width_ || rf >= height_) return false;
    col = static_cast<int>(cf);
    row = static_cast<int>(rf);
    return true;
  }

  bool contains(double x, double y) const {
    int c = 0, r = 0;
    return cell_of(x, y, c, r);
  }

  /// Distance field at a world point (nearest cell); 0 outside the map.
  double distance_at(double x, double y) const {
    int c = 0, r = 0;
    if (!cell_of(x, y, c, r)) return 0.0;
    return dist_[index(c, r)];
  }

 private:
  void compute_distance_field() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> sq(occupied_.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = occupied_[i] ? 0.0 : inf;
    std::vector<double> d, z, column;
    std::vector<int> v;
    column.resize(height_);
    for (int c = 0; c < width_; ++c) {
      for (int r = 0; r < height_; ++r) column[r] = sq[index(c, r)];
      detail::edt_1d(column, d, v, z);
      for (int r = 0; r < height_; ++r) sq[index(c, r)] = column[r];
    }
    for (int r = 0; r < height_; ++r) {
      detail::edt_1d(std::span<double>(sq.data() + index(0, r), width_), d, v, z);
    }
    dist_.resize(sq.size());
    for (std::size_t i = 0; i < sq.size(); ++i) dist_[i] = std::sqrt(sq[i]) * resolution_;
  }

  int width_ = 0;
  int height_ = 0;
  double resolution_ = 0.0;
  Pose2 origin_{};
  double cos_o_ = 1.0;
  double sin_o_ = 0.0;
  std::vector<std::uint8_t> occupied_;
  std::vector<double> dist_;
};

namespace detail {

// Reads a binary (P5) or ASCII (P2) PGM into normalized darkness values in [0,1].
inline std::vector<double> read_pgm_darkness(const std::filesystem::path& path, int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open map image: " + path.string());
  auto token = [&]() {
    std::string t;
    char ch = 0;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") {
    throw std::runtime_error("map image is not a grayscale PGM: " + path.string());
  }
  w = std::stoi(token());
  h = std::stoi(token());
  const int maxval = std::stoi(token());
  if (w <= 0 || h <= 0) throw std::invalid_argument("map image has zero size: " + path.string());
  if (maxval <= 0 || maxval > 65535) throw std::runtime_error("bad PGM maxval");
  std::vector<double> dark(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < dark.size(); ++i) {
    int value = 0;
    if (magic == "P2") {
      value = std::stoi(token());
    } else if (maxval < 256) {
      char b = 0;
      if (!in.get(b)) throw std::runtime_error("truncated PGM: " + path.string());
      value = static_cast<unsigned char>(b);
    } else {
      char b0 = 0, b1 = 0;
      if (!in.get(b0) || !in.get(b1)) throw std::runtime_error("truncated PGM: " + path.string());
      value = (static_cast<unsigned char>(b0) << 8) | static_cast<unsigned char>(b1);
    }
    dark[i] = 1.0 - static_cast<double>(value) / maxval;
  }
  return dark;
}

}  // namespace detail

/// Loads a grayscale PGM map plus its `key: value` metadata
/// (resolution, origin_x, origin_y, origin_theta, occupied_thresh).
inline OccupancyGrid load_grid(const std::filesystem::path& image_path,
                               const std::filesystem::path& meta_path) {
  const auto meta = KeyValueConfig::load(meta_path);
  const double resolution = meta.number("resolution");
  if (!(resolution > 0.0)) throw std::invalid_argument("map metadata: non-positive resolution");
  const double thresh = meta.number_or("occupied_thresh", 0.65);
  if (thresh < 0.0 || thresh > 1.0) {
    throw std::invalid_argument("map metadata: occupied_thresh outside [0,1]");
  }
  const Pose2 origin{meta.number_or("origin_x", 0.0), meta.number_or("origin_y", 0.0),
                     meta.number_or("origin_theta", 0.0)};
  int w = 0, h = 0;
  const auto dark = detail::read_pgm_darkness(image_path, w, h);
  std::vector<std::uint8_t> occ(dark.size());
  // image rows run top to bottom; grid row 0 is the bottom
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double v = dark[static_cast<std::size_t>(h - 1 - r) * w + c];
      occ[static_cast<std::size_t>(r) * w + c] = v >= thresh ? 1 : 0;
    }
  }
  return OccupancyGrid::from_cells(w, h, resolution, origin, std::move(occ));
}

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
};

struct FrenetPose {
  double s = 0.0;
  double d = 0.0;
};

/// Piecewise-linear global raceline with cumulative arc length.
class Raceline {
 public:
  Raceline() = default;

  Raceline(std::vector<Waypoint> waypoints, bool closed)
      : waypoints_(std::move(waypoints)), closed_(closed) {
    if (waypoints_.size() < 2) throw std::invalid_argument("raceline: need at least 2 waypoints");
    for (const auto& w : waypoints_) {
      if (!std::isfinite(w.x) || !std::isfinite(w.y) || !std::isfinite(w.theta) ||
          !std::isfinite(w.v)) {
        throw std::invalid_argument("raceline: non-finite waypoint value");
      }
      if (w.v < 0.0) throw std::invalid_argument("raceline: negative velocity");
    }
    for (auto& w : waypoints_) w.theta = wrap_angle(w.theta);
    cum_s_.resize(waypoints_.size());
    cum_s_[0] = 0.0;
    for (std::size_t i = 1; i < waypoints_.size(); ++i) {
      const double len = std::hypot(waypoints_[i].x - waypoints_[i - 1].x,
                                    waypoints_[i].y - waypoints_[i - 1].y);
      if (!(len > 0.0)) throw std::invalid_argument("raceline: repeated waypoint");
      cum_s_[i] = cum_s_[i - 1] + len;
    }
    total_ = cum_s_.back();
    if (closed_) {
      const double len = std::hypot(waypoints_.front().x - waypoints_.back().x,
                                    waypoints_.front().y - waypoints_.back().y);
      if (!(len > 0.0)) {
        throw std::invalid_argument("raceline: closed loop repeats its first waypoint");
      }
      total_ += len;
    }
  }

  const std::vector<Waypoint>& waypoints() const { return waypoints_; }
  const std::vector<double>& cum_s() const { return cum_s_; }
  double total_length() const { return total_; }
  bool closed() const { return closed_; }
  std::size_t segment_count() const {
    return closed_ ? waypoints_.size() : waypoints_.size() - 1;
  }

  /// Normalizes s into [0, total_length) on closed racelines; clamps on open ones.
  double normalize_s(double s) const {
    if (closed_) {
      s = std::fmod(s, total_);
      if (s < 0.0) s += total_;
      if (s >= total_) s = 0.0;
      return s;
    }
    return std::clamp(s, 0.0, total_);
  }

  /// Index of the segment containing arc position s (already normalized).
  std::size_t segment_at(double s) const {
    auto it = std::upper_bound(cum_s_.begin(), cum_s_.end(), s);
    std::size_t i = it == cum_s_.begin() ? 0 : static_cast<std::size_t>(it - cum_s_.begin()) - 1;
    return std::min(i, segment_count() - 1);
  }

  double segment_start(std::size_t i) const { return cum_s_[i]; }
  double segment_length(std::size_t i) const {
    return (i + 1 < cum_s_.size() ? cum_s_[i + 1] : total_) - cum_s_[i];
  }
  const Waypoint& segment_a(std::size_t i) const { return waypoints_[i]; }
  const Waypoint& segment_b(std::size_t i) const {
    return waypoints_[(i + 1) % waypoints_.size()];
  }

  /// Linearly interpolated waypoint at arc position s.
  Waypoint at(double s) const {
    s = normalize_s(s);
    const auto i = segment_at(s);
    const auto& a = segment_a(i);
    const auto& b = segment_b(i);
    const double t = std::clamp((s - cum_s_[i]) / segment_length(i), 0.0, 1.0);
    return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
            wrap_angle(a.theta + t * wrap_angle(b.theta - a.theta)), a.v + t * (b.v - a.v)};
  }

  /// Heading of the piecewise-linear geometry at s.
  double tangent_at(double s) const {
    const auto i = segment_at(normalize_s(s));
    const auto& a = segment_a(i);
    const auto& b = segment_b(i);
    return std::atan2(b.y - a.y, b.x - a.x);
  }

 private:
  std::vector<Waypoint> waypoints_;
  std::vector<double> cum_s_;
  double total_ = 0.0;
  bool closed_ = false;
};

/// Reads `x,y,theta,v` rows (header required).
inline Raceline load_raceline(const std::filesystem::path& csv_path, bool closed) {
  const auto table = csv::read_file(csv_path);
  const int cx = table.require_column("x");
  const int cy = table.require_column("y");
  const int ct = table.require_column("theta");
  const int cv = table.require_column("v");
  std::vector<Waypoint> wps;
  wps.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const auto where = csv_path.string() + " row " + std::to_string(i + 1);
    wps.push_back({csv::to_double(row[cx], where), csv::to_double(row[cy], where),
                   csv::to_double(row[ct], where), csv::to_double(row[cv], where)});
  }
  return Raceline(std::move(wps), closed);
}

inline void save_raceline(const std::filesystem::path& csv_path, const Raceline& line) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write raceline: " + csv_path.string());
  out << "x,y,theta,v\n";
  for (const auto& w : line.waypoints()) {
    csv::write_row(out, {csv::fmt(w.x), csv::fmt(w.y), csv::fmt(w.theta), csv::fmt(w.v)});
  }
}

namespace detail {

struct SegmentHit {
  double dist2;
  double s;
  double d;
};

inline SegmentHit closest_on_segment(const Raceline& line, std::size_t i, double px, double py) {
  const auto& a = line.segment_a(i);
  const auto& b = line.segment_b(i);
  const double ex = b.x - a.x;
  const double ey = b.y - a.y;
  const double len2 = ex * ex + ey * ey;
  double t = ((px - a.x) * ex + (py - a.y) * ey) / len2;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = a.x + t * ex;
  const double qy = a.y + t * ey;
  const double dx = px - qx;
  const double dy = py - qy;
  const double dist2 = dx * dx + dy * dy;
  const double cross = ex * (py - a.y) - ey * (px - a.x);
  const double dist = std::sqrt(dist2);
  const double d = cross >= 0.0 ? dist : -dist;
  return {dist2, line.normalize_s(line.segment_start(i) + t * line.segment_length(i)), d};
}

inline bool better(const SegmentHit& h, const SegmentHit& best) {
  return h.dist2 < best.dist2 || (h.dist2 == best.dist2 && h.s < best.s);
}

}  // namespace detail

/// Closest point on the raceline (global search); ties go to the smaller s.
inline FrenetPose project(const Raceline& line, double x, double y) {
  detail::SegmentHit best{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  for (std::size_t i = 0; i < line.segment_count(); ++i) {
    const auto h = detail::closest_on_segment(line, i, x, y);
    if (detail::better(h, best)) best = h;
  }
  return {best.s, best.d};
}

/// Projection restricted to segments within `window` meters of `s_hint`.
/// Used on hot paths where the caller already knows roughly where it is.
inline FrenetPose project_near(const Raceline& line, double x, double y, double s_hint,
                               double window) {
  const std::size_t nseg = line.segment_count();
  if (window * 2.0 >= line.total_length()) return project(line, x, y);
  const double lo = s_hint - window;
  const double hi = s_hint + window;
  std::size_t i = line.segment_at(line.normalize_s(lo));
  detail::SegmentHit best{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  double covered = -(line.normalize_s(lo) - line.segment_start(i));
  for (std::size_t k = 0; k < nseg; ++k) {
    const auto h = detail::closest_on_segment(line, i, x, y);
    if (detail::better(h, best)) best = h;
    covered += line.segment_length(i);
    if (covered >= hi - lo) break;
    ++i;
    if (i >= nseg) {
      if (!line.closed()) break;
      i = 0;
    }
  }
  return {best.s, best.d};
}

/// Signed progress from s_from to s_to. On closed racelines the result is
/// wrapped into [-L/2, L/2].
inline double progress_delta(const Raceline& line, double s_from, double s_to) {
  double raw = s_to - s_from;
  if (line.closed()) {
    const double L = line.total_length();
    if (raw < -L / 2.0) raw += L;
    if (raw > L / 2.0) raw -= L;
  }
  return raw;
}

}  // namespace objrace
