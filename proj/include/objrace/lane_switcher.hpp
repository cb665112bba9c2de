#pragma once

// Rule-based baseline: follows the raceline and switches to the nearest
// free lateral lane when its current lane is blocked ahead.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "objrace/planner.hpp"
#include "objrace/sim.hpp"
#include "objrace/track.hpp"

namespace objrace {

struct LaneSwitcherConfig {
  std::vector<double> lane_offsets{-0.4, 0.0, 0.4};
  double block_lookahead = 2.5;
  double lane_half_width = 0.2;  // half the lane spacing: lanes partition the road
  double min_switch_interval = 0.5;
  double track_length = 4.0;
  int track_samples = 40;
  double speed_scale = 1.0;
  PurePursuitConfig pursuit{};
};

/// Lane occupancy from scan hits: lane l is blocked when a hit lies within
/// `block_lookahead` ahead along the raceline and within `lane_half_width`
/// of the lane's offset.
inline std::vector<bool> blocked_lanes(const VehicleState& self, const Scan& scan, const Raceline& line,
                                       double s_self, const LaneSwitcherConfig& cfg,
                                       double max_range) {
  std::vector<bool> blocked(cfg.lane_offsets.size(), false);
  for (std::size_t i = 0; i < scan.ranges.size(); ++i) {
    const double r = scan.ranges[i];
    if (r >= max_range) continue;
    const double a = self.yaw + scan.angles[i];
    const double hx = self.x + r * std::cos(a), hy = self.y + r * std::sin(a);
    const auto f = project_near(line, hx, hy, s_self, cfg.block_lookahead + 2.0);
    const double ahead = progress_delta(line, s_self, f.s);
    if (ahead <= 0.0 || ahead > cfg.block_lookahead) continue;
    for (std::size_t l = 0; l < cfg.lane_offsets.size(); ++l) {
      if (std::abs(f.d - cfg.lane_offsets[l]) < cfg.lane_half_width) blocked[l] = true;
    }
  }
  return blocked;
}

class LaneSwitcher {
 public:
  LaneSwitcher() = default;
  LaneSwitcher(LaneSwitcherConfig cfg, VehicleParams vehicle, LidarConfig lidar)
      : cfg_(std::move(cfg)), vehicle_(vehicle), lidar_(lidar) {
    lane_ = default_lane();
  }

  std::size_t lane() const { return lane_; }
  int switches() const { return switches_; }
  const LaneSwitcherConfig& config() const { return cfg_; }

  /// One planning cycle at time t. Returns the trajectory to track.
  const Trajectory& plan(const VehicleState& self, const VehicleState* other, const Raceline& line,
                         const OccupancyGrid& grid, double t) {
    const auto f = project(line, self.x, self.y);
    OrientedRect rect;
    if (other) rect = footprint(*other, vehicle_);
    const auto scan = ray_march(self.pose(), grid, other ? &rect : nullptr, lidar_);
    const auto blocked = blocked_lanes(self, scan, line, f.s, cfg_, lidar_.max_range);
    braking_ = false;
    const bool may_switch = !last_switch_ || t - *last_switch_ >= cfg_.min_switch_interval - 1e-9;
    const auto home = default_lane();
    if (lane_ != home && !blocked[home] && !blocked[lane_] && may_switch) {
      lane_ = home;
      last_switch_ = t;
      ++switches_;
    } else if (blocked[lane_]) {
      std::optional<std::size_t> best;
      for (std::size_t l = 0; l < blocked.size(); ++l) {
        if (blocked[l]) continue;
        const double dist = std::abs(cfg_.lane_offsets[l] - cfg_.lane_offsets[lane_]);
        if (!best || dist < std::abs(cfg_.lane_offsets[*best] - cfg_.lane_offsets[lane_])) best = l;
      }
      if (!best) {
        braking_ = true;
      } else if (may_switch) {
        lane_ = *best;
        last_switch_ = t;
        ++switches_;
      }
    }
    if (braking_) {
      traj_ = emergency_brake(self, vehicle_, cfg_.track_length, cfg_.track_samples);
      return traj_;
    }
    traj_ = lane_trajectory(line, f.s, cfg_.lane_offsets[lane_]);
    return traj_;
  }

  Control track(const VehicleState& state) const {
    if (traj_.points.empty()) return {0.0, 0.0};
    return pure_pursuit(state, traj_, vehicle_, cfg_.pursuit);
  }

 private:
  std::size_t default_lane() const {
    std::size_t best = 0;
    for (std::size_t l = 0; l < cfg_.lane_offsets.size(); ++l) {
      if (std::abs(cfg_.lane_offsets[l]) < std::abs(cfg_.lane_offsets[best])) best = l;
    }
    return best;
  }

  Trajectory lane_trajectory(const Raceline& line, double s0, double offset) const {
    Trajectory t;
    t.goal_index = static_cast<int>(lane_);
    t.arc_length = cfg_.track_length;
    const double ds = cfg_.track_length / cfg_.track_samples;
    double time = 0.0;
    for (int i = 0; i <= cfg_.track_samples; ++i) {
      const auto w = line.at(s0 + i * ds);
      const double v = w.v * cfg_.speed_scale;
      if (i > 0) time += ds / std::max(0.5, 0.5 * (v + t.points.back().v));
      t.points.push_back({w.x - offset * std::sin(w.theta), w.y + offset * std::cos(w.theta), w.theta,
                          0.0, v, i * ds, time});
    }
    return t;
  }

  LaneSwitcherConfig cfg_{};
  VehicleParams vehicle_{};
  LidarConfig lidar_{};
  std::size_t lane_ = 0;
  std::optional<double> last_switch_;
  int switches_ = 0;
  bool braking_ = false;
  Trajectory traj_;
};

}  // namespace objrace
