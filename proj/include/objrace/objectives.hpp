#pragma once

// Objective-space coordinates of an episode: aggressiveness from relative
// raceline progress and restraint from instantaneous time-to-collision.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "objrace/sim.hpp"

namespace objrace {

struct ObjectivePoint {
  double agg = 0.0;
  double res = 0.0;

  bool operator==(const ObjectivePoint&) const = default;
};

inline double distance(const ObjectivePoint& a, const ObjectivePoint& b) {
  return std::hypot(a.agg - b.agg, a.res - b.res);
}

struct ObjectiveConfig {
  double a = 10.0;            // restraint scale
  double b = 5.0;             // restraint offset, also the TTC cap
  double epsilon = 0.01;      // minimum closing rate, m/s
  double overtake_gain = 0.1;
  double crash_gain = 0.1;
  double crash_res_penalty = 1.0;
};

/// Per-beam iTTC of one scan: r / (v cos(angle)), capped at `cap`; beams
/// that are not closing or returned nothing contribute the cap.
inline void append_ttc(const Scan& scan, double v, const ObjectiveConfig& cfg,
                       std::vector<double>& out) {
  for (std::size_t i = 0; i < scan.ranges.size(); ++i) {
    const double rate = v * std::cos(scan.angles[i]);
    double ttc = cfg.b;
    if (rate > cfg.epsilon && scan.ranges[i] < scan.max_range) ttc = std::clamp(scan.ranges[i] / rate, 0.0, cfg.b);
    out.push_back(ttc);
  }
}

/// o_res = a * (b - mean(ttc)), ttc clamped to [0, b]; 0 for no samples.
inline double compute_o_res(std::span<const double> ttc_samples, double a, double b) {
  if (ttc_samples.empty()) return 0.0;
  double sum = 0.0;
  for (double t : ttc_samples) sum += std::clamp(t, 0.0, b);
  return a * (b - sum / static_cast<double>(ttc_samples.size()));
}

struct RolloutResult {
  double s_ego_start = 0.0;
  double s_ego_end = 0.0;
  double s_opp_start = 0.0;
  double s_opp_end = 0.0;
  double ego_progress = 0.0;  // accumulated raceline progress over the episode
  double opp_progress = 0.0;
  double lead_start = 0.0;    // ego minus opponent, along the raceline
  double lead_end = 0.0;
  bool overtake = false;
  bool ego_crashed_into_opp = false;
  bool any_collision = false;
  bool ego_map_collision = false;
  bool invalid = false;
  std::vector<double> ttc_samples;
  ObjectivePoint objectives;
};

/// Aggressiveness coordinate: -(S_e - S_o), improved by 10% of its
/// magnitude after an overtake and worsened by 10% after crashing into the
/// opponent. Lower is more aggressive.
inline double compute_o_agg(const RolloutResult& r, const ObjectiveConfig& cfg = {}) {
  double agg = -(r.ego_progress - r.opp_progress);
  if (r.overtake) agg -= cfg.overtake_gain * std::abs(agg);
  if (r.ego_crashed_into_opp) agg += cfg.crash_gain * std::abs(agg);
  return agg;
}

/// Restraint coordinate including the crash penalty.
inline double compute_o_res(const RolloutResult& r, const ObjectiveConfig& cfg = {}) {
  double res = compute_o_res(r.ttc_samples, cfg.a, cfg.b);
  if (r.ego_crashed_into_opp) res += cfg.crash_res_penalty;
  return res;
}

}  // namespace objrace
