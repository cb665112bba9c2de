#pragma once

// Sampling-based lattice planner: goals around the raceline, cubic-spiral
// candidates, seven weighted costs, lowest-cost selection, Pure Pursuit.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "objrace/config.hpp"
#include "objrace/csv.hpp"
#include "objrace/sim.hpp"
#include "objrace/spiral.hpp"
#include "objrace/track.hpp"

namespace objrace {

/// Planner weight vector w = [gamma, p_mc, p_al, p_hys, p_do, p_co, p_v1, p_v2].
struct AgentParams {
  static constexpr int kSize = 8;
  static constexpr double kGammaMin = 0.6, kGammaMax = 1.0;
  static constexpr double kWeightMin = 1.0, kWeightMax = 10.0;
  static constexpr std::array<const char*, kSize> kNames = {"gamma", "p_mc", "p_al", "p_hys",
                                                           "p_do",  "p_co", "p_v1", "p_v2"};

  double gamma = 1.0;
  std::array<double, 7> weights{1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};

  AgentParams() = default;
  AgentParams(double g, std::array<double, 7> w) : gamma(g), weights(w) { validate(); }

  static AgentParams from_array(const std::array<double, kSize>& v) {
    return AgentParams(v[0], {v[1], v[2], v[3], v[4], v[5], v[6], v[7]});
  }

  std::array<double, kSize> to_array() const {
    return {gamma,      weights[0], weights[1], weights[2],
            weights[3], weights[4], weights[5], weights[6]};
  }

  static double lower(int i) { return i == 0 ? kGammaMin : kWeightMin; }
  static double upper(int i) { return i == 0 ? kGammaMax : kWeightMax; }

  void validate() const {
    const auto v = to_array();
    for (int i = 0; i < kSize; ++i) {
      if (!std::isfinite(v[i]) || v[i] < lower(i) || v[i] > upper(i)) {
        throw std::invalid_argument(std::string("agent parameter out of bounds: ") + kNames[i]);
      }
    }
  }

  bool operator==(const AgentParams&) const = default;
};

inline AgentParams load_agent_params(const KeyValueConfig& cfg) {
  std::array<double, AgentParams::kSize> v{};
  for (int i = 0; i < AgentParams::kSize; ++i) v[i] = cfg.number(AgentParams::kNames[i]);
  return AgentParams::from_array(v);
}

inline void save_agent_params(std::ostream& out, const AgentParams& p) {
  const auto v = p.to_array();
  for (int i = 0; i < AgentParams::kSize; ++i) {
    out << AgentParams::kNames[i] << ": " << csv::fmt(v[i]) << '\n';
  }
}

enum CostIndex : int { kMc = 0, kAl, kHys, kDo, kCo, kV1, kV2, kCostCount };

struct CostVector {
  std::array<double, kCostCount> c{};

  static CostVector infinite() {
    CostVector v;
    v.c.fill(std::numeric_limits<double>::infinity());
    return v;
  }
  bool finite() const {
    return std::all_of(c.begin(), c.end(), [](double x) { return std::isfinite(x); });
  }
  double weighted(const AgentParams& p) const {
    double total = 0.0;
    for (int j = 0; j < kCostCount; ++j) total += p.weights[j] * c[j];
    return total;
  }
};

struct TrajPoint {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double kappa = 0.0;
  double v = 0.0;
  double s = 0.0;
  double t = 0.0;
};

struct Trajectory {
  std::vector<TrajPoint> points;
  double arc_length = 0.0;
  int goal_index = -1;
  double velocity_scale = 1.0;
};

struct PurePursuitConfig {
  double k_v = 0.3;
  double min_lookahead = 0.6;
  double max_lookahead = 2.5;
  double k_p = 4.0;
};

struct PlannerConfig {
  int n = 7;
  int m = 3;
  double lookahead = 3.0;
  double lateral_span = 0.8;
  int samples = 30;
  double replan_period = 0.1;
  double collision_scale = 1.0;  // d_scale of the opponent cost
  SpiralSolveOptions spiral{};
  PurePursuitConfig pursuit{};
};

struct Goal {
  Pose2 pose;
  double s = 0.0;
  double offset = 0.0;
  int lateral_index = 0;
  int scale_index = 0;
  double velocity_scale = 1.0;
};

inline double lattice_velocity_scale(int j, int m) {
  return m == 1 ? 1.0 : 0.5 + 0.5 * static_cast<double>(j) / (m - 1);
}

inline double lattice_offset(int i, int n, double span) {
  return n == 1 ? 0.0 : -span + 2.0 * span * static_cast<double>(i) / (n - 1);
}

/// n x m goals at s_ego + lookahead, indexed lateral-major (i * m + j).
inline std::vector<Goal> sample_goals(double s_ego, const Raceline& line, int n, int m,
                                      double lookahead, double lateral_span) {
  if (n < 1 || m < 1) throw std::invalid_argument("sample_goals: n and m must be >= 1");
  const double s_goal = s_ego + lookahead;
  if (!line.closed() && s_goal > line.total_length()) {
    throw std::out_of_range("sample_goals: lookahead beyond the end of an open raceline");
  }
  const auto ref = line.at(s_goal);
  const double nx = -std::sin(ref.theta), ny = std::cos(ref.theta);
  std::vector<Goal> goals;
  goals.reserve(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    const double off = lattice_offset(i, n, lateral_span);
    for (int j = 0; j < m; ++j) {
      goals.push_back({{ref.x + off * nx, ref.y + off * ny, ref.theta},
                       line.normalize_s(s_goal),
                       off,
                       i,
                       j,
                       lattice_velocity_scale(j, m)});
    }
  }
  return goals;
}

inline std::vector<Goal> sample_goals(const VehicleState& ego, const Raceline& line, int n, int m,
                                      double lookahead, double lateral_span) {
  return sample_goals(project(line, ego.x, ego.y).s, line, n, m, lookahead, lateral_span);
}

/// Context needed to score candidates.
struct CostContext {
  const Raceline* raceline = nullptr;
  const OccupancyGrid* grid = nullptr;
  const VehicleState* opp = nullptr;  // null: no opponent
  const VehicleParams* vehicle = nullptr;
  double collision_scale = 1.0;
};

inline double curvature_reference(const VehicleParams& p) {
  return std::tan(p.max_steer) / p.wheelbase();
}

namespace detail {

// Position on `traj` at arc s (clamped to its ends).
inline Vec2 traj_point_at(const Trajectory& traj, double s) {
  const auto& pts = traj.points;
  if (s <= pts.front().s) return {pts.front().x, pts.front().y};
  if (s >= pts.back().s) return {pts.back().x, pts.back().y};
  auto it = std::lower_bound(pts.begin(), pts.end(), s,
                             [](const TrajPoint& p, double v) { return p.s < v; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double t = (s - a.s) / (b.s - a.s);
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

inline std::size_t nearest_index(const Trajectory& traj, double x, double y) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    const double d = std::hypot(traj.points[i].x - x, traj.points[i].y - y);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

/// Hysteresis cost: mean distance to the previous selection at matched arc
/// length (the previous trajectory is re-anchored at the new start point).
inline double hysteresis_cost(const Trajectory& traj, const Trajectory* prev) {
  if (!prev || prev->points.size() < 2 || traj.points.empty()) return 0.0;
  const auto j = detail::nearest_index(*prev, traj.points.front().x, traj.points.front().y);
  const double s0 = prev->points[j].s;
  double acc = 0.0;
  for (const auto& p : traj.points) {
    const auto q = detail::traj_point_at(*prev, s0 + p.s);
    acc += std::hypot(p.x - q.x, p.y - q.y);
  }
  return acc / traj.points.size();
}

/// Opponent cost: closing speed weighted by exp(-distance / scale), with
/// the opponent predicted at constant velocity.
inline double opponent_cost(const Trajectory& traj, const VehicleState& opp, double scale) {
  const double ux = opp.v * std::cos(opp.yaw + opp.slip);
  const double uy = opp.v * std::sin(opp.yaw + opp.slip);
  double acc = 0.0;
  for (const auto& p : traj.points) {
    const double ox = opp.x + ux * p.t;
    const double oy = opp.y + uy * p.t;
    const double rx = ox - p.x, ry = oy - p.y;
    const double dist = std::hypot(rx, ry);
    if (dist < 1e-9) {
      acc += std::max(0.0, std::hypot(p.v * std::cos(p.theta) - ux, p.v * std::sin(p.theta) - uy));
      continue;
    }
    const double closing = ((p.v * std::cos(p.theta) - ux) * rx + (p.v * std::sin(p.theta) - uy) * ry) / dist;
    acc += std::max(0.0, closing) * std::exp(-dist / scale);
  }
  return acc;
}

/// Seven-term cost vector of one candidate. `lateral` holds |d| of every
/// trajectory point (may be empty, then it is computed by projection).
inline CostVector evaluate_costs(const Trajectory& traj, const Trajectory* prev,
                                 const CostContext& ctx, const std::vector<double>* lateral = nullptr) {
  const auto& vp = *ctx.vehicle;
  const double clearance = vp.width / 2.0;
  for (const auto& p : traj.points) {
    if (ctx.grid->distance_at(p.x, p.y) < clearance) return CostVector::infinite();
  }
  CostVector cv;
  double max_k = 0.0, sum_v = 0.0, sum_v2k = 0.0, sum_d = 0.0;
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    const auto& p = traj.points[i];
    max_k = std::max(max_k, std::abs(p.kappa));
    sum_v += p.v;
    sum_v2k += p.v * p.v * std::abs(p.kappa);
    sum_d += lateral ? (*lateral)[i] : std::abs(project(*ctx.raceline, p.x, p.y).d);
  }
  const double n = static_cast<double>(traj.points.size());
  cv.c[kMc] = max_k;
  cv.c[kAl] = traj.arc_length;
  cv.c[kHys] = hysteresis_cost(traj, prev);
  cv.c[kDo] = sum_d / n;
  cv.c[kCo] = ctx.opp ? opponent_cost(traj, *ctx.opp, ctx.collision_scale) : 0.0;
  cv.c[kV1] = std::max(0.0, (vp.v_max - sum_v / n) / vp.v_max);
  cv.c[kV2] = (sum_v2k / n) / (vp.v_max * vp.v_max * curvature_reference(vp));
  return cv;
}

struct Candidate {
  Trajectory traj;
  CostVector cost;
};

/// Straight trajectory along the current heading, decelerating at max_accel.
inline Trajectory emergency_brake(const VehicleState& s, const VehicleParams& p, double length,
                                  int samples) {
  Trajectory t;
  t.goal_index = -1;
  t.velocity_scale = 0.0;
  t.arc_length = length;
  const double ds = length / samples;
  double time = 0.0;
  for (int i = 0; i <= samples; ++i) {
    const double d = i * ds;
    const double v = std::sqrt(std::max(0.0, s.v * s.v - 2.0 * p.max_accel * d));
    if (i > 0) time += ds / std::max(0.5 * (v + t.points.back().v), 0.1);
    t.points.push_back({s.x + d * std::cos(s.yaw), s.y + d * std::sin(s.yaw), s.yaw, 0.0, v, d, time});
  }
  return t;
}

/// Index of the lowest weighted cost among finite candidates, or -1 when
/// every candidate is infeasible. Ties go to the lower index.
inline int select_index(const AgentParams& params, const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("select_trajectory: no candidates");
  int best = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (!candidates[k].cost.finite()) continue;
    const double c = candidates[k].cost.weighted(params);
    if (best < 0 || c < best_cost) {
      best = static_cast<int>(k);
      best_cost = c;
    }
  }
  return best;
}

inline Trajectory select_trajectory(const AgentParams& params, const std::vector<Candidate>& candidates,
                                    const VehicleState& state, const VehicleParams& vp,
                                    double brake_length = 3.0, int samples = 30) {
  const int k = select_index(params, candidates);
  if (k < 0) return emergency_brake(state, vp, brake_length, samples);
  return candidates[k].traj;
}

/// Adaptive-lookahead Pure Pursuit on the vehicle's reference point.
inline Control pure_pursuit(const VehicleState& state, const Trajectory& traj,
                            const VehicleParams& params, const PurePursuitConfig& cfg = {}) {
  if (traj.points.empty()) throw std::invalid_argument("pure_pursuit: empty trajectory");
  const double ld = std::clamp(cfg.k_v * state.v, cfg.min_lookahead, cfg.max_lookahead);
  const auto near = detail::nearest_index(traj, state.x, state.y);
  std::size_t target = traj.points.size() - 1;
  for (std::size_t i = near; i < traj.points.size(); ++i) {
    if (std::hypot(traj.points[i].x - state.x, traj.points[i].y - state.y) >= ld) {
      target = i;
      break;
    }
  }
  const auto& tp = traj.points[target];
  const double alpha = wrap_angle(std::atan2(tp.y - state.y, tp.x - state.x) - state.yaw);
  const double curvature = 2.0 * std::sin(alpha) / ld;
  Control c;
  c.steer_target = std::atan(params.wheelbase() * curvature);
  c.accel = std::clamp(cfg.k_p * (tp.v - state.v), -params.max_accel, params.max_accel);
  return c;
}

/// One planning agent: lattice generation, scoring and selection with the
/// previous selection kept for the hysteresis cost.
class LatticePlanner {
 public:
  LatticePlanner() = default;
  LatticePlanner(AgentParams params, PlannerConfig cfg, VehicleParams vehicle)
      : params_(params), cfg_(cfg), vehicle_(vehicle), warm_(cfg.n) {}

  const AgentParams& params() const { return params_; }
  void set_params(const AgentParams& p) { params_ = p; }
  const PlannerConfig& config() const { return cfg_; }
  const std::optional<Trajectory>& previous() const { return prev_; }

  /// Builds all n x m candidates for the current state.
  std::vector<Candidate> candidates(const VehicleState& ego, const VehicleState* opp,
                                    const Raceline& line, const OccupancyGrid& grid) {
    if (warm_.size() != static_cast<std::size_t>(cfg_.n)) warm_.assign(cfg_.n, std::nullopt);
    const double s_ego = locate(ego, line);
    const auto goals = sample_goals(s_ego, line, cfg_.n, cfg_.m, cfg_.lookahead, cfg_.lateral_span);
    const SpiralStart start{ego.x, ego.y, ego.yaw,
                            std::tan(ego.steer) / vehicle_.wheelbase()};
    const CostContext ctx{&line, &grid, opp, &vehicle_, cfg_.collision_scale};
    const Trajectory* prev = prev_ ? &*prev_ : nullptr;

    std::vector<Candidate> out;
    out.reserve(goals.size());
    std::vector<double> base_v(cfg_.samples + 1), lateral(cfg_.samples + 1);
    for (int i = 0; i < cfg_.n; ++i) {
      const auto& g0 = goals[static_cast<std::size_t>(i) * cfg_.m];
      auto sol = solve_spiral(start, g0.pose, cfg_.spiral, warm_[i]);
      if (!sol && warm_[i]) sol = solve_spiral(start, g0.pose, cfg_.spiral);
      if (!sol) {
        warm_[i].reset();
        continue;
      }
      warm_[i] = sol->knots;
      const auto pts = sample_spiral(start, sol->coeffs, cfg_.samples);
      for (std::size_t k = 0; k < pts.size(); ++k) {
        const auto f = project_near(line, pts[k].x, pts[k].y, s_ego + pts[k].s, 2.0);
        base_v[k] = line.at(f.s).v;
        lateral[k] = std::abs(f.d);
      }
      for (int j = 0; j < cfg_.m; ++j) {
        const auto& g = goals[static_cast<std::size_t>(i) * cfg_.m + j];
        Candidate c;
        c.traj.goal_index = i * cfg_.m + j;
        c.traj.velocity_scale = g.velocity_scale;
        c.traj.arc_length = sol->coeffs.length;
        c.traj.points.resize(pts.size());
        double time = 0.0;
        for (std::size_t k = 0; k < pts.size(); ++k) {
          const double v = base_v[k] * g.velocity_scale * params_.gamma;
          if (k > 0) {
            const double vavg = 0.5 * (v + c.traj.points[k - 1].v);
            time += (pts[k].s - pts[k - 1].s) / std::max(vavg, 0.5);
          }
          c.traj.points[k] = {pts[k].x, pts[k].y, pts[k].theta, pts[k].kappa, v, pts[k].s, time};
        }
        c.cost = evaluate_costs(c.traj, prev, ctx, &lateral);
        out.push_back(std::move(c));
      }
    }
    return out;
  }

  /// Plans and stores the selected trajectory.
  const Trajectory& plan(const VehicleState& ego, const VehicleState* opp, const Raceline& line,
                         const OccupancyGrid& grid) {
    const auto cands = candidates(ego, opp, line, grid);
    const int k = cands.empty() ? -1 : select_index(params_, cands);
    if (k < 0) {
      prev_ = emergency_brake(ego, vehicle_, cfg_.lookahead, cfg_.samples);
    } else {
      prev_ = cands[k].traj;
    }
    return *prev_;
  }

  Control track(const VehicleState& state) const {
    if (!prev_) return {0.0, 0.0};
    return pure_pursuit(state, *prev_, vehicle_, cfg_.pursuit);
  }

  void reset() {
    prev_.reset();
    s_hint_.reset();
    for (auto& w : warm_) w.reset();
  }

 private:
  double locate(const VehicleState& ego, const Raceline& line) {
    FrenetPose f;
    if (s_hint_) {
      f = project_near(line, ego.x, ego.y, *s_hint_, 3.0);
      // fall back to a global search when the hint window looks wrong
      if (std::abs(f.d) > 2.0) f = project(line, ego.x, ego.y);
    } else {
      f = project(line, ego.x, ego.y);
    }
    s_hint_ = f.s;
    return f.s;
  }

  AgentParams params_{};
  PlannerConfig cfg_{};
  VehicleParams vehicle_{};
  std::optional<Trajectory> prev_;
  std::optional<double> s_hint_;
  std::vector<std::optional<SpiralKnots>> warm_;
};

}  // namespace objrace
