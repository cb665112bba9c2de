#pragma once

// Deterministic two-vehicle simulation: single-track dynamics with side
// slip (kinematic below v_switch), ray-marched LiDAR and collision checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "objrace/config.hpp"
#include "objrace/track.hpp"

namespace objrace {

constexpr double kGravity = 9.81;

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double steer = 0.0;
  double v = 0.0;
  double yaw_rate = 0.0;
  double slip = 0.0;

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(yaw) && std::isfinite(steer) &&
           std::isfinite(v) && std::isfinite(yaw_rate) && std::isfinite(slip);
  }
  Pose2 pose() const { return {x, y, yaw}; }
};

/// Defaults are the 1/10th-scale car of the common racing simulator.
struct VehicleParams {
  double lf = 0.15875;
  double lr = 0.17145;
  double mass = 3.74;
  double yaw_inertia = 0.04712;
  double cornering_stiffness_front = 4.718;
  double cornering_stiffness_rear = 5.4562;
  double friction_mu = 1.0489;
  double cg_height = 0.074;
  double max_steer = 0.4189;
  double max_steer_rate = 3.2;
  double max_accel = 9.51;
  double v_max = 8.0;
  double v_switch = 0.5;
  double length = 0.58;
  double width = 0.31;

  double wheelbase() const { return lf + lr; }

  void validate() const {
    const double vals[] = {lf,        lr,         mass,           yaw_inertia,
                           cornering_stiffness_front,  cornering_stiffness_rear,
                           friction_mu, cg_height, max_steer,    max_steer_rate,
                           max_accel, v_max,      v_switch,       length, width};
    for (double v : vals) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("vehicle parameters must be finite and positive");
      }
    }
  }
};

struct Control {
  double steer_target = 0.0;
  double accel = 0.0;
};

struct LidarConfig {
  int beams = 108;
  double fov = 270.0 * kPi / 180.0;
  double max_range = 10.0;

  double beam_angle(int i) const {
    if (beams == 1) return 0.0;
    return -fov / 2.0 + fov * static_cast<double>(i) / (beams - 1);
  }
};

struct Scan {
  std::vector<double> angles;
  std::vector<double> ranges;
  double max_range = std::numeric_limits<double>::infinity();  // ranges at this value saw nothing
  bool out_of_map = false;
};

enum class DynamicsModel { automatic, kinematic, dynamic };

namespace detail {

struct StateDeriv {
  double x, y, yaw, steer, v, yaw_rate, slip;
};

inline StateDeriv derivative(const VehicleState& s, double steer_vel, double accel,
                             const VehicleParams& p, bool kinematic) {
  const double L = p.wheelbase();
  if (kinematic) {
    const double beta = std::atan(p.lr * std::tan(s.steer) / L);
    return {s.v * std::cos(s.yaw + beta),
            s.v * std::sin(s.yaw + beta),
            s.v * std::tan(s.steer) / L,
            steer_vel,
            accel,
            0.0,
            0.0};
  }
  const double mu = p.friction_mu, m = p.mass, I = p.yaw_inertia, h = p.cg_height;
  const double lf = p.lf, lr = p.lr, csf = p.cornering_stiffness_front,
               csr = p.cornering_stiffness_rear;
  const double front = csf * (kGravity * lr - accel * h);
  const double rear = csr * (kGravity * lf + accel * h);
  const double v = s.v;
  const double yaw_acc = -mu * m / (v * I * L) * (lf * lf * front + lr * lr * rear) * s.yaw_rate +
                         mu * m / (I * L) * (lr * rear - lf * front) * s.slip +
                         mu * m / (I * L) * lf * front * s.steer;
  const double slip_rate = (mu / (v * v * L) * (rear * lr - front * lf) - 1.0) * s.yaw_rate -
                           mu / (v * L) * (rear + front) * s.slip + mu / (v * L) * front * s.steer;
  return {v * std::cos(s.slip + s.yaw), v * std::sin(s.slip + s.yaw), s.yaw_rate, steer_vel,
          accel, yaw_acc, slip_rate};
}

inline VehicleState add(const VehicleState& s, const StateDeriv& d, double h) {
  return {s.x + h * d.x,         s.y + h * d.y, s.yaw + h * d.yaw, s.steer + h * d.steer,
          s.v + h * d.v,         s.yaw_rate + h * d.yaw_rate, s.slip + h * d.slip};
}

}  // namespace detail

/// Advances one vehicle by dt with RK4 (internal sub-steps of at most 5 ms).
inline VehicleState step_dynamics(const VehicleState& state, const Control& ctrl,
                                  const VehicleParams& params, double dt,
                                  DynamicsModel model = DynamicsModel::automatic) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_dynamics: dt must be positive");
  const double L = params.wheelbase();
  const int substeps = std::max(1, static_cast<int>(std::ceil(dt / 0.005 - 1e-9)));
  const double h = dt / substeps;

  const double target = std::clamp(ctrl.steer_target, -params.max_steer, params.max_steer);
  const double steer_vel =
      std::clamp((target - state.steer) / dt, -params.max_steer_rate, params.max_steer_rate);

  VehicleState s = state;
  for (int k = 0; k < substeps; ++k) {
    double accel = std::clamp(ctrl.accel, -params.max_accel, params.max_accel);
    const double a_lat = s.v * s.yaw_rate;
    const double grip = params.friction_mu * kGravity;
    const double a_long = std::sqrt(std::max(0.0, grip * grip - a_lat * a_lat));
    accel = std::clamp(accel, -a_long, a_long);
    if (s.v <= 0.0 && accel < 0.0) accel = 0.0;
    if (s.v >= params.v_max && accel > 0.0) accel = 0.0;

    const bool kinematic = model == DynamicsModel::kinematic ||
                           (model == DynamicsModel::automatic && s.v < params.v_switch);
    const auto k1 = detail::derivative(s, steer_vel, accel, params, kinematic);
    const auto k2 = detail::derivative(detail::add(s, k1, h / 2), steer_vel, accel, params, kinematic);
    const auto k3 = detail::derivative(detail::add(s, k2, h / 2), steer_vel, accel, params, kinematic);
    const auto k4 = detail::derivative(detail::add(s, k3, h), steer_vel, accel, params, kinematic);
    const detail::StateDeriv avg{(k1.x + 2 * k2.x + 2 * k3.x + k4.x) / 6,
                                 (k1.y + 2 * k2.y + 2 * k3.y + k4.y) / 6,
                                 (k1.yaw + 2 * k2.yaw + 2 * k3.yaw + k4.yaw) / 6,
                                 (k1.steer + 2 * k2.steer + 2 * k3.steer + k4.steer) / 6,
                                 (k1.v + 2 * k2.v + 2 * k3.v + k4.v) / 6,
                                 (k1.yaw_rate + 2 * k2.yaw_rate + 2 * k3.yaw_rate + k4.yaw_rate) / 6,
                                 (k1.slip + 2 * k2.slip + 2 * k3.slip + k4.slip) / 6};
    s = detail::add(s, avg, h);
    s.steer = std::clamp(s.steer, -params.max_steer, params.max_steer);
    s.v = std::clamp(s.v, 0.0, params.v_max);
    if (kinematic) {
      s.yaw_rate = s.v * std::tan(s.steer) / L;
      s.slip = std::atan(params.lr * std::tan(s.steer) / L);
    }
  }
  s.yaw = wrap_angle(s.yaw);
  return s;
}

/// Oriented rectangle (vehicle footprint).
struct OrientedRect {
  double cx = 0.0;
  double cy = 0.0;
  double yaw = 0.0;
  double length = 0.0;
  double width = 0.0;

  std::array<Vec2, 4> corners() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double hl = length / 2, hw = width / 2;
    return {Vec2{cx + c * hl - s * hw, cy + s * hl + c * hw},
            Vec2{cx - c * hl - s * hw, cy - s * hl + c * hw},
            Vec2{cx - c * hl + s * hw, cy - s * hl - c * hw},
            Vec2{cx + c * hl + s * hw, cy + s * hl - c * hw}};
  }
};

inline OrientedRect footprint(const VehicleState& s, const VehicleParams& p) {
  return {s.x, s.y, s.yaw, p.length, p.width};
}

/// Separating-axis overlap test; touching rectangles do not overlap.
inline bool rects_overlap(const OrientedRect& a, const OrientedRect& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const double axes[4][2] = {{std::cos(a.yaw), std::sin(a.yaw)},
                             {-std::sin(a.yaw), std::cos(a.yaw)},
                             {std::cos(b.yaw), std::sin(b.yaw)},
                             {-std::sin(b.yaw), std::cos(b.yaw)}};
  for (const auto& ax : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = -amin;
    for (const auto& p : ca) {
      const double d = p.x * ax[0] + p.y * ax[1];
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const auto& p : cb) {
      const double d = p.x * ax[0] + p.y * ax[1];
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax <= bmin || bmax <= amin) return false;
  }
  return true;
}

/// Distance along a ray to an oriented rectangle (slab test); +inf on miss.
inline double ray_rect_distance(double ox, double oy, double dx, double dy,
                                const OrientedRect& r) {
  const double c = std::cos(r.yaw), s = std::sin(r.yaw);
  const double lx = c * (ox - r.cx) + s * (oy - r.cy);
  const double ly = -s * (ox - r.cx) + c * (oy - r.cy);
  const double ldx = c * dx + s * dy;
  const double ldy = -s * dx + c * dy;
  const double half[2] = {r.length / 2, r.width / 2};
  const double o[2] = {lx, ly};
  const double d[2] = {ldx, ldy};
  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < -half[k] || o[k] > half[k]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t1 = (-half[k] - o[k]) / d[k];
    double t2 = (half[k] - o[k]) / d[k];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return std::numeric_limits<double>::infinity();
  }
  return tmin;
}

/// Sphere-traces one beam through the distance field, then walks cell by
/// cell near obstacles so the hit is the exact boundary crossing.
inline double march_beam(const OccupancyGrid& grid, double ox, double oy, double dx, double dy,
                         double max_range) {
  const double res = grid.resolution();
  const Pose2& o = grid.origin();
  const double co = std::cos(o.yaw), so = std::sin(o.yaw);
  const double lx = co * (ox - o.x) + so * (oy - o.y), ly = -so * (ox - o.x) + co * (oy - o.y);
  const double ldx = co * dx + so * dy, ldy = -so * dx + co * dy;
  // the field holds center-to-center distances; this much is always free
  const double slack = std::sqrt(2.0) * res;
  double t = 0.0;
  while (t < max_range) {
    const double px = lx + t * ldx, py = ly + t * ldy;
    const double cf = std::floor(px / res), rf = std::floor(py / res);
    if (cf < 0 || rf < 0 || cf >= grid.width() || rf >= grid.height()) return max_range;
    const int c = static_cast<int>(cf), r = static_cast<int>(rf);
    if (grid.occupied(c, r)) return std::max(t, 1e-6);
    const double safe = grid.distance(c, r) - slack;
    if (safe >= res) {
      t += safe;
      continue;
    }
    const double inf = std::numeric_limits<double>::infinity();
    const double tx = ldx > 0 ? ((cf + 1) * res - px) / ldx : (ldx < 0 ? (cf * res - px) / ldx : inf);
    const double ty = ldy > 0 ? ((rf + 1) * res - py) / ldy : (ldy < 0 ? (rf * res - py) / ldy : inf);
    t += std::min(tx, ty) + 1e-9;
  }
  return max_range;
}

/// Simulated LiDAR scan seeing the map and (optionally) another vehicle.
inline Scan ray_march(const Pose2& pose, const OccupancyGrid& grid, const OrientedRect* other,
                      const LidarConfig& cfg) {
  Scan scan;
  scan.angles.resize(cfg.beams);
  scan.ranges.resize(cfg.beams);
  for (int i = 0; i < cfg.beams; ++i) scan.angles[i] = cfg.beam_angle(i);
  scan.max_range = cfg.max_range;
  if (!grid.contains(pose.x, pose.y)) {
    scan.out_of_map = true;
    std::fill(scan.ranges.begin(), scan.ranges.end(), 0.0);
    return scan;
  }
  for (int i = 0; i < cfg.beams; ++i) {
    const double a = pose.yaw + scan.angles[i];
    const double dx = std::cos(a), dy = std::sin(a);
    double range = march_beam(grid, pose.x, pose.y, dx, dy, cfg.max_range);
    if (other) range = std::min(range, ray_rect_distance(pose.x, pose.y, dx, dy, *other));
    scan.ranges[i] = std::clamp(range, 1e-6, cfg.max_range);
  }
  return scan;
}

/// Map collision: any of the 4 corners or 4 edge midpoints lies in an
/// occupied (or off-map) cell.
inline bool footprint_hits_map(const OrientedRect& r, const OccupancyGrid& grid) {
  const auto c = r.corners();
  const Vec2 pts[8] = {c[0], c[1], c[2], c[3],
                       {(c[0].x + c[1].x) / 2, (c[0].y + c[1].y) / 2},
                       {(c[1].x + c[2].x) / 2, (c[1].y + c[2].y) / 2},
                       {(c[2].x + c[3].x) / 2, (c[2].y + c[3].y) / 2},
                       {(c[3].x + c[0].x) / 2, (c[3].y + c[0].y) / 2}};
  const double half_res = grid.resolution() / 2.0;
  for (const auto& p : pts) {
    if (grid.distance_at(p.x, p.y) < half_res) return true;
  }
  return false;
}

struct CollisionReport {
  bool ego_map = false;
  bool opp_map = false;
  bool ego_opp = false;

  bool any() const { return ego_map || opp_map || ego_opp; }
};

struct SimWorld {
  std::shared_ptr<const OccupancyGrid> grid;
  VehicleState ego;
  VehicleState opp;
  VehicleParams params;
  double t = 0.0;
  double dt = 0.01;
  std::uint64_t rng_seed = 0;
  bool ego_frozen = false;
  bool opp_frozen = false;
  bool invalid = false;
};

inline CollisionReport check_collision(const SimWorld& world) {
  CollisionReport rep;
  const auto fe = footprint(world.ego, world.params);
  const auto fo = footprint(world.opp, world.params);
  rep.ego_map = footprint_hits_map(fe, *world.grid);
  rep.opp_map = footprint_hits_map(fo, *world.grid);
  rep.ego_opp = rects_overlap(fe, fo);
  return rep;
}

inline void freeze(VehicleState& s) {
  s.v = 0.0;
  s.yaw_rate = 0.0;
  s.slip = 0.0;
}

/// Advances both vehicles by one dt. Vehicles involved in a collision are
/// frozen for the rest of the rollout.
inline CollisionReport step_world(SimWorld& world, const Control& ego_ctrl,
                                  const Control& opp_ctrl) {
  if (!world.ego_frozen) world.ego = step_dynamics(world.ego, ego_ctrl, world.params, world.dt);
  if (!world.opp_frozen) world.opp = step_dynamics(world.opp, opp_ctrl, world.params, world.dt);
  world.t += world.dt;
  if (!world.ego.finite() || !world.opp.finite()) {
    world.invalid = true;
    world.ego_frozen = world.opp_frozen = true;
    return {true, true, false};
  }
  const auto rep = check_collision(world);
  if (rep.ego_map || rep.ego_opp) {
    world.ego_frozen = true;
    freeze(world.ego);
  }
  if (rep.opp_map || rep.ego_opp) {
    world.opp_frozen = true;
    freeze(world.opp);
  }
  return rep;
}

inline VehicleParams load_vehicle_params(const KeyValueConfig& cfg) {
  VehicleParams p;
  p.lf = cfg.number_or("lf", p.lf);
  p.lr = cfg.number_or("lr", p.lr);
  p.mass = cfg.number_or("mass", p.mass);
  p.yaw_inertia = cfg.number_or("yaw_inertia", p.yaw_inertia);
  p.cornering_stiffness_front = cfg.number_or("cornering_stiffness_front", p.cornering_stiffness_front);
  p.cornering_stiffness_rear = cfg.number_or("cornering_stiffness_rear", p.cornering_stiffness_rear);
  p.friction_mu = cfg.number_or("friction_mu", p.friction_mu);
  p.cg_height = cfg.number_or("cg_height", p.cg_height);
  p.max_steer = cfg.number_or("max_steer", p.max_steer);
  p.max_steer_rate = cfg.number_or("max_steer_rate", p.max_steer_rate);
  p.max_accel = cfg.number_or("max_accel", p.max_accel);
  p.v_max = cfg.number_or("v_max", p.v_max);
  p.v_switch = cfg.number_or("v_switch", p.v_switch);
  p.length = cfg.number_or("length", p.length);
  p.width = cfg.number_or("width", p.width);
  if (cfg.has("wheelbase") && std::abs(cfg.number("wheelbase") - p.wheelbase()) > 1e-9) {
    throw std::invalid_argument("vehicle config: wheelbase must equal lf + lr");
  }
  p.validate();
  return p;
}

inline LidarConfig load_lidar_config(const KeyValueConfig& cfg) {
  LidarConfig l;
  l.beams = static_cast<int>(cfg.number_or("lidar_beams", l.beams));
  l.fov = cfg.number_or("lidar_fov", l.fov);
  l.max_range = cfg.number_or("lidar_max_range", l.max_range);
  if (l.beams < 1 || !(l.fov > 0.0) || !(l.max_range > 0.0)) {
    throw std::invalid_argument("lidar config: beams, fov and max_range must be positive");
  }
  return l;
}

}  // namespace objrace
