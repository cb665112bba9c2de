#pragma once

// Closed-loop two-car rollouts: environment bundle, policies, the stepping
// loop with progress bookkeeping, and objective evaluation of recorded
// windows from either car's point of view.

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "objrace/config.hpp"
#include "objrace/lane_switcher.hpp"
#include "objrace/objectives.hpp"
#include "objrace/planner.hpp"
#include "objrace/sim.hpp"
#include "objrace/track.hpp"

namespace objrace {

/// Everything a rollout needs besides the agents themselves.
struct RaceEnv {
  std::string map_id;
  std::shared_ptr<const OccupancyGrid> grid;
  std::shared_ptr<const Raceline> raceline;
  VehicleParams vehicle{};
  LidarConfig lidar{};
  PlannerConfig planner{};
  ObjectiveConfig objective{};
  LaneSwitcherConfig lane_switcher{};
  double dt = 0.01;
  double segment = 8.0;

  int replan_steps() const {
    return std::max(1, static_cast<int>(std::lround(planner.replan_period / dt)));
  }
  long steps_for(double duration) const { return std::lround(duration / dt); }
};

/// Loads `<dir>/map.pgm`, `<dir>/map.yaml` and `<dir>/raceline.csv`.
/// An optional vehicle config (key: value) overrides vehicle and LiDAR
/// defaults.
inline RaceEnv load_env(const std::filesystem::path& map_dir,
                        const std::filesystem::path& vehicle_cfg = {}) {
  RaceEnv env;
  env.map_id = map_dir.filename().string();
  if (env.map_id.empty()) env.map_id = map_dir.parent_path().filename().string();
  env.grid = std::make_shared<const OccupancyGrid>(load_grid(map_dir / "map.pgm", map_dir / "map.yaml"));
  env.raceline = std::make_shared<const Raceline>(load_raceline(map_dir / "raceline.csv", true));
  if (!vehicle_cfg.empty()) {
    const auto cfg = KeyValueConfig::load(vehicle_cfg);
    env.vehicle = load_vehicle_params(cfg);
    env.lidar = load_lidar_config(cfg);
    env.dt = cfg.number_or("dt", env.dt);
    if (!(env.dt > 0.0 && env.dt <= 0.05)) throw std::invalid_argument("dt must be in (0, 0.05]");
  }
  return env;
}

using Policy = std::variant<LatticePlanner, LaneSwitcher>;

inline Policy make_lattice_policy(const AgentParams& p, const RaceEnv& env) {
  return LatticePlanner(p, env.planner, env.vehicle);
}

inline Policy make_lane_switcher(const RaceEnv& env) {
  return LaneSwitcher(env.lane_switcher, env.vehicle, env.lidar);
}

/// State of both cars at a planner tick.
struct Frame {
  long tick = 0;
  double t = 0.0;
  VehicleState ego;
  VehicleState opp;
  double ego_progress = 0.0;
  double opp_progress = 0.0;
  bool ego_frozen = false;
  bool opp_frozen = false;
};

struct CollisionEvent {
  long step = 0;
  double t = 0.0;
  CollisionReport report;
  double lead = 0.0;  // ego minus opponent at the collision step
};

/// A running two-car race. Copyable, so game trees can branch from a
/// snapshot.
struct Race {
  SimWorld world;
  Policy ego;
  Policy opp;
  double ego_s = 0.0;
  double opp_s = 0.0;
  double ego_progress = 0.0;
  double opp_progress = 0.0;
  double lead0 = 0.0;
  long step = 0;
  std::vector<Frame> frames;
  std::vector<CollisionEvent> events;

  double lead() const { return lead0 + ego_progress - opp_progress; }
};

inline VehicleState spawn_state(const Raceline& line, double s, double d, double v) {
  const auto w = line.at(s);
  VehicleState st;
  st.x = w.x - d * std::sin(w.theta);
  st.y = w.y + d * std::cos(w.theta);
  st.yaw = w.theta;
  st.v = v;
  return st;
}

inline Race start_race(const RaceEnv& env, const VehicleState& ego, const VehicleState& opp,
                       Policy ego_policy, Policy opp_policy, std::uint64_t seed = 0) {
  Race r;
  r.world.grid = env.grid;
  r.world.ego = ego;
  r.world.opp = opp;
  r.world.params = env.vehicle;
  r.world.dt = env.dt;
  r.world.rng_seed = seed;
  r.ego = std::move(ego_policy);
  r.opp = std::move(opp_policy);
  r.ego_s = project(*env.raceline, ego.x, ego.y).s;
  r.opp_s = project(*env.raceline, opp.x, opp.y).s;
  r.lead0 = progress_delta(*env.raceline, r.opp_s, r.ego_s);
  return r;
}

namespace detail {

inline void update_progress(Race& r, const Raceline& line) {
  const auto fe = project_near(line, r.world.ego.x, r.world.ego.y, r.ego_s, 3.0);
  const auto fo = project_near(line, r.world.opp.x, r.world.opp.y, r.opp_s, 3.0);
  r.ego_progress += progress_delta(line, r.ego_s, fe.s);
  r.opp_progress += progress_delta(line, r.opp_s, fo.s);
  r.ego_s = fe.s;
  r.opp_s = fo.s;
}

inline void record_frame(Race& r, long tick) {
  if (!r.frames.empty() && r.frames.back().tick >= tick) return;
  r.frames.push_back({tick, r.world.t, r.world.ego, r.world.opp, r.ego_progress, r.opp_progress,
                      r.world.ego_frozen, r.world.opp_frozen});
}

inline void replan(Policy& p, const VehicleState& self, const VehicleState& other, const RaceEnv& env,
                   double t) {
  std::visit(
      [&](auto& pol) {
        using T = std::decay_t<decltype(pol)>;
        if constexpr (std::is_same_v<T, LatticePlanner>) {
          pol.plan(self, &other, *env.raceline, *env.grid);
        } else {
          pol.plan(self, &other, *env.raceline, *env.grid, t);
        }
      },
      p);
}

inline Control track(const Policy& p, const VehicleState& self) {
  return std::visit([&](const auto& pol) { return pol.track(self); }, p);
}

}  // namespace detail

/// Runs `steps` physics steps, replanning every env.replan_steps() steps
/// and recording a frame at every planner tick (including the final state
/// when it falls on a tick).
inline void advance(Race& r, const RaceEnv& env, long steps) {
  const int every = env.replan_steps();
  for (long k = 0; k < steps; ++k) {
    if (r.step % every == 0) {
      detail::record_frame(r, r.step / every);
      if (!r.world.invalid) {
        if (!r.world.ego_frozen) detail::replan(r.ego, r.world.ego, r.world.opp, env, r.world.t);
        if (!r.world.opp_frozen) detail::replan(r.opp, r.world.opp, r.world.ego, env, r.world.t);
      }
    }
    const Control ce = r.world.ego_frozen ? Control{} : detail::track(r.ego, r.world.ego);
    const Control co = r.world.opp_frozen ? Control{} : detail::track(r.opp, r.world.opp);
    const bool was_ego = r.world.ego_frozen, was_opp = r.world.opp_frozen;
    const auto rep = step_world(r.world, ce, co);
    ++r.step;
    detail::update_progress(r, *env.raceline);
    const bool fresh = (rep.ego_map && !was_ego) || (rep.opp_map && !was_opp) ||
                       (rep.ego_opp && !(was_ego && was_opp));
    if (fresh || (r.world.invalid && r.events.empty())) {
      r.events.push_back({r.step, r.world.t, rep, r.lead()});
    }
  }
  if (r.step % every == 0) detail::record_frame(r, r.step / every);
}

enum class Perspective { ego, opp };

/// Objectives of one car over the recorded ticks [tick_from, tick_to],
/// computed from its point of view. Ego and opponent use the same code
/// path, which is what the online opponent estimator relies on.
inline RolloutResult objectives_from_frames(const Race& r, const RaceEnv& env, Perspective who,
                                            long tick_from, long tick_to) {
  const Frame* f0 = nullptr;
  const Frame* f1 = nullptr;
  for (const auto& f : r.frames) {
    if (f.tick == tick_from) f0 = &f;
    if (f.tick == tick_to) f1 = &f;
  }
  if (!f0 || !f1 || tick_to < tick_from) {
    throw std::out_of_range("objectives_from_frames: window not recorded");
  }
  const bool ego_view = who == Perspective::ego;
  const double sign = ego_view ? 1.0 : -1.0;
  const auto& line = *env.raceline;
  RolloutResult res;
  const auto& self0 = ego_view ? f0->ego : f0->opp;
  const auto& self1 = ego_view ? f1->ego : f1->opp;
  const auto& other0 = ego_view ? f0->opp : f0->ego;
  const auto& other1 = ego_view ? f1->opp : f1->ego;
  res.s_ego_start = project(line, self0.x, self0.y).s;
  res.s_ego_end = project(line, self1.x, self1.y).s;
  res.s_opp_start = project(line, other0.x, other0.y).s;
  res.s_opp_end = project(line, other1.x, other1.y).s;
  res.ego_progress = ego_view ? f1->ego_progress - f0->ego_progress : f1->opp_progress - f0->opp_progress;
  res.opp_progress = ego_view ? f1->opp_progress - f0->opp_progress : f1->ego_progress - f0->ego_progress;
  res.lead_start = sign * (r.lead0 + f0->ego_progress - f0->opp_progress);
  res.lead_end = sign * (r.lead0 + f1->ego_progress - f1->opp_progress);
  res.overtake = res.lead_start < 0.0 && res.lead_end > 0.0;
  for (const auto& e : r.events) {
    if (e.t <= f0->t + 1e-12 || e.t > f1->t + 1e-12) continue;
    res.any_collision = true;
    if (ego_view ? e.report.ego_map : e.report.opp_map) res.ego_map_collision = true;
    if (e.report.ego_opp && sign * e.lead < 0.0) res.ego_crashed_into_opp = true;
  }
  if (r.world.invalid) {
    res.invalid = true;
    res.any_collision = true;
  }
  for (const auto& f : r.frames) {
    if (f.tick < tick_from || f.tick >= tick_to) continue;
    const auto& self = ego_view ? f.ego : f.opp;
    const auto& other = ego_view ? f.opp : f.ego;
    const auto rect = footprint(other, env.vehicle);
    const auto scan = ray_march(self.pose(), *env.grid, &rect, env.lidar);
    append_ttc(scan, self.v, env.objective, res.ttc_samples);
  }
  res.objectives = {compute_o_agg(res, env.objective), compute_o_res(res, env.objective)};
  return res;
}

/// Start configuration of one evaluation rollout.
struct Scenario {
  std::string map_id;
  double station = 0.0;   // raceline s of the ego spawn
  double gap = 0.0;       // signed: opponent s minus ego s
  double ego_offset = 0.0;
  double opp_offset = 0.0;
  double speed_fraction = 0.5;  // initial speed as a fraction of raceline speed
  Pose2 ego_spawn;
  Pose2 opp_spawn;
};

inline std::pair<VehicleState, VehicleState> scenario_states(const Scenario& sc, const RaceEnv& env) {
  const auto& line = *env.raceline;
  const double s_opp = sc.station + sc.gap;
  auto ego = spawn_state(line, sc.station, sc.ego_offset, sc.speed_fraction * line.at(sc.station).v);
  auto opp = spawn_state(line, s_opp, sc.opp_offset, sc.speed_fraction * line.at(s_opp).v);
  return {ego, opp};
}

inline Scenario make_scenario(const RaceEnv& env, double station, double gap, double ego_offset,
                              double opp_offset, double speed_fraction) {
  Scenario sc;
  sc.map_id = env.map_id;
  sc.station = env.raceline->normalize_s(station);
  sc.gap = gap;
  sc.ego_offset = ego_offset;
  sc.opp_offset = opp_offset;
  sc.speed_fraction = speed_fraction;
  const auto [e, o] = scenario_states(sc, env);
  sc.ego_spawn = e.pose();
  sc.opp_spawn = o.pose();
  return sc;
}

/// Single evaluation rollout: both cars run their lattice planner for
/// `duration` seconds; objectives are the ego's.
inline RolloutResult evaluate_rollout(const AgentParams& ego_params, const AgentParams& opp_params,
                                      const Scenario& scenario, double duration, std::uint64_t seed,
                                      const RaceEnv& env) {
  if (!(duration > 0.0)) throw std::invalid_argument("evaluate_rollout: duration must be positive");
  const auto [ego, opp] = scenario_states(scenario, env);
  auto race = start_race(env, ego, opp, make_lattice_policy(ego_params, env),
                         make_lattice_policy(opp_params, env), seed);
  const long steps = env.steps_for(duration);
  advance(race, env, steps);
  const long last_tick = race.step / env.replan_steps();
  return objectives_from_frames(race, env, Perspective::ego, 0, last_tick);
}

/// Random scenario/opponent set: uniform raceline stations, signed gaps in
/// [0.5, 3] m, lateral offsets in [-0.6, 0.6] m, uniform random opponent
/// parameters. Colliding spawns are resampled.
inline std::pair<std::vector<Scenario>, std::vector<AgentParams>> make_scenario_set(const RaceEnv& env,
                                                                                   int count,
                                                                                   std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_scenario_set: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Scenario> scenarios;
  std::vector<AgentParams> opponents;
  const double L = env.raceline->total_length();
  for (int i = 0; i < count; ++i) {
    int failures = 0;
    for (;;) {
      const double station = unit(rng) * L;
      const double gap = (0.5 + 2.5 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
      const double eo = -0.6 + 1.2 * unit(rng);
      const double oo = -0.6 + 1.2 * unit(rng);
      auto sc = make_scenario(env, station, gap, eo, oo, 0.5);
      const auto [e, o] = scenario_states(sc, env);
      SimWorld w;
      w.grid = env.grid;
      w.ego = e;
      w.opp = o;
      w.params = env.vehicle;
      if (!check_collision(w).any()) {
        scenarios.push_back(sc);
        break;
      }
      if (++failures >= 1000) {
        throw std::runtime_error("make_scenario_set: cannot place two cars on this map");
      }
    }
    std::array<double, AgentParams::kSize> v{};
    for (int k = 0; k < AgentParams::kSize; ++k) {
      v[k] = AgentParams::lower(k) + (AgentParams::upper(k) - AgentParams::lower(k)) * unit(rng);
    }
    opponents.push_back(AgentParams::from_array(v));
  }
  return {scenarios, opponents};
}

inline void save_scenarios(std::ostream& out, const std::vector<Scenario>& scenarios,
                           const std::vector<AgentParams>& opponents) {
  std::vector<std::string> header{"map", "station", "gap", "ego_offset", "opp_offset", "speed_fraction",
                                  "ego_x", "ego_y", "ego_yaw", "opp_x", "opp_y", "opp_yaw"};
  for (auto n : AgentParams::kNames) header.push_back(std::string("opp_") + n);
  csv::write_row(out, header);
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& s = scenarios[i];
    std::vector<std::string> row{s.map_id, csv::fmt(s.station), csv::fmt(s.gap), csv::fmt(s.ego_offset),
                                 csv::fmt(s.opp_offset), csv::fmt(s.speed_fraction),
                                 csv::fmt(s.ego_spawn.x), csv::fmt(s.ego_spawn.y), csv::fmt(s.ego_spawn.yaw),
                                 csv::fmt(s.opp_spawn.x), csv::fmt(s.opp_spawn.y), csv::fmt(s.opp_spawn.yaw)};
    for (double v : opponents[i].to_array()) row.push_back(csv::fmt(v));
    csv::write_row(out, row);
  }
}

inline std::pair<std::vector<Scenario>, std::vector<AgentParams>> load_scenarios(
    const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  std::vector<Scenario> sc;
  std::vector<AgentParams> opp;
  for (const auto& row : t.rows) {
    const auto num = [&](const char* name) {
      return csv::to_double(row[t.require_column(name)], path.string());
    };
    Scenario s;
    s.map_id = row[t.require_column("map")];
    s.station = num("station");
    s.gap = num("gap");
    s.ego_offset = num("ego_offset");
    s.opp_offset = num("opp_offset");
    s.speed_fraction = num("speed_fraction");
    s.ego_spawn = {num("ego_x"), num("ego_y"), num("ego_yaw")};
    s.opp_spawn = {num("opp_x"), num("opp_y"), num("opp_yaw")};
    sc.push_back(s);
    std::array<double, AgentParams::kSize> v{};
    for (int k = 0; k < AgentParams::kSize; ++k) {
      v[k] = csv::to_double(row[t.require_column(std::string("opp_") + AgentParams::kNames[k])], path.string());
    }
    opp.push_back(AgentParams::from_array(v));
  }
  return {sc, opp};
}

}  // namespace objrace
