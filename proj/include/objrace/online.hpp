#pragma once

// Online objective-space planning: every segment the game-theoretic agent
// estimates where its opponent sits in O, scores the four moves with the
// regret model, moves, and snaps to the nearest near-optimal prototype.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "objrace/game.hpp"
#include "objrace/mlp.hpp"
#include "objrace/rollout.hpp"

namespace objrace {

/// Scores the candidate actions at an infoset (higher is better).
using RegretScorer = std::function<std::array<double, kNumActions>(const Infoset&)>;

inline RegretScorer mlp_scorer(const MlpParams& model) {
  return [&model](const Infoset& I) {
    std::array<double, kNumActions> out{};
    for (int a = 0; a < kNumActions; ++a) {
      const auto f = encode_infoset(I, action_from_int(a), kActionSlots);
      out[a] = mlp_forward(model, f);
    }
    return out;
  };
}

inline Action choose_action(const RegretScorer& scorer, const Infoset& I) {
  const auto r = scorer(I);
  return action_from_int(argmax_action(r));
}

/// Objective coordinates of `who` over ticks [from, to] of a recorded race.
inline ObjectivePoint estimate_objectives(const Race& race, const RaceEnv& env, Perspective who, long from, long to) {
  return objectives_from_frames(race, env, who, from, to).objectives;
}

class OnlineAgent {
 public:
  OnlineAgent(RegretScorer scorer, const std::vector<Prototype>& protos, std::size_t start, double d_move)
      : scorer_(std::move(scorer)), protos_(&protos), current_(start), d_move_(d_move) {
    if (start >= protos.size()) throw std::out_of_range("OnlineAgent: start prototype out of range");
    infoset_.ego_points.push_back(protos[start].obj);
  }

  const Infoset& infoset() const { return infoset_; }
  const Prototype& operating() const { return (*protos_)[current_]; }
  std::size_t operating_index() const { return current_; }

  /// One decision point: records the opponent estimate, picks an action,
  /// moves and snaps. Returns the action taken.
  Action decide(const ObjectivePoint& opp_estimate) {
    infoset_.opp_points.push_back(opp_estimate);
    const Action a = choose_action(scorer_, infoset_);
    current_ = nearest_prototype(apply_action(operating().obj, a, d_move_), *protos_);
    infoset_.ego_actions.push_back(a);
    infoset_.ego_points.push_back(operating().obj);
    return a;
  }

 private:
  RegretScorer scorer_;
  const std::vector<Prototype>* protos_;
  std::size_t current_;
  double d_move_;
  Infoset infoset_;
};

enum class DriverKind { fixed, gt, lane_switcher };

struct DriverSpec {
  DriverKind kind = DriverKind::fixed;
  AgentParams params;         // fixed drivers
  std::size_t prototype = 0;  // gt drivers: start index into the near-optimal set
};

struct Decision {
  long tick = 0;
  int side = 0;  // 0 ego, 1 opponent
  Action action = Action::agg_up;
  ObjectivePoint opp_estimate;
  ObjectivePoint operating;
  std::size_t prototype = 0;
};

struct RaceOutcome {
  double final_lead = 0.0;
  bool ego_crash = false;
  bool opp_crash = false;
  bool invalid = false;
  double ego_credit = 0.0;
  Race race;
  std::vector<Decision> decisions;
};

struct OnlineContext {
  const std::vector<Prototype>* prototypes = nullptr;
  RegretScorer scorer;
  int moves = 2;
  double segment = 8.0;
  double d_move = 1.0;
};

/// 1 for an ego win, 0 for a loss, 0.5 for a draw. A crashed car loses to
/// a running one; both crashed is a draw.
inline double race_credit(double lead, bool ego_crash, bool opp_crash) {
  if (ego_crash && opp_crash) return 0.5;
  if (ego_crash) return 0.0;
  if (opp_crash) return 1.0;
  if (lead > 0.0) return 1.0;
  if (lead < 0.0) return 0.0;
  return 0.5;
}

/// Runs (moves + 1) segments; game-theoretic drivers decide at the end of
/// every segment but the last.
inline RaceOutcome run_online(const DriverSpec& ego, const DriverSpec& opp, const Scenario& scenario,
                              const OnlineContext& ctx, const RaceEnv& env, std::uint64_t seed) {
  if (ctx.moves < 0 || ctx.moves > kActionSlots) throw std::invalid_argument("run_online: moves must be in [0, 3]");
  const auto make = [&](const DriverSpec& d) -> Policy {
    switch (d.kind) {
      case DriverKind::fixed: return make_lattice_policy(d.params, env);
      case DriverKind::lane_switcher: return make_lane_switcher(env);
      case DriverKind::gt:
        if (!ctx.prototypes || d.prototype >= ctx.prototypes->size()) {
          throw std::invalid_argument("run_online: game-theoretic driver needs a prototype set");
        }
        return make_lattice_policy((*ctx.prototypes)[d.prototype].params, env);
    }
    throw std::invalid_argument("run_online: bad driver kind");
  };
  std::array<std::optional<OnlineAgent>, 2> agents;
  const std::array<const DriverSpec*, 2> specs{&ego, &opp};
  for (int side = 0; side < 2; ++side) {
    if (specs[side]->kind == DriverKind::gt) {
      if (!ctx.scorer) throw std::invalid_argument("run_online: game-theoretic driver needs a regret model");
      agents[side].emplace(ctx.scorer, *ctx.prototypes, specs[side]->prototype, ctx.d_move);
    }
  }
  const auto [s_ego, s_opp] = scenario_states(scenario, env);
  RaceOutcome out;
  out.race = start_race(env, s_ego, s_opp, make(ego), make(opp), seed);
  Race& r = out.race;
  const long seg_steps = env.steps_for(ctx.segment);
  const long seg_ticks = seg_steps / env.replan_steps();
  for (int k = 0; k <= ctx.moves; ++k) {
    advance(r, env, seg_steps);
    if (k == ctx.moves) break;
    const long to = (k + 1) * seg_ticks, from = k * seg_ticks;
    for (int side = 0; side < 2; ++side) {
      if (!agents[side]) continue;
      Policy& pol = side == 0 ? r.ego : r.opp;
      const bool frozen = side == 0 ? r.world.ego_frozen : r.world.opp_frozen;
      const auto est = estimate_objectives(r, env, side == 0 ? Perspective::opp : Perspective::ego, from, to);
      const Action a = agents[side]->decide(est);
      if (!frozen) std::get<LatticePlanner>(pol).set_params(agents[side]->operating().params);
      out.decisions.push_back({to, side, a, est, agents[side]->operating().obj, agents[side]->operating_index()});
    }
  }
  out.final_lead = r.lead();
  out.ego_crash = r.world.ego_frozen;
  out.opp_crash = r.world.opp_frozen;
  out.invalid = r.world.invalid;
  out.ego_credit = race_credit(out.final_lead, out.ego_crash, out.opp_crash);
  return out;
}

/// Per-frame trace with the ego's operating point, its latest opponent
/// estimate and the action taken at decision frames (-1 elsewhere).
inline void save_trace(std::ostream& out, const RaceOutcome& o, const std::optional<ObjectivePoint>& ego_start) {
  csv::write_row(out, {"t", "ego_x", "ego_y", "ego_yaw", "ego_v", "opp_x", "opp_y", "opp_yaw", "opp_v", "ego_agg",
                       "ego_res", "opp_est_agg", "opp_est_res", "action"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ObjectivePoint op = ego_start.value_or(ObjectivePoint{nan, nan});
  ObjectivePoint est{nan, nan};
  for (const auto& f : o.race.frames) {
    int action = -1;
    for (const auto& d : o.decisions) {
      if (d.side == 0 && d.tick == f.tick) {
        action = static_cast<int>(d.action);
        op = d.operating;
        est = d.opp_estimate;
      }
    }
    csv::write_row(out, {csv::fmt(f.t), csv::fmt(f.ego.x), csv::fmt(f.ego.y), csv::fmt(f.ego.yaw), csv::fmt(f.ego.v),
                         csv::fmt(f.opp.x), csv::fmt(f.opp.y), csv::fmt(f.opp.yaw), csv::fmt(f.opp.v), csv::fmt(op.agg),
                         csv::fmt(op.res), csv::fmt(est.agg), csv::fmt(est.res), std::to_string(action)});
  }
}

}  // namespace objrace
