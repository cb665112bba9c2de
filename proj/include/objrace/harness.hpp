#pragma once

// Head-to-head experiments: pairings of ego prototypes against one kind
// of opponent, side-by-side start lines with alternated sides, race logs
// and the win-rate report.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "objrace/evo.hpp"
#include "objrace/online.hpp"
#include "objrace/parallel.hpp"
#include "objrace/seed.hpp"
#include "objrace/stats.hpp"

namespace objrace {

enum class EgoKind { gt, fixed };
enum class OpponentKind { fixed_dpp2, random_explored, lane_switcher };

inline const char* to_string(EgoKind k) { return k == EgoKind::gt ? "gt" : "fixed"; }
inline const char* to_string(OpponentKind k) {
  switch (k) {
    case OpponentKind::fixed_dpp2: return "fixed";
    case OpponentKind::random_explored: return "random";
    case OpponentKind::lane_switcher: return "laneswitch";
  }
  return "?";
}

struct MatchSpec {
  EgoKind ego = EgoKind::gt;
  OpponentKind opponent = OpponentKind::fixed_dpp2;
  std::string map_id;
  int starts = 5;
  bool alternation = true;
  int moves = 2;
  double segment = 8.0;
  double d_move = 1.0;
  unsigned jobs = 0;
};

struct Pairing {
  int id = 0;
  std::size_t ego_proto = 0;  // index into the near-optimal set
  DriverSpec opponent;
  std::string opponent_label;
};

/// Ego prototypes come from DPP1. Opponents are the DPP2 agents, agents
/// drawn uniformly from everything explored, or the lane switcher.
inline std::vector<Pairing> make_pairings(const PrototypeSets& sets, OpponentKind kind,
                                          const std::vector<ArchiveEntry>& explored, std::uint64_t seed) {
  std::vector<DriverSpec> opps;
  std::vector<std::string> labels;
  switch (kind) {
    case OpponentKind::fixed_dpp2:
      for (const auto& p : sets.dpp2) {
        opps.push_back({DriverKind::fixed, p.params, 0});
        labels.push_back("dpp2:" + std::to_string(p.id));
      }
      break;
    case OpponentKind::random_explored: {
      if (explored.empty()) throw std::invalid_argument("make_pairings: random opponents need the explored archive");
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, explored.size() - 1);
      const std::size_t count = std::max<std::size_t>(1, sets.dpp2.size());
      for (std::size_t i = 0; i < count; ++i) {
        const auto& e = explored[pick(rng)];
        opps.push_back({DriverKind::fixed, e.params, 0});
        labels.push_back("explored:" + std::to_string(e.generation) + "/" + std::to_string(e.genome_id));
      }
      break;
    }
    case OpponentKind::lane_switcher:
      opps.push_back({DriverKind::lane_switcher, {}, 0});
      labels.emplace_back("laneswitch");
      break;
  }
  std::vector<Pairing> out;
  for (const auto& e : sets.dpp1) {
    for (std::size_t j = 0; j < opps.size(); ++j) {
      out.push_back({static_cast<int>(out.size()), static_cast<std::size_t>(e.id), opps[j], labels[j]});
    }
  }
  if (out.empty()) throw std::invalid_argument("make_pairings: no pairings (empty DPP1 set?)");
  return out;
}

struct RaceRecord {
  int pairing = 0;
  int start = 0;
  int side = 0;  // 0: ego on the left
  std::string ego_kind;
  std::string opponent_kind;
  std::string map_id;
  std::size_t ego_proto = 0;
  std::string opponent;
  std::string winner;  // ego, opp or draw
  double final_lead = 0.0;
  bool ego_crash = false;
  bool opp_crash = false;
  double ego_credit = 0.0;
};

/// Start line k is shared by every pairing and by both ego kinds, so that
/// game-theoretic and fixed egos face identical conditions.
inline double start_station(const RaceEnv& env, int start, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {7, static_cast<std::uint64_t>(start)}));
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) * env.raceline->total_length();
}

inline std::vector<RaceRecord> run_match(const MatchSpec& spec, const std::vector<Pairing>& pairings,
                                         const PrototypeSets& sets, const RegretScorer& scorer, const RaceEnv& env,
                                         std::uint64_t seed) {
  if (spec.starts < 1) throw std::invalid_argument("run_match: starts must be >= 1");
  const int sides = spec.alternation ? 2 : 1;
  const std::size_t total = pairings.size() * spec.starts * sides;
  std::vector<RaceRecord> out(total);
  OnlineContext ctx;
  ctx.prototypes = &sets.near_optimal;
  ctx.scorer = scorer;
  ctx.moves = spec.moves;
  ctx.segment = spec.segment;
  ctx.d_move = spec.d_move;
  parallel_for(total, spec.jobs, [&](std::size_t i) {
    const int side = static_cast<int>(i % sides);
    const int start = static_cast<int>((i / sides) % spec.starts);
    const auto& pr = pairings[i / (sides * spec.starts)];
    DriverSpec ego;
    if (spec.ego == EgoKind::gt) {
      ego = {DriverKind::gt, {}, pr.ego_proto};
    } else {
      ego = {DriverKind::fixed, sets.near_optimal.at(pr.ego_proto).params, 0};
    }
    const auto sc = start_line(env, start_station(env, start, seed), side == 0);
    const auto o = run_online(ego, pr.opponent, sc, ctx, env, derive_seed(seed, {8, static_cast<std::uint64_t>(start)}));
    RaceRecord& rec = out[i];
    rec.pairing = pr.id;
    rec.start = start;
    rec.side = side;
    rec.ego_kind = to_string(spec.ego);
    rec.opponent_kind = to_string(spec.opponent);
    rec.map_id = env.map_id;
    rec.ego_proto = pr.ego_proto;
    rec.opponent = pr.opponent_label;
    rec.final_lead = o.final_lead;
    rec.ego_crash = o.ego_crash;
    rec.opp_crash = o.opp_crash;
    rec.ego_credit = o.ego_credit;
    rec.winner = o.ego_credit == 1.0 ? "ego" : (o.ego_credit == 0.0 ? "opp" : "draw");
  });
  return out;
}

inline void save_race_log(std::ostream& out, const std::vector<RaceRecord>& log) {
  csv::write_row(out, {"pairing", "start", "side", "ego_kind", "opponent_kind", "map", "ego_proto", "opponent", "winner",
                       "final_lead", "ego_crash", "opp_crash", "ego_credit"});
  for (const auto& r : log) {
    csv::write_row(out, {std::to_string(r.pairing), std::to_string(r.start), std::to_string(r.side), r.ego_kind,
                         r.opponent_kind, r.map_id, std::to_string(r.ego_proto), r.opponent, r.winner,
                         csv::fmt(r.final_lead), r.ego_crash ? "1" : "0", r.opp_crash ? "1" : "0",
                         csv::fmt(r.ego_credit)});
  }
}

inline std::vector<RaceRecord> load_race_log(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const std::string src = path.string();
  std::vector<RaceRecord> out;
  for (const auto& row : t.rows) {
    const auto num = [&](const char* c) { return csv::to_double(row[t.require_column(c)], src); };
    RaceRecord r;
    r.pairing = static_cast<int>(num("pairing"));
    r.start = static_cast<int>(num("start"));
    r.side = static_cast<int>(num("side"));
    r.ego_kind = row[t.require_column("ego_kind")];
    r.opponent_kind = row[t.require_column("opponent_kind")];
    r.map_id = row[t.require_column("map")];
    r.ego_proto = static_cast<std::size_t>(num("ego_proto"));
    r.opponent = row[t.require_column("opponent")];
    r.winner = row[t.require_column("winner")];
    r.final_lead = num("final_lead");
    r.ego_crash = num("ego_crash") != 0.0;
    r.opp_crash = num("opp_crash") != 0.0;
    r.ego_credit = num("ego_credit");
    out.push_back(r);
  }
  return out;
}

struct PairingStats {
  int pairing = 0;
  int races = 0;
  double win = 0.0;   // full wins / races
  double loss = 0.0;
  double draw = 0.0;
  double win_rate = 0.0;  // credit including half draws
};

struct ConditionStats {
  std::string ego_kind;
  std::string opponent_kind;
  std::string map_id;
  std::vector<PairingStats> pairings;
  int races = 0;
  double mean = 0.0;
  double std = 0.0;
  double crash_rate = 0.0;
};

inline ConditionStats condition_stats(const std::vector<RaceRecord>& log) {
  if (log.empty()) throw std::invalid_argument("report: empty race log");
  ConditionStats c;
  c.ego_kind = log.front().ego_kind;
  c.opponent_kind = log.front().opponent_kind;
  c.map_id = log.front().map_id;
  std::map<int, PairingStats> by;
  int crashes = 0;
  for (const auto& r : log) {
    if (r.ego_kind != c.ego_kind || r.opponent_kind != c.opponent_kind || r.map_id != c.map_id) {
      throw std::invalid_argument("report: a race log must hold a single condition");
    }
    auto& p = by[r.pairing];
    p.pairing = r.pairing;
    ++p.races;
    p.win += r.winner == "ego";
    p.loss += r.winner == "opp";
    p.draw += r.winner == "draw";
    p.win_rate += r.ego_credit;
    crashes += r.ego_crash;
  }
  for (auto& [id, p] : by) {
    p.win /= p.races;
    p.loss /= p.races;
    p.draw /= p.races;
    p.win_rate /= p.races;
    c.pairings.push_back(p);
  }
  c.races = static_cast<int>(log.size());
  for (const auto& p : c.pairings) c.mean += p.win_rate;
  c.mean /= static_cast<double>(c.pairings.size());
  double ss = 0.0;
  for (const auto& p : c.pairings) ss += (p.win_rate - c.mean) * (p.win_rate - c.mean);
  c.std = c.pairings.size() > 1 ? std::sqrt(ss / static_cast<double>(c.pairings.size() - 1)) : 0.0;
  c.crash_rate = static_cast<double>(crashes) / c.races;
  return c;
}

struct RaceReport {
  ConditionStats treatment;  // game-theoretic ego
  std::optional<ConditionStats> baseline;
  std::optional<TTestResult> test;
};

/// Treatment log first; the optional baseline is compared pairing by
/// pairing with a paired t-test.
inline RaceReport make_report(const std::vector<RaceRecord>& treatment, const std::vector<RaceRecord>& baseline) {
  RaceReport r;
  r.treatment = condition_stats(treatment);
  if (!baseline.empty()) {
    r.baseline = condition_stats(baseline);
    if (r.baseline->pairings.size() != r.treatment.pairings.size()) {
      throw std::invalid_argument("report: treatment and baseline have different pairings");
    }
    std::vector<double> a, b;
    for (std::size_t i = 0; i < r.treatment.pairings.size(); ++i) {
      if (r.treatment.pairings[i].pairing != r.baseline->pairings[i].pairing) {
        throw std::invalid_argument("report: pairing ids differ between logs");
      }
      a.push_back(r.treatment.pairings[i].win_rate);
      b.push_back(r.baseline->pairings[i].win_rate);
    }
    if (a.size() >= 2) r.test = paired_t_test(a, b);
  }
  return r;
}

namespace detail {

inline nlohmann::ordered_json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline nlohmann::ordered_json condition_json(const ConditionStats& c) {
  nlohmann::ordered_json j;
  j["ego"] = c.ego_kind;
  j["opponent"] = c.opponent_kind;
  j["map"] = c.map_id;
  j["races"] = c.races;
  j["pairings"] = c.pairings.size();
  j["win_rate_mean"] = c.mean;
  j["win_rate_std"] = c.std;
  j["ego_crash_rate"] = c.crash_rate;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& p : c.pairings) {
    arr.push_back({{"pairing", p.pairing}, {"races", p.races}, {"win", p.win}, {"loss", p.loss}, {"draw", p.draw},
                   {"win_rate", p.win_rate}});
  }
  j["per_pairing"] = arr;
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json report_json(const RaceReport& r, const nlohmann::ordered_json& config) {
  nlohmann::ordered_json j;
  j["config"] = config;
  j["treatment"] = detail::condition_json(r.treatment);
  if (r.baseline) j["baseline"] = detail::condition_json(*r.baseline);
  if (r.test) {
    j["paired_t_test"] = {{"n", r.test->n},
                          {"mean_diff", r.test->mean_diff},
                          {"t", detail::finite_or_string(r.test->t)},
                          {"p", r.test->p},
                          {"zero_variance", r.test->zero_variance}};
  }
  return j;
}

inline void save_report_csv(std::ostream& out, const RaceReport& r) {
  csv::write_row(out, {"condition", "ego", "opponent", "map", "pairings", "races", "win_rate_mean", "win_rate_std",
                       "ego_crash_rate", "t", "p"});
  const auto row = [&](const char* label, const ConditionStats& c, bool with_test) {
    std::string t = "", p = "";
    if (with_test && r.test) {
      t = csv::fmt(r.test->t);
      p = csv::fmt(r.test->p);
    }
    csv::write_row(out, {label, c.ego_kind, c.opponent_kind, c.map_id, std::to_string(c.pairings.size()),
                         std::to_string(c.races), csv::fmt(c.mean), csv::fmt(c.std), csv::fmt(c.crash_rate), t, p});
  };
  row("treatment", r.treatment, true);
  if (r.baseline) row("baseline", *r.baseline, false);
}

}  // namespace objrace
