#pragma once

// The extensive game in objective space: axis moves, self-play over all
// action-sequence pairs, counterfactual regrets with a uniform ego
// strategy, regret matching, infoset features and the regret dataset.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "objrace/csv.hpp"
#include "objrace/evo.hpp"
#include "objrace/parallel.hpp"
#include "objrace/rollout.hpp"

namespace objrace {

enum class Action : int { agg_up = 0, agg_down = 1, res_up = 2, res_down = 3 };
inline constexpr int kNumActions = 4;

inline ObjectivePoint apply_action(const ObjectivePoint& p, Action a, double d_move) {
  switch (a) {
    case Action::agg_up: return {p.agg + d_move, p.res};
    case Action::agg_down: return {p.agg - d_move, p.res};
    case Action::res_up: return {p.agg, p.res + d_move};
    case Action::res_down: return {p.agg, p.res - d_move};
  }
  throw std::invalid_argument("apply_action: bad action");
}

inline Action action_from_int(int a) {
  if (a < 0 || a >= kNumActions) throw std::out_of_range("action id out of range");
  return static_cast<Action>(a);
}

/// Nearest prototype, ties to the lowest index.
inline std::size_t nearest_prototype(const ObjectivePoint& target, const std::vector<Prototype>& protos) {
  if (protos.empty()) throw std::invalid_argument("snap_to_prototype: empty prototype set");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < protos.size(); ++i) {
    const double d = distance(target, protos[i].obj);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

inline const Prototype& snap_to_prototype(const ObjectivePoint& target, const std::vector<Prototype>& protos) {
  return protos[nearest_prototype(target, protos)];
}

struct History {
  std::vector<ObjectivePoint> ego_points;
  std::vector<ObjectivePoint> opp_points;
  std::vector<Action> ego_actions;
  std::vector<Action> opp_actions;
};

struct Infoset {
  std::vector<ObjectivePoint> ego_points;
  std::vector<ObjectivePoint> opp_points;
  std::vector<Action> ego_actions;

  bool operator==(const Infoset&) const = default;
};

inline Infoset infoset_of(const History& h) { return {h.ego_points, h.opp_points, h.ego_actions}; }

inline constexpr int kFeatureSize = 40;
inline constexpr int kPointSlots = 4;
inline constexpr int kActionSlots = 3;
using Features = std::array<double, kFeatureSize>;

/// Layout: ego points (4x2), opp points (4x2), ego mask (4), opp mask (4),
/// ego action one-hots (3x4), candidate one-hot (4).
inline Features encode_infoset(const Infoset& I, Action candidate, int max_moves = 3) {
  if (max_moves < 0 || max_moves > kActionSlots) throw std::invalid_argument("encode_infoset: max_moves must be in [0, 3]");
  if (static_cast<int>(I.ego_points.size()) > max_moves + 1 || static_cast<int>(I.opp_points.size()) > max_moves + 1 ||
      static_cast<int>(I.ego_actions.size()) > max_moves) {
    throw std::invalid_argument("encode_infoset: history longer than the feature slots");
  }
  Features f{};
  for (std::size_t i = 0; i < I.ego_points.size(); ++i) {
    f[2 * i] = I.ego_points[i].agg;
    f[2 * i + 1] = I.ego_points[i].res;
    f[16 + i] = 1.0;
  }
  for (std::size_t i = 0; i < I.opp_points.size(); ++i) {
    f[8 + 2 * i] = I.opp_points[i].agg;
    f[8 + 2 * i + 1] = I.opp_points[i].res;
    f[20 + i] = 1.0;
  }
  for (std::size_t i = 0; i < I.ego_actions.size(); ++i) f[24 + 4 * i + static_cast<int>(I.ego_actions[i])] = 1.0;
  f[36 + static_cast<int>(candidate)] = 1.0;
  return f;
}

/// Eq. 6 distribution; when no regret is positive, all mass goes to the
/// argmax (lowest id on ties).
inline std::vector<double> regret_match(std::span<const double> regrets) {
  if (regrets.empty()) throw std::invalid_argument("regret_match: no actions");
  std::vector<double> p(regrets.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < regrets.size(); ++i) {
    p[i] = std::max(0.0, regrets[i]);
    total += p[i];
  }
  if (total > 0.0) {
    for (auto& x : p) x /= total;
    return p;
  }
  std::fill(p.begin(), p.end(), 0.0);
  p[std::max_element(regrets.begin(), regrets.end()) - regrets.begin()] = 1.0;
  return p;
}

/// Highest regret, ties to the lowest id.
inline int argmax_action(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax_action: no actions");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

inline int pow4(int d) { return 1 << (2 * d); }

/// Action sequence of index `idx` (first move is the most significant digit).
inline std::vector<Action> sequence_of(int idx, int moves) {
  std::vector<Action> s(moves);
  for (int d = moves - 1; d >= 0; --d) {
    s[d] = static_cast<Action>(idx % kNumActions);
    idx /= kNumActions;
  }
  return s;
}

/// Terminal ego utilities over ego x opponent action sequences.
struct UtilityTable {
  int moves = 0;
  std::vector<double> value;  // row-major, ego sequence major
  std::vector<char> valid;

  UtilityTable() = default;
  explicit UtilityTable(int m) : moves(m), value(std::size_t(pow4(m)) * pow4(m), 0.0), valid(value.size(), 1) {}
  int sequences() const { return pow4(moves); }
  double& at(int e, int o) { return value[std::size_t(e) * sequences() + o]; }
  double at(int e, int o) const { return value[std::size_t(e) * sequences() + o]; }
  bool ok(int e, int o) const { return valid[std::size_t(e) * sequences() + o] != 0; }
  void set_valid(int e, int o, bool v) { valid[std::size_t(e) * sequences() + o] = v ? 1 : 0; }
  double opponent_utility(int e, int o) const { return -at(e, o); }
  double invalid_fraction() const {
    return static_cast<double>(std::count(valid.begin(), valid.end(), 0)) / static_cast<double>(valid.size());
  }
};

/// Ego decision node: its own action prefix.
struct NodeRegrets {
  std::vector<Action> prefix;
  std::array<double, kNumActions> regret{};     // sum over iterations of instantaneous regret
  std::array<double, kNumActions> value{};      // v(I, a), averaged over iterations
  double node_value = 0.0;                      // v(I)
  int iterations = 0;
};

/// Counterfactual regrets of every ego node, treating each valid opponent
/// sequence as one iteration under a uniform ego strategy. Returns nodes in
/// depth-first order of prefix index.
inline std::vector<NodeRegrets> exact_cfr(const UtilityTable& table) {
  const int M = table.moves;
  if (M < 1 || table.value.empty()) throw std::invalid_argument("exact_cfr: empty table");
  if (table.invalid_fraction() >= 0.1) throw std::runtime_error("exact_cfr: too many invalid cells");
  const int S = table.sequences();
  std::vector<NodeRegrets> out;
  for (int d = 0; d < M; ++d) {
    const int below = pow4(M - d - 1);  // ego continuations under (node, action)
    for (int node = 0; node < pow4(d); ++node) {
      NodeRegrets nr;
      nr.prefix = sequence_of(node, d);
      std::array<double, kNumActions> sum_v{};
      for (int o = 0; o < S; ++o) {
        std::array<double, kNumActions> v{};
        bool usable = true;
        for (int a = 0; a < kNumActions && usable; ++a) {
          const int first = (node * kNumActions + a) * below;
          double s = 0.0;
          int n = 0;
          for (int c = 0; c < below; ++c) {
            if (!table.ok(first + c, o)) continue;
            s += table.at(first + c, o);
            ++n;
          }
          if (n == 0) usable = false;
          else v[a] = s / n;
        }
        if (!usable) continue;
        const double vi = (v[0] + v[1] + v[2] + v[3]) / kNumActions;
        for (int a = 0; a < kNumActions; ++a) {
          nr.regret[a] += v[a] - vi;
          sum_v[a] += v[a];
        }
        ++nr.iterations;
      }
      if (nr.iterations == 0) throw std::runtime_error("exact_cfr: node without valid iterations");
      for (int a = 0; a < kNumActions; ++a) nr.value[a] = sum_v[a] / nr.iterations;
      nr.node_value = (nr.value[0] + nr.value[1] + nr.value[2] + nr.value[3]) / kNumActions;
      for (int a = 0; a < kNumActions; ++a) {
        const double closed = nr.iterations * (nr.value[a] - nr.node_value);
        if (std::abs(closed - nr.regret[a]) > 1e-9 * std::max(1.0, std::abs(closed))) {
          throw std::logic_error("exact_cfr: summed and closed-form regrets disagree");
        }
      }
      out.push_back(std::move(nr));
    }
  }
  return out;
}

inline int prefix_index(const std::vector<Action>& prefix) {
  int idx = 0;
  for (auto a : prefix) idx = idx * kNumActions + static_cast<int>(a);
  return idx;
}

/// Position in O after each decision: start, then snapped targets.
inline std::vector<std::size_t> snap_path(std::size_t start, const std::vector<Action>& actions,
                                          const std::vector<Prototype>& protos, double d_move) {
  std::vector<std::size_t> path{start};
  for (auto a : actions) path.push_back(nearest_prototype(apply_action(protos[path.back()].obj, a, d_move), protos));
  return path;
}

struct GameConfig {
  int moves = 2;
  double segment = 8.0;
  double d_move = 1.0;
  unsigned jobs = 0;
};

/// Both players of one game, as indices into the near-optimal set.
struct GamePair {
  int id = 0;
  std::size_t ego = 0;
  std::size_t opp = 0;
  Scenario scenario;
};

namespace detail {

inline void play_subtree(const Race& race, const RaceEnv& env, const GamePair& pair,
                         const std::vector<Prototype>& protos, const GameConfig& cfg, int depth, int ego_idx,
                         int opp_idx, std::size_t ego_proto, std::size_t opp_proto, UtilityTable& table) {
  Race r = race;
  advance(r, env, env.steps_for(cfg.segment));
  if (depth == cfg.moves) {
    table.at(ego_idx, opp_idx) = r.lead();
    table.set_valid(ego_idx, opp_idx, !r.world.invalid);
    return;
  }
  for (int ae = 0; ae < kNumActions; ++ae) {
    const std::size_t ne = nearest_prototype(apply_action(protos[ego_proto].obj, action_from_int(ae), cfg.d_move), protos);
    for (int ao = 0; ao < kNumActions; ++ao) {
      const std::size_t no = nearest_prototype(apply_action(protos[opp_proto].obj, action_from_int(ao), cfg.d_move), protos);
      Race child = r;
      std::get<LatticePlanner>(child.ego).set_params(protos[ne].params);
      std::get<LatticePlanner>(child.opp).set_params(protos[no].params);
      play_subtree(child, env, pair, protos, cfg, depth + 1, ego_idx * kNumActions + ae, opp_idx * kNumActions + ao,
                   ne, no, table);
    }
  }
}

}  // namespace detail

inline Race start_game(const GamePair& pair, const std::vector<Prototype>& protos, const RaceEnv& env,
                       std::uint64_t seed) {
  const auto [ego, opp] = scenario_states(pair.scenario, env);
  return start_race(env, ego, opp, make_lattice_policy(protos[pair.ego].params, env),
                    make_lattice_policy(protos[pair.opp].params, env), seed);
}

/// Plays one pair of action sequences from scratch (no sharing).
inline double play_out_game(const GamePair& pair, const std::vector<Action>& ego_seq,
                            const std::vector<Action>& opp_seq, const std::vector<Prototype>& protos,
                            const GameConfig& cfg, const RaceEnv& env, std::uint64_t seed, bool* valid = nullptr) {
  if (static_cast<int>(ego_seq.size()) != cfg.moves || static_cast<int>(opp_seq.size()) != cfg.moves) {
    throw std::invalid_argument("play_out_game: sequence length must equal moves");
  }
  Race r = start_game(pair, protos, env, seed);
  std::size_t pe = pair.ego, po = pair.opp;
  for (int d = 0; d <= cfg.moves; ++d) {
    advance(r, env, env.steps_for(cfg.segment));
    if (d == cfg.moves) break;
    pe = nearest_prototype(apply_action(protos[pe].obj, ego_seq[d], cfg.d_move), protos);
    po = nearest_prototype(apply_action(protos[po].obj, opp_seq[d], cfg.d_move), protos);
    std::get<LatticePlanner>(r.ego).set_params(protos[pe].params);
    std::get<LatticePlanner>(r.opp).set_params(protos[po].params);
  }
  if (valid) *valid = !r.world.invalid;
  return r.lead();
}

/// Fills the whole utility table, sharing simulated prefixes: the game
/// state after d decisions depends only on the two length-d prefixes.
inline UtilityTable self_play(const GamePair& pair, const std::vector<Prototype>& protos, const GameConfig& cfg,
                              const RaceEnv& env, std::uint64_t seed) {
  if (cfg.moves < 1 || cfg.moves > kActionSlots) throw std::invalid_argument("self_play: moves must be in [1, 3]");
  UtilityTable table(cfg.moves);
  const Race root = start_game(pair, protos, env, seed);
  detail::play_subtree(root, env, pair, protos, cfg, 0, 0, 0, pair.ego, pair.opp, table);
  return table;
}

struct RegretSample {
  Features features{};
  double target = 0.0;
  int pair = 0;
};

/// One sample per (ego node, distinct opponent position history of the
/// same depth, action). Positions are the snapped prototype coordinates.
inline std::vector<RegretSample> samples_from_table(const UtilityTable& table, const GamePair& pair,
                                                    const std::vector<Prototype>& protos, double d_move) {
  const auto nodes = exact_cfr(table);
  std::vector<RegretSample> out;
  for (const auto& nr : nodes) {
    const int d = static_cast<int>(nr.prefix.size());
    const auto ego_path = snap_path(pair.ego, nr.prefix, protos, d_move);
    std::vector<std::vector<std::size_t>> opp_histories;
    for (int o = 0; o < pow4(d); ++o) {
      auto h = snap_path(pair.opp, sequence_of(o, d), protos, d_move);
      if (std::find(opp_histories.begin(), opp_histories.end(), h) == opp_histories.end()) opp_histories.push_back(h);
    }
    for (const auto& oh : opp_histories) {
      Infoset I;
      for (auto i : ego_path) I.ego_points.push_back(protos[i].obj);
      for (auto i : oh) I.opp_points.push_back(protos[i].obj);
      I.ego_actions = nr.prefix;
      for (int a = 0; a < kNumActions; ++a) {
        out.push_back({encode_infoset(I, action_from_int(a), kActionSlots), nr.regret[a], pair.id});
      }
    }
  }
  return out;
}

/// Side-by-side start at raceline station s; the ego is on the left when
/// `ego_left`.
inline Scenario start_line(const RaceEnv& env, double station, bool ego_left, double half_gap = 0.35,
                           double speed_fraction = 0.5) {
  const double e = ego_left ? half_gap : -half_gap;
  return make_scenario(env, station, 0.0, e, -e, speed_fraction);
}

/// DPP1 x DPP2 pairs, each with its own random start line.
inline std::vector<GamePair> make_game_pairs(const PrototypeSets& sets, int max_pairs, const RaceEnv& env,
                                             std::uint64_t seed) {
  std::vector<GamePair> pairs;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& e : sets.dpp1) {
    for (const auto& o : sets.dpp2) {
      if (max_pairs > 0 && static_cast<int>(pairs.size()) >= max_pairs) return pairs;
      GamePair p;
      p.id = static_cast<int>(pairs.size());
      p.ego = static_cast<std::size_t>(e.id);
      p.opp = static_cast<std::size_t>(o.id);
      const double station = unit(rng) * env.raceline->total_length();
      p.scenario = start_line(env, station, unit(rng) < 0.5);
      pairs.push_back(p);
    }
  }
  return pairs;
}

struct SelfPlayResult {
  std::vector<GamePair> pairs;
  std::vector<UtilityTable> tables;
  std::vector<RegretSample> samples;
};

inline SelfPlayResult build_dataset(const PrototypeSets& sets, const GameConfig& cfg, int max_pairs,
                                    const RaceEnv& env, std::uint64_t seed) {
  for (const auto& a : sets.dpp1) {
    for (const auto& b : sets.dpp2) {
      if (a.id == b.id) throw std::invalid_argument("build_dataset: DPP1 and DPP2 must be disjoint");
    }
  }
  SelfPlayResult r;
  r.pairs = make_game_pairs(sets, max_pairs, env, derive_seed(seed, {0}));
  r.tables.resize(r.pairs.size());
  parallel_for(r.pairs.size(), cfg.jobs, [&](std::size_t i) {
    r.tables[i] = self_play(r.pairs[i], sets.near_optimal, cfg, env, derive_seed(seed, {1, i}));
  });
  for (std::size_t i = 0; i < r.pairs.size(); ++i) {
    auto s = samples_from_table(r.tables[i], r.pairs[i], sets.near_optimal, cfg.d_move);
    r.samples.insert(r.samples.end(), s.begin(), s.end());
  }
  return r;
}

inline std::vector<std::string> dataset_header() {
  std::vector<std::string> h;
  for (int i = 0; i < kFeatureSize; ++i) h.push_back("f" + std::to_string(i));
  h.emplace_back("regret");
  return h;
}

inline void save_dataset(std::ostream& out, const std::vector<RegretSample>& samples) {
  csv::write_row(out, dataset_header());
  for (const auto& s : samples) {
    std::vector<std::string> row;
    row.reserve(kFeatureSize + 1);
    for (double v : s.features) row.push_back(csv::fmt(v));
    row.push_back(csv::fmt(s.target));
    csv::write_row(out, row);
  }
}

inline std::vector<RegretSample> load_dataset(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  if (t.header != dataset_header()) throw std::runtime_error(path.string() + ": not a regret dataset (41 columns expected)");
  std::vector<RegretSample> out;
  for (const auto& row : t.rows) {
    RegretSample s;
    for (int i = 0; i < kFeatureSize; ++i) s.features[i] = csv::to_double(row[i], path.string());
    s.target = csv::to_double(row[kFeatureSize], path.string());
    out.push_back(s);
  }
  return out;
}

inline void save_utility_table(std::ostream& out, const UtilityTable& t) {
  std::vector<std::string> header{"ego_seq"};
  for (int o = 0; o < t.sequences(); ++o) header.push_back("o" + std::to_string(o));
  csv::write_row(out, header);
  for (int e = 0; e < t.sequences(); ++e) {
    std::vector<std::string> row{std::to_string(e)};
    for (int o = 0; o < t.sequences(); ++o) row.push_back(t.ok(e, o) ? csv::fmt(t.at(e, o)) : "nan");
    csv::write_row(out, row);
  }
}

}  // namespace objrace
