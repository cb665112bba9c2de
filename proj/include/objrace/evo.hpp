#pragma once

// Offline agent optimization: sigmoid genome encoding, CMA-ES driven batch
// evaluation, prototype subset extraction, and their CSV files.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "objrace/cmaes.hpp"
#include "objrace/csv.hpp"
#include "objrace/dpp.hpp"
#include "objrace/parallel.hpp"
#include "objrace/pareto.hpp"
#include "objrace/planner.hpp"
#include "objrace/rollout.hpp"
#include "objrace/seed.hpp"

namespace objrace {

inline AgentParams decode_genome(const Eigen::VectorXd& x) {
  if (x.size() != AgentParams::kSize) throw std::invalid_argument("decode_genome: expected 8 values");
  std::array<double, AgentParams::kSize> v{};
  for (int i = 0; i < AgentParams::kSize; ++i) {
    const double lo = AgentParams::lower(i), hi = AgentParams::upper(i);
    v[i] = std::clamp(lo + (hi - lo) / (1.0 + std::exp(-x[i])), lo, hi);
  }
  return AgentParams::from_array(v);
}

inline Eigen::VectorXd encode_genome(const AgentParams& p) {
  const auto a = p.to_array();
  Eigen::VectorXd x(AgentParams::kSize);
  for (int i = 0; i < AgentParams::kSize; ++i) {
    const double lo = AgentParams::lower(i), hi = AgentParams::upper(i);
    const double t = std::clamp((a[i] - lo) / (hi - lo), 1e-12, 1.0 - 1e-12);
    x[i] = std::log(t / (1.0 - t));
  }
  return x;
}

/// Mean objectives of one agent over an opponent/scenario batch.
struct BatchResult {
  ObjectivePoint mean;
  double overtake_rate = 0.0;
  double crash_rate = 0.0;
  int invalid = 0;
};

inline BatchResult evaluate_batch(const AgentParams& ego, const std::vector<Scenario>& scenarios,
                                  const std::vector<AgentParams>& opponents, double duration,
                                  std::uint64_t seed, const RaceEnv& env, unsigned jobs = 1) {
  if (scenarios.empty() || scenarios.size() != opponents.size()) {
    throw std::invalid_argument("evaluate_batch: need one opponent per scenario");
  }
  std::vector<RolloutResult> res(scenarios.size());
  parallel_for(scenarios.size(), jobs, [&](std::size_t i) {
    res[i] = evaluate_rollout(ego, opponents[i], scenarios[i], duration, derive_seed(seed, {i}), env);
  });
  BatchResult b;
  for (const auto& r : res) {
    b.mean.agg += r.objectives.agg;
    b.mean.res += r.objectives.res;
    b.overtake_rate += r.overtake;
    b.crash_rate += r.ego_crashed_into_opp || r.ego_map_collision || r.invalid;
    b.invalid += r.invalid;
  }
  const double n = static_cast<double>(res.size());
  b.mean.agg /= n;
  b.mean.res /= n;
  b.overtake_rate /= n;
  b.crash_rate /= n;
  return b;
}

struct OptimizeConfig {
  int generations = 30;
  int pop = 20;
  int scenarios = 24;
  std::uint64_t seed = 1;
  double sigma0 = 1.0;
  double duration = 8.0;
  unsigned jobs = 0;
};

struct OptimizeResult {
  ParetoArchive archive;
  CmaState cma;
  std::vector<Scenario> scenarios;
  std::vector<AgentParams> opponents;
};

/// One CMA-ES run from the center of the parameter box. Each genome is
/// evaluated on the whole scenario set; genomes of one generation are
/// evaluated in parallel and archived in genome order.
inline OptimizeResult run_optimize(const RaceEnv& env, const OptimizeConfig& cfg,
                                   const std::function<void(int, const OptimizeResult&)>& on_generation = {}) {
  if (cfg.generations < 1 || cfg.pop < 2 || cfg.scenarios < 1) {
    throw std::invalid_argument("run_optimize: generations >= 1, pop >= 2, scenarios >= 1 required");
  }
  OptimizeResult out;
  std::tie(out.scenarios, out.opponents) = make_scenario_set(env, cfg.scenarios, derive_seed(cfg.seed, {0}));
  out.cma = cma_init(Eigen::VectorXd::Zero(AgentParams::kSize), cfg.sigma0, cfg.pop);
  for (int g = 0; g < cfg.generations; ++g) {
    const auto genomes = cma_ask(out.cma, derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(g)}));
    const std::size_t n_roll = genomes.size() * out.scenarios.size();
    std::vector<RolloutResult> results(n_roll);
    parallel_for(n_roll, cfg.jobs, [&](std::size_t k) {
      const std::size_t gi = k / out.scenarios.size(), si = k % out.scenarios.size();
      results[k] = evaluate_rollout(decode_genome(genomes[gi]), out.opponents[si], out.scenarios[si],
                                    cfg.duration, derive_seed(cfg.seed, {2, si}), env);
    });
    std::vector<double> fitness(genomes.size());
    for (std::size_t gi = 0; gi < genomes.size(); ++gi) {
      ObjectivePoint m;
      for (std::size_t si = 0; si < out.scenarios.size(); ++si) {
        m.agg += results[gi * out.scenarios.size() + si].objectives.agg;
        m.res += results[gi * out.scenarios.size() + si].objectives.res;
      }
      m.agg /= static_cast<double>(out.scenarios.size());
      m.res /= static_cast<double>(out.scenarios.size());
      fitness[gi] = scalarize(m);
      out.archive.insert({decode_genome(genomes[gi]), m, g, static_cast<int>(gi)});
    }
    cma_tell(out.cma, genomes, fitness);
    if (on_generation) on_generation(g, out);
  }
  return out;
}

inline std::vector<std::string> agent_header() {
  return {AgentParams::kNames.begin(), AgentParams::kNames.end()};
}

inline void append_agent(std::vector<std::string>& row, const AgentParams& p) {
  for (double v : p.to_array()) row.push_back(csv::fmt(v));
}

inline AgentParams read_agent(const csv::Table& t, const std::vector<std::string>& row, const std::string& src) {
  std::array<double, AgentParams::kSize> v{};
  for (int k = 0; k < AgentParams::kSize; ++k) v[k] = csv::to_double(row[t.require_column(AgentParams::kNames[k])], src);
  return AgentParams::from_array(v);
}

inline void save_archive(std::ostream& out, const ParetoArchive& a) {
  auto header = agent_header();
  for (const char* c : {"agg", "res", "generation", "genome_id"}) header.emplace_back(c);
  csv::write_row(out, header);
  for (const auto& e : a.all_explored()) {
    std::vector<std::string> row;
    append_agent(row, e.params);
    row.push_back(csv::fmt(e.obj.agg));
    row.push_back(csv::fmt(e.obj.res));
    row.push_back(std::to_string(e.generation));
    row.push_back(std::to_string(e.genome_id));
    csv::write_row(out, row);
  }
}

/// Rebuilds the archive by re-inserting every explored entry in file order.
inline ParetoArchive load_archive(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  ParetoArchive a;
  const std::string src = path.string();
  for (const auto& row : t.rows) {
    ArchiveEntry e;
    e.params = read_agent(t, row, src);
    e.obj = {csv::to_double(row[t.require_column("agg")], src), csv::to_double(row[t.require_column("res")], src)};
    e.generation = static_cast<int>(csv::to_double(row[t.require_column("generation")], src));
    e.genome_id = static_cast<int>(csv::to_double(row[t.require_column("genome_id")], src));
    a.insert(e);
  }
  return a;
}

/// An optimized agent the online planner can switch to. `id` indexes the
/// near-optimal set.
struct Prototype {
  int id = 0;
  AgentParams params;
  ObjectivePoint obj;
};

struct PrototypeSets {
  std::vector<Prototype> pf;
  std::vector<Prototype> near_optimal;
  std::vector<Prototype> dpp1;
  std::vector<Prototype> dpp2;
};

/// Front, near-optimal set, and two disjoint k-DPP draws from the latter.
inline PrototypeSets extract_prototypes(const ParetoArchive& archive, double d_near, int n_dpp,
                                        double bandwidth, std::uint64_t seed) {
  PrototypeSets s;
  const auto no = near_optimal_set(archive, d_near);
  for (std::size_t i = 0; i < no.size(); ++i) s.near_optimal.push_back({static_cast<int>(i), no[i].params, no[i].obj});
  for (const auto& f : archive.entries()) {
    for (std::size_t i = 0; i < no.size(); ++i) {
      if (no[i].generation == f.generation && no[i].genome_id == f.genome_id) {
        s.pf.push_back(s.near_optimal[i]);
        break;
      }
    }
  }
  std::sort(s.pf.begin(), s.pf.end(), [](const Prototype& a, const Prototype& b) { return a.id < b.id; });
  if (2 * n_dpp > static_cast<int>(no.size())) {
    throw std::runtime_error("extract_prototypes: near-optimal set has " + std::to_string(no.size()) +
                             " agents, fewer than two disjoint draws of " + std::to_string(n_dpp));
  }
  std::vector<ObjectivePoint> pts;
  for (const auto& p : s.near_optimal) pts.push_back(p.obj);
  const auto first = dpp_sample(pts, n_dpp, bandwidth, derive_seed(seed, {1}));
  std::vector<int> rest;
  std::vector<ObjectivePoint> rest_pts;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    if (std::find(first.begin(), first.end(), i) == first.end()) {
      rest.push_back(i);
      rest_pts.push_back(pts[i]);
    }
  }
  const auto second = dpp_sample(rest_pts, n_dpp, bandwidth, derive_seed(seed, {2}));
  for (int i : first) s.dpp1.push_back(s.near_optimal[i]);
  for (int i : second) s.dpp2.push_back(s.near_optimal[rest[i]]);
  return s;
}

inline void save_prototypes(std::ostream& out, const PrototypeSets& s) {
  std::vector<std::string> header{"set", "id"};
  for (auto& h : agent_header()) header.push_back(h);
  header.emplace_back("agg");
  header.emplace_back("res");
  csv::write_row(out, header);
  const auto emit = [&](const char* label, const std::vector<Prototype>& v) {
    for (const auto& p : v) {
      std::vector<std::string> row{label, std::to_string(p.id)};
      append_agent(row, p.params);
      row.push_back(csv::fmt(p.obj.agg));
      row.push_back(csv::fmt(p.obj.res));
      csv::write_row(out, row);
    }
  };
  emit("near_optimal", s.near_optimal);
  emit("pf", s.pf);
  emit("dpp1", s.dpp1);
  emit("dpp2", s.dpp2);
}

inline PrototypeSets load_prototypes(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const std::string src = path.string();
  PrototypeSets s;
  std::map<std::string, std::vector<Prototype>*> sets{
      {"near_optimal", &s.near_optimal}, {"pf", &s.pf}, {"dpp1", &s.dpp1}, {"dpp2", &s.dpp2}};
  for (const auto& row : t.rows) {
    const auto it = sets.find(row[t.require_column("set")]);
    if (it == sets.end()) throw std::runtime_error(src + ": unknown prototype set '" + row[0] + "'");
    Prototype p;
    p.id = static_cast<int>(csv::to_double(row[t.require_column("id")], src));
    p.params = read_agent(t, row, src);
    p.obj = {csv::to_double(row[t.require_column("agg")], src), csv::to_double(row[t.require_column("res")], src)};
    it->second->push_back(p);
  }
  for (std::size_t i = 0; i < s.near_optimal.size(); ++i) {
    if (s.near_optimal[i].id != static_cast<int>(i)) throw std::runtime_error(src + ": near_optimal ids must be 0..n-1");
  }
  return s;
}

}  // namespace objrace
