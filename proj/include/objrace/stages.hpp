#pragma once

// File-to-file pipeline stages shared by the command line tool and the
// end-to-end tests. Every output records the settings that produced it;
// only file names (not directories) are recorded so reruns in another
// directory produce identical bytes.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "objrace/evo.hpp"
#include "objrace/game.hpp"
#include "objrace/harness.hpp"
#include "objrace/mlp.hpp"

namespace objrace::stages {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

inline void write_config_comments(std::ostream& out, const nlohmann::ordered_json& cfg) {
  csv::write_comment(out, "config " + cfg.dump());
}

inline std::string name_of(const fs::path& p) { return p.filename().string(); }

struct OptimizeOptions {
  fs::path map_dir;
  fs::path vehicle;
  fs::path out_dir;
  OptimizeConfig cfg;
};

inline void optimize(const OptimizeOptions& o, std::ostream& log) {
  const auto env = load_env(o.map_dir, o.vehicle);
  nlohmann::ordered_json cfg{{"stage", "optimize"},        {"map", env.map_id},
                             {"generations", o.cfg.generations}, {"pop", o.cfg.pop},
                             {"scenarios", o.cfg.scenarios}, {"seed", o.cfg.seed},
                             {"sigma0", o.cfg.sigma0},       {"duration", o.cfg.duration}};
  std::ostringstream gen_log;
  csv::write_row(gen_log, {"generation", "sigma", "best_fitness", "front_size"});
  const auto res = run_optimize(env, o.cfg, [&](int g, const OptimizeResult& r) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.archive.all_explored()) {
      if (e.generation == g) best = std::min(best, scalarize(e.obj));
    }
    csv::write_row(gen_log, {std::to_string(g), csv::fmt(r.cma.sigma), csv::fmt(best),
                             std::to_string(r.archive.entries().size())});
    log << "generation " << g << ": best " << best << ", front " << r.archive.entries().size()
        << ", sigma " << r.cma.sigma << '\n';
  });
  {
    auto out = open_out(o.out_dir / "archive.csv");
    write_config_comments(out, cfg);
    save_archive(out, res.archive);
  }
  {
    auto out = open_out(o.out_dir / "scenarios.csv");
    write_config_comments(out, cfg);
    save_scenarios(out, res.scenarios, res.opponents);
  }
  {
    auto out = open_out(o.out_dir / "generations.csv");
    write_config_comments(out, cfg);
    out << gen_log.str();
  }
}

struct PrototypeOptions {
  fs::path archive;
  fs::path out;
  double d_near = 0.3;
  int n_dpp = 20;
  double bandwidth = 0.5;
  std::uint64_t seed = 1;
};

inline PrototypeSets prototypes(const PrototypeOptions& o, std::ostream& log) {
  const auto archive = load_archive(o.archive);
  const auto sets = extract_prototypes(archive, o.d_near, o.n_dpp, o.bandwidth, o.seed);
  log << "front " << sets.pf.size() << ", near-optimal " << sets.near_optimal.size() << ", dpp " << sets.dpp1.size()
      << " + " << sets.dpp2.size() << '\n';
  auto out = open_out(o.out);
  write_config_comments(out, {{"stage", "prototypes"}, {"archive", name_of(o.archive)}, {"d_near", o.d_near},
                              {"n_dpp", o.n_dpp}, {"bandwidth", o.bandwidth}, {"seed", o.seed}});
  save_prototypes(out, sets);
  return sets;
}

struct SelfPlayOptions {
  fs::path map_dir;
  fs::path vehicle;
  fs::path prototypes;
  fs::path out_dir;
  GameConfig game;
  int pairs = 0;  // 0: every DPP1 x DPP2 pair
  std::uint64_t seed = 1;
};

inline SelfPlayResult selfplay(const SelfPlayOptions& o, std::ostream& log) {
  const auto env = load_env(o.map_dir, o.vehicle);
  const auto sets = load_prototypes(o.prototypes);
  auto res = build_dataset(sets, o.game, o.pairs, env, o.seed);
  const nlohmann::ordered_json cfg{{"stage", "selfplay"},      {"map", env.map_id},
                                   {"prototypes", name_of(o.prototypes)}, {"moves", o.game.moves},
                                   {"segment_s", o.game.segment}, {"d_move", o.game.d_move},
                                   {"pairs", res.pairs.size()},  {"seed", o.seed}};
  {
    auto out = open_out(o.out_dir / "dataset.csv");
    write_config_comments(out, cfg);
    save_dataset(out, res.samples);
  }
  {
    auto out = open_out(o.out_dir / "pairs.csv");
    write_config_comments(out, cfg);
    csv::write_row(out, {"pair", "ego_proto", "opp_proto", "station", "ego_offset", "invalid_fraction"});
    for (std::size_t i = 0; i < res.pairs.size(); ++i) {
      const auto& p = res.pairs[i];
      csv::write_row(out, {std::to_string(p.id), std::to_string(p.ego), std::to_string(p.opp),
                           csv::fmt(p.scenario.station), csv::fmt(p.scenario.ego_offset),
                           csv::fmt(res.tables[i].invalid_fraction())});
    }
  }
  for (std::size_t i = 0; i < res.pairs.size(); ++i) {
    auto out = open_out(o.out_dir / "tables" / ("pair_" + std::to_string(res.pairs[i].id) + ".csv"));
    write_config_comments(out, cfg);
    save_utility_table(out, res.tables[i]);
  }
  log << res.pairs.size() << " pairs, " << res.samples.size() << " samples\n";
  return res;
}

struct TrainOptions {
  fs::path dataset;
  fs::path out_dir;
  TrainConfig cfg;
};

inline TrainResult train(const TrainOptions& o, std::ostream& log) {
  const auto samples = load_dataset(o.dataset);
  if (samples.empty()) throw std::runtime_error("train: dataset is empty");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(samples.size()), kFeatureSize);
  Eigen::VectorXd t(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int j = 0; j < kFeatureSize; ++j) X(static_cast<Eigen::Index>(i), j) = samples[i].features[j];
    t[static_cast<Eigen::Index>(i)] = samples[i].target;
  }
  auto res = train_mlp(X, t, o.cfg);
  {
    auto out = open_out(o.out_dir / "model.txt");
    save_mlp(out, res.best);
  }
  {
    auto out = open_out(o.out_dir / "loss.csv");
    write_config_comments(out, {{"stage", "train"}, {"dataset", name_of(o.dataset)}, {"hidden", o.cfg.hidden},
                                {"lr", o.cfg.lr0}, {"batch", o.cfg.batch}, {"epochs", o.cfg.epochs},
                                {"patience", o.cfg.plateau_patience}, {"lr_factor", o.cfg.lr_factor},
                                {"slope", o.cfg.leaky_slope}, {"val_fraction", o.cfg.val_fraction},
                                {"seed", o.cfg.seed}, {"best_epoch", res.best_epoch}});
    save_loss_curve(out, res.curve);
  }
  const auto& last = res.curve.back();
  log << "epochs " << last.epoch << ", final train L1 " << last.train_l1 << ", val L1 " << last.val_l1
      << ", best epoch " << res.best_epoch << '\n';
  return res;
}

struct RaceOptions {
  fs::path map_dir;
  fs::path vehicle;
  fs::path prototypes;
  fs::path model;
  fs::path archive;  // needed for random opponents
  fs::path out;
  fs::path trace_dir;  // optional per-race traces
  MatchSpec spec;
  std::uint64_t seed = 1;
};

inline std::vector<RaceRecord> race(const RaceOptions& o, std::ostream& log) {
  const auto env = load_env(o.map_dir, o.vehicle);
  const auto sets = load_prototypes(o.prototypes);
  std::vector<ArchiveEntry> explored;
  if (!o.archive.empty()) explored = load_archive(o.archive).all_explored();
  MlpParams model;
  RegretScorer scorer;
  if (o.spec.ego == EgoKind::gt) {
    model = load_mlp_file(o.model);
    scorer = mlp_scorer(model);
  }
  const auto pairings = make_pairings(sets, o.spec.opponent, explored, derive_seed(o.seed, {9}));
  const auto log_rows = run_match(o.spec, pairings, sets, scorer, env, o.seed);
  auto out = open_out(o.out);
  write_config_comments(out, {{"stage", "race"},
                              {"ego", to_string(o.spec.ego)},
                              {"opponent", to_string(o.spec.opponent)},
                              {"map", env.map_id},
                              {"prototypes", name_of(o.prototypes)},
                              {"model", o.spec.ego == EgoKind::gt ? name_of(o.model) : ""},
                              {"starts", o.spec.starts},
                              {"alternation", o.spec.alternation},
                              {"moves", o.spec.moves},
                              {"segment_s", o.spec.segment},
                              {"seed", o.seed}});
  save_race_log(out, log_rows);
  if (!o.trace_dir.empty()) {
    OnlineContext ctx{&sets.near_optimal, scorer, o.spec.moves, o.spec.segment, o.spec.d_move};
    for (const auto& pr : pairings) {
      const auto sc = start_line(env, start_station(env, 0, o.seed), true);
      DriverSpec ego = o.spec.ego == EgoKind::gt ? DriverSpec{DriverKind::gt, {}, pr.ego_proto}
                                                  : DriverSpec{DriverKind::fixed, sets.near_optimal.at(pr.ego_proto).params, 0};
      const auto outcome = run_online(ego, pr.opponent, sc, ctx, env, derive_seed(o.seed, {8, 0}));
      auto tout = open_out(o.trace_dir / ("trace_pairing_" + std::to_string(pr.id) + ".csv"));
      save_trace(tout, outcome, sets.near_optimal.at(pr.ego_proto).obj);
    }
  }
  double credit = 0.0;
  for (const auto& r : log_rows) credit += r.ego_credit;
  log << log_rows.size() << " races, mean ego credit " << credit / static_cast<double>(log_rows.size()) << '\n';
  return log_rows;
}

inline std::string summary(const RaceReport& r) {
  std::ostringstream s;
  s << r.treatment.ego_kind << " vs " << r.treatment.opponent_kind << " on " << r.treatment.map_id << ": win rate "
    << r.treatment.mean << " +- " << r.treatment.std << " over " << r.treatment.races << " races";
  if (r.baseline) s << "; " << r.baseline->ego_kind << ": " << r.baseline->mean << " +- " << r.baseline->std;
  if (r.test) s << "; paired t " << r.test->t << ", p " << r.test->p;
  return s.str();
}

struct ReportOptions {
  fs::path races;
  fs::path baseline;
  fs::path out_prefix;
};

inline RaceReport report(const ReportOptions& o, std::ostream& log) {
  const auto treatment = load_race_log(o.races);
  if (treatment.empty()) throw std::runtime_error("report: race log " + o.races.string() + " has no races");
  std::vector<RaceRecord> baseline;
  if (!o.baseline.empty()) {
    baseline = load_race_log(o.baseline);
    if (baseline.empty()) throw std::runtime_error("report: baseline log has no races");
  }
  const auto rep = make_report(treatment, baseline);
  nlohmann::ordered_json cfg{{"stage", "report"}, {"races", name_of(o.races)}};
  if (!o.baseline.empty()) cfg["baseline"] = name_of(o.baseline);
  {
    auto out = open_out(fs::path(o.out_prefix.string() + ".json"));
    out << report_json(rep, cfg).dump(2) << '\n';
  }
  {
    auto out = open_out(fs::path(o.out_prefix.string() + ".csv"));
    write_config_comments(out, cfg);
    save_report_csv(out, rep);
  }
  log << summary(rep) << '\n';
  return rep;
}

}  // namespace objrace::stages
