// Command line driver for every pipeline stage.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "objrace/stages.hpp"

namespace st = objrace::stages;

int main(int argc, char** argv) {
  CLI::App app{"objective-space racing pipeline"};
  app.require_subcommand(1);
  unsigned jobs = 0;
  app.add_option("--jobs", jobs, "worker threads (0: all cores)");

  st::OptimizeOptions opt;
  std::string opt_map, opt_out, opt_vehicle;
  auto* c_opt = app.add_subcommand("optimize", "CMA-ES agent optimization with a Pareto archive");
  c_opt->add_option("--map", opt_map, "map directory")->required();
  c_opt->add_option("--vehicle", opt_vehicle, "vehicle config file");
  c_opt->add_option("--generations", opt.cfg.generations)->capture_default_str();
  c_opt->add_option("--pop", opt.cfg.pop)->capture_default_str();
  c_opt->add_option("--scenarios", opt.cfg.scenarios)->capture_default_str();
  c_opt->add_option("--sigma0", opt.cfg.sigma0)->capture_default_str();
  c_opt->add_option("--seed", opt.cfg.seed)->capture_default_str();
  c_opt->add_option("--out", opt_out, "output directory")->required();

  st::PrototypeOptions pro;
  std::string pro_archive, pro_out;
  auto* c_pro = app.add_subcommand("prototypes", "front, near-optimal set and two disjoint k-DPP subsets");
  c_pro->add_option("--archive", pro_archive)->required();
  c_pro->add_option("--d-near", pro.d_near)->capture_default_str();
  c_pro->add_option("--n-dpp", pro.n_dpp)->capture_default_str();
  c_pro->add_option("--bandwidth", pro.bandwidth)->capture_default_str();
  c_pro->add_option("--seed", pro.seed)->capture_default_str();
  c_pro->add_option("--out", pro_out)->required();

  st::SelfPlayOptions sp;
  std::string sp_map, sp_vehicle, sp_protos, sp_out;
  auto* c_sp = app.add_subcommand("selfplay", "exhaustive self-play and regret dataset");
  c_sp->add_option("--map", sp_map)->required();
  c_sp->add_option("--vehicle", sp_vehicle);
  c_sp->add_option("--prototypes", sp_protos)->required();
  c_sp->add_option("--moves", sp.game.moves)->capture_default_str();
  c_sp->add_option("--segment-s", sp.game.segment)->capture_default_str();
  c_sp->add_option("--d-move", sp.game.d_move)->capture_default_str();
  c_sp->add_option("--pairs", sp.pairs, "number of DPP1 x DPP2 pairs (0: all)")->capture_default_str();
  c_sp->add_option("--seed", sp.seed)->capture_default_str();
  c_sp->add_option("--out", sp_out)->required();

  st::TrainOptions tr;
  std::string tr_data, tr_out;
  auto* c_tr = app.add_subcommand("train", "fit the regret model");
  c_tr->add_option("--dataset", tr_data)->required();
  c_tr->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  c_tr->add_option("--batch", tr.cfg.batch)->capture_default_str();
  c_tr->add_option("--lr", tr.cfg.lr0)->capture_default_str();
  c_tr->add_option("--hidden", tr.cfg.hidden)->capture_default_str();
  c_tr->add_option("--patience", tr.cfg.plateau_patience)->capture_default_str();
  c_tr->add_option("--seed", tr.cfg.seed)->capture_default_str();
  c_tr->add_option("--out", tr_out)->required();

  st::RaceOptions ra;
  std::string ra_ego = "gt", ra_opp = "fixed", ra_map, ra_vehicle, ra_protos, ra_model, ra_archive, ra_out, ra_trace;
  bool no_alternation = false;
  auto* c_ra = app.add_subcommand("race", "head-to-head races");
  c_ra->add_option("--ego", ra_ego)->check(CLI::IsMember({"gt", "fixed"}))->capture_default_str();
  c_ra->add_option("--opponent", ra_opp)->check(CLI::IsMember({"fixed", "random", "laneswitch"}))->capture_default_str();
  c_ra->add_option("--map", ra_map)->required();
  c_ra->add_option("--vehicle", ra_vehicle);
  c_ra->add_option("--prototypes", ra_protos)->required();
  c_ra->add_option("--model", ra_model, "regret model (required for --ego gt)");
  c_ra->add_option("--archive", ra_archive, "archive (required for --opponent random)");
  c_ra->add_option("--starts", ra.spec.starts)->capture_default_str();
  c_ra->add_flag("--no-alternation", no_alternation);
  c_ra->add_option("--moves", ra.spec.moves)->capture_default_str();
  c_ra->add_option("--segment-s", ra.spec.segment)->capture_default_str();
  c_ra->add_option("--seed", ra.seed)->capture_default_str();
  c_ra->add_option("--trace-dir", ra_trace, "write one trace per pairing");
  c_ra->add_option("--out", ra_out, "race log CSV")->required();

  st::ReportOptions rep;
  std::string rep_races, rep_base, rep_out;
  auto* c_rep = app.add_subcommand("report", "win rates and paired t-test from race logs");
  c_rep->add_option("--races", rep_races, "race log of the game-theoretic ego")->required();
  c_rep->add_option("--baseline", rep_base, "race log of the fixed ego on the same pairings");
  c_rep->add_option("--out", rep_out, "output prefix (.json and .csv)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_opt) {
      opt.map_dir = opt_map;
      opt.vehicle = opt_vehicle;
      opt.out_dir = opt_out;
      opt.cfg.jobs = jobs;
      st::optimize(opt, std::cerr);
    } else if (*c_pro) {
      pro.archive = pro_archive;
      pro.out = pro_out;
      st::prototypes(pro, std::cerr);
    } else if (*c_sp) {
      sp.map_dir = sp_map;
      sp.vehicle = sp_vehicle;
      sp.prototypes = sp_protos;
      sp.out_dir = sp_out;
      sp.game.jobs = jobs;
      st::selfplay(sp, std::cerr);
    } else if (*c_tr) {
      tr.dataset = tr_data;
      tr.out_dir = tr_out;
      st::train(tr, std::cerr);
    } else if (*c_ra) {
      ra.map_dir = ra_map;
      ra.vehicle = ra_vehicle;
      ra.prototypes = ra_protos;
      ra.model = ra_model;
      ra.archive = ra_archive;
      ra.out = ra_out;
      ra.trace_dir = ra_trace;
      ra.spec.ego = ra_ego == "gt" ? objrace::EgoKind::gt : objrace::EgoKind::fixed;
      ra.spec.opponent = ra_opp == "fixed"  ? objrace::OpponentKind::fixed_dpp2
                         : ra_opp == "random" ? objrace::OpponentKind::random_explored
                                              : objrace::OpponentKind::lane_switcher;
      ra.spec.alternation = !no_alternation;
      ra.spec.jobs = jobs;
      if (ra.spec.ego == objrace::EgoKind::gt && ra_model.empty()) {
        std::cerr << "race: --model is required for --ego gt\n";
        return 2;
      }
      st::race(ra, std::cerr);
    } else if (*c_rep) {
      rep.races = rep_races;
      rep.baseline = rep_base;
      rep.out_prefix = rep_out;
      st::report(rep, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
