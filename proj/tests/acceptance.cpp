// One PASS/FAIL line per acceptance criterion. Criteria 3 and 9 to 11 use
// the artifacts of two full desk pipeline runs driven through the CLI.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <json.hpp>
#include <sstream>

#include "objrace/cmaes.hpp"
#include "objrace/dpp.hpp"
#include "objrace/evo.hpp"
#include "objrace/game.hpp"
#include "objrace/mlp.hpp"
#include "objrace/objectives.hpp"
#include "objrace/pareto.hpp"
#include "objrace/sim.hpp"

using namespace objrace;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// ---- 1: exact CFR against literal enumeration of the regret sums

double tree_value(const UtilityTable& t, int prefix, int depth, int o) {
  if (depth == t.moves) return t.at(prefix, o);
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) acc += 0.25 * tree_value(t, prefix * kNumActions + a, depth + 1, o);
  return acc;
}

Outcome cfr_oracle() {
  Timer timer;
  std::mt19937_64 rng(101);
  std::normal_distribution<double> g(0.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    UtilityTable t(2 + trial % 2);
    for (auto& v : t.value) v = g(rng);
    for (const auto& n : exact_cfr(t)) {
      const int d = static_cast<int>(n.prefix.size());
      const int node = prefix_index(n.prefix);
      for (int a = 0; a < kNumActions; ++a) {
        double r = 0.0;
        for (int o = 0; o < t.sequences(); ++o) {
          r += tree_value(t, node * kNumActions + a, d + 1, o) - tree_value(t, node, d, o);
        }
        worst = std::max(worst, std::abs(r - n.regret[a]));
      }
    }
  }
  const double s = timer.seconds();
  return {worst <= 1e-9 && s < 10.0, "max error " + num(worst) + ", " + num(s, 3) + " s"};
}

// ---- 2: regret matching

Outcome regret_matching() {
  Timer timer;
  std::mt19937_64 rng(202);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  int bad = 0, fallbacks = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> r(4);
    for (auto& x : r) x = g(rng);
    if (i % 10 == 0) {
      for (auto& x : r) x = -std::abs(x);
    }
    const auto p = regret_match(r);
    double sum = 0.0;
    for (double x : p) {
      bad += x < 0.0;
      sum += x;
    }
    bad += std::abs(sum - 1.0) > 1e-12;
    std::vector<double> rc;
    const double c = scale(rng);
    for (double x : r) rc.push_back(c * x);
    const auto pc = regret_match(rc);
    for (int k = 0; k < 4; ++k) bad += std::abs(pc[k] - p[k]) > 1e-12;
    bad += argmax_action(rc) != argmax_action(r);
    if (*std::max_element(r.begin(), r.end()) <= 0.0) {
      ++fallbacks;
      const auto best = std::max_element(r.begin(), r.end()) - r.begin();
      for (int k = 0; k < 4; ++k) bad += p[k] != (k == best ? 1.0 : 0.0);
    }
  }
  const double s = timer.seconds();
  return {bad == 0 && fallbacks > 0 && s < 1.0,
          std::to_string(bad) + " violations, " + std::to_string(fallbacks) + " fallbacks, " + num(s, 3) + " s"};
}

// ---- 3: zero sum on every generated table

Outcome zero_sum(const fs::path& tables) {
  int files = 0;
  long cells = 0, bad = 0;
  if (fs::is_directory(tables)) {
    for (const auto& f : fs::directory_iterator(tables)) {
      const auto t = csv::read_file(f.path());
      const int n = static_cast<int>(t.rows.size());
      int moves = 0;
      while (pow4(moves) < n) ++moves;
      if (pow4(moves) != n) return {false, f.path().filename().string() + " is not square"};
      UtilityTable u(moves);
      for (int e = 0; e < n; ++e) {
        for (int o = 0; o < n; ++o) {
          const auto& cell = t.rows[e][1 + o];
          if (cell == "nan") {
            u.set_valid(e, o, false);
          } else {
            u.at(e, o) = csv::to_double(cell, f.path().string());
          }
        }
      }
      for (int e = 0; e < n; ++e) {
        for (int o = 0; o < n; ++o) {
          if (!u.ok(e, o)) continue;
          ++cells;
          bad += u.at(e, o) + u.opponent_utility(e, o) != 0.0;
        }
      }
      ++files;
    }
  }
  return {files > 0 && bad == 0,
          std::to_string(files) + " tables, " + std::to_string(cells) + " valid cells, " + std::to_string(bad) +
              " nonzero sums"};
}

// ---- 4: dynamics

double circle_radius(Vec2 a, Vec2 b, Vec2 c) {
  const double d = 2 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
  const double ux = ((a.x * a.x + a.y * a.y) * (b.y - c.y) + (b.x * b.x + b.y * b.y) * (c.y - a.y) +
                     (c.x * c.x + c.y * c.y) * (a.y - b.y)) / d;
  const double uy = ((a.x * a.x + a.y * a.y) * (c.x - b.x) + (b.x * b.x + b.y * b.y) * (a.x - c.x) +
                     (c.x * c.x + c.y * c.y) * (b.x - a.x)) / d;
  return std::hypot(a.x - ux, a.y - uy);
}

Outcome dynamics() {
  Timer timer;
  const VehicleParams p;
  double worst = 0.0;
  for (double delta : {0.05, 0.1, 0.2, 0.3, 0.4}) {
    VehicleState s;
    s.v = 0.3;
    s.steer = delta;
    std::vector<Vec2> pts;
    for (int i = 0; i < 3000; ++i) {
      s = step_dynamics(s, {delta, 0.0}, p, 0.01);
      pts.push_back({s.x, s.y});
    }
    const double r = circle_radius(pts[0], pts[pts.size() / 3], pts[2 * pts.size() / 3]);
    const double want = p.wheelbase() / std::tan(delta);
    worst = std::max(worst, std::abs(r - want) / want);
  }
  VehicleState s;
  s.v = 2.0;
  for (int i = 0; i < 1000; ++i) s = step_dynamics(s, {0.0, 0.0}, p, 0.01);
  const double straight = std::abs(std::hypot(s.x, s.y) - 2.0 * 10.0);
  const double t = timer.seconds();
  return {worst < 0.01 && straight <= 1e-6 && t < 5.0,
          "radius rel error " + num(worst) + ", straight error " + num(straight) + ", " + num(t, 3) + " s"};
}

// ---- 5: iTTC

template <typename Pred>
OccupancyGrid grid_of(int w, int h, double res, Pose2 origin, Pred occupied) {
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(w) * h, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      cells[static_cast<std::size_t>(r) * w + c] =
          occupied(origin.x + (c + 0.5) * res, origin.y + (r + 0.5) * res) ? 1 : 0;
    }
  }
  return OccupancyGrid::from_cells(w, h, res, origin, std::move(cells));
}

Outcome ittc() {
  const LidarConfig lidar;
  const ObjectiveConfig cfg;
  double worst = 0.0;
  for (auto [d, v] : {std::pair{2.0, 1.0}, {3.0, 2.0}, {6.0, 4.0}}) {
    const auto g = grid_of(400, 400, 0.05, {-10.0, -10.0, 0.0}, [&](double x, double) { return x >= d; });
    const auto scan = ray_march({0.0, 0.0, 0.0}, g, nullptr, lidar);
    std::vector<double> ttc;
    append_ttc(scan, v, cfg, ttc);
    std::size_t fwd = 0;
    for (std::size_t i = 1; i < scan.angles.size(); ++i) {
      if (std::abs(scan.angles[i]) < std::abs(scan.angles[fwd])) fwd = i;
    }
    worst = std::max(worst, std::abs(ttc[fwd] - d / v) / (d / v));
  }
  // a lone car on an open floor for eight seconds: every beam is capped
  const auto open = grid_of(1400, 600, 0.05, {-20.0, -15.0, 0.0}, [](double, double) { return false; });
  const VehicleParams p;
  VehicleState s;
  s.v = 2.0;
  std::vector<double> samples;
  for (int i = 0; i < 800; ++i) {
    s = step_dynamics(s, {0.0, 0.0}, p, 0.01);
    if ((i + 1) % 10 == 0) append_ttc(ray_march({s.x, s.y, s.yaw}, open, nullptr, lidar), s.v, cfg, samples);
  }
  const double res = compute_o_res(samples, cfg.a, cfg.b);
  return {worst <= 0.02 && res == 0.0, "worst forward ttc error " + num(100 * worst) + "%, safe episode o_res " + num(res)};
}

// ---- 6: CMA-ES on the sphere

Outcome cma_sphere() {
  Timer timer;
  int worst_evals = 0;
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    Eigen::VectorXd x0(8), opt(8);
    for (int i = 0; i < 8; ++i) {
      x0[i] = u(rng);
      opt[i] = u(rng);
    }
    auto s = cma_init(x0, 1.0, 10);
    int evals = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t gen = 0; evals < 20000 && best >= 1e-10; ++gen) {
      const auto xs = cma_ask(s, derive_seed(seed, {gen}));
      std::vector<double> f;
      for (const auto& x : xs) {
        f.push_back((x - opt).squaredNorm());
        best = std::min(best, f.back());
      }
      evals += static_cast<int>(xs.size());
      cma_tell(s, xs, f);
    }
    ok = ok && best < 1e-10;
    worst_evals = std::max(worst_evals, evals);
  }
  const double t = timer.seconds();
  return {ok && t < 30.0, "worst seed needed " + std::to_string(worst_evals) + " evaluations, " + num(t, 3) + " s"};
}

// ---- 7: Pareto archive and k-DPP diversity

double mean_pairwise(const std::vector<ObjectivePoint>& pts, const std::vector<int>& idx) {
  double acc = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j, ++n) acc += distance(pts[idx[i]], pts[idx[j]]);
  }
  return acc / n;
}

Outcome pareto_and_dpp() {
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ParetoArchive a;
  std::vector<ObjectivePoint> pts;
  for (int i = 0; i < 1000; ++i) {
    pts.push_back({u(rng), u(rng)});
    a.insert({AgentParams{}, pts.back(), 0, i});
  }
  std::set<int> want, got;
  for (int i = 0; i < 1000; ++i) {
    bool dominated = false;
    for (int j = 0; j < 1000 && !dominated; ++j) {
      dominated = pts[j].agg <= pts[i].agg && pts[j].res <= pts[i].res &&
                  (pts[j].agg < pts[i].agg || pts[j].res < pts[i].res);
    }
    if (!dominated) want.insert(i);
  }
  for (const auto& e : a.entries()) got.insert(e.genome_id);

  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<ObjectivePoint> cl;
  for (int i = 0; i < 30; ++i) cl.push_back({g(rng), g(rng)});
  for (int i = 0; i < 8; ++i) cl.push_back({2 + g(rng), g(rng)});
  for (int i = 0; i < 4; ++i) cl.push_back({1 + g(rng), 2 + g(rng)});
  double dpp = 0.0, uni = 0.0;
  for (int s = 0; s < 100; ++s) {
    dpp += mean_pairwise(cl, dpp_sample(cl, 4, 0.5, s));
    std::vector<int> all(cl.size());
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 r(s);
    std::shuffle(all.begin(), all.end(), r);
    all.resize(4);
    uni += mean_pairwise(cl, all);
  }
  const double ratio = dpp / uni;
  return {got == want && ratio >= 1.05, "front " + std::to_string(got.size()) + " vs brute force " +
                                            std::to_string(want.size()) + (got == want ? " (equal)" : " (differ)") +
                                            ", k-DPP distance ratio " + num(ratio)};
}

// ---- 8: MLP

Eigen::MatrixXd normal_matrix(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = g(rng);
  }
  return X;
}

double l1_loss(const MlpParams& p, const Eigen::MatrixXd& X, const Eigen::VectorXd& t) {
  return (mlp_forward_batch(p, X) - t).cwiseAbs().mean();
}

Outcome mlp_checks() {
  Timer timer;
  std::mt19937_64 rng(808);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int hidden = 8 + 8 * (trial % 4);
    auto p = mlp_init(kFeatureSize, hidden, 0.01, 500 + trial);
    const Eigen::MatrixXd X = normal_matrix(5, kFeatureSize, rng);
    Eigen::VectorXd t = mlp_forward_batch(p, X);
    for (int i = 0; i < 5; ++i) t[i] += (i % 2 ? 1.0 : -1.0) * (0.5 + 0.1 * i);
    const auto g = mlp_backward(p, X, t);
    const auto check = [&](double& w, double analytic) {
      const double keep = w;
      w = keep + h;
      const double up = l1_loss(p, X, t);
      w = keep - h;
      const double down = l1_loss(p, X, t);
      w = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8}));
    };
    for (int r = 0; r < hidden; ++r) {
      for (int c = 0; c < kFeatureSize; ++c) check(p.W1(r, c), g.W1(r, c));
      check(p.b1[r], g.b1[r]);
      check(p.W2[r], g.W2[r]);
    }
    check(p.b2, g.b2);
  }
  const Eigen::MatrixXd X = normal_matrix(100, kFeatureSize, rng);
  Eigen::VectorXd w(kFeatureSize);
  for (int i = 0; i < kFeatureSize; ++i) w[i] = std::cos(0.5 + i);
  const Eigen::VectorXd t = 0.3 * X * w;
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.val_fraction = 0.0;
  cfg.seed = 9;
  const auto fit = train_mlp(X, t, cfg);
  const double overfit = l1_loss(fit.best, X, t);
  TrainConfig small = cfg;
  small.hidden = 128;
  small.epochs = 50;
  small.batch = 16;
  small.val_fraction = 0.1;
  const auto a = train_mlp(X, t, small), b = train_mlp(X, t, small);
  const bool same = a.best == b.best && a.last == b.last;
  const double s = timer.seconds();
  return {worst < 1e-4 && overfit < 1e-3 && same && s < 60.0,
          "gradient rel error " + num(worst) + ", overfit L1 " + num(overfit) + ", repeat " +
              (same ? "identical" : "differs") + ", " + num(s, 3) + " s"};
}

// ---- 9: encoding

Outcome encoding(const fs::path& run) {
  const auto data = csv::read_file(run / "sp" / "dataset.csv");
  long bad_rows = 0;
  for (const auto& row : data.rows) bad_rows += row.size() != static_cast<std::size_t>(kFeatureSize + 1);
  const bool header_ok = data.header.size() == static_cast<std::size_t>(kFeatureSize + 1) && data.header.back() == "regret";

  const auto sets = load_prototypes(run / "protos.csv");
  const auto& protos = sets.near_optimal;
  const auto pairs = csv::read_file(run / "sp" / "pairs.csv");
  std::set<std::pair<std::size_t, std::size_t>> starts;
  const int ce = pairs.require_column("ego_proto"), co = pairs.require_column("opp_proto");
  for (const auto& row : pairs.rows) starts.insert({std::stoul(row[ce]), std::stoul(row[co])});
  std::vector<Infoset> infosets;
  for (auto [se, so] : starts) {
    for (int d = 0; d <= 2; ++d) {
      for (int e = 0; e < pow4(d); ++e) {
        for (int o = 0; o < pow4(d); ++o) {
          Infoset I;
          I.ego_actions = sequence_of(e, d);
          for (auto i : snap_path(se, I.ego_actions, protos, 1.0)) I.ego_points.push_back(protos[i].obj);
          for (auto i : snap_path(so, sequence_of(o, d), protos, 1.0)) I.opp_points.push_back(protos[i].obj);
          if (std::find(infosets.begin(), infosets.end(), I) == infosets.end()) infosets.push_back(I);
        }
      }
    }
  }
  std::set<Features> seen;
  for (const auto& I : infosets) {
    for (int a = 0; a < kNumActions; ++a) seen.insert(encode_infoset(I, action_from_int(a), 2));
  }
  const bool injective = seen.size() == infosets.size() * kNumActions;
  return {header_ok && bad_rows == 0 && !data.rows.empty() && injective,
          std::to_string(data.rows.size()) + " dataset rows with " + std::to_string(bad_rows) + " of wrong length, " +
              std::to_string(infosets.size() * kNumActions) + " infoset-candidate pairs give " +
              std::to_string(seen.size()) + " distinct vectors"};
}

// ---- 10 and 11: the desk pipeline

bool run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(OBJRACE_CLI) + " " + args + " >> " + log.string() + " 2>&1";
  std::cerr << "  $ objrace " << args << '\n';
  return std::system(cmd.c_str()) == 0;
}

bool desk_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string map = std::string(OBJRACE_SOURCE_DIR) + "/data/maps/A";
  const std::string d = dir.string();
  const auto log = dir / "pipeline.log";
  return run_cli("optimize --map " + map + " --generations 30 --pop 20 --scenarios 24 --seed 1 --out " + d + "/opt",
                 log) &&
         run_cli("prototypes --archive " + d + "/opt/archive.csv --n-dpp 4 --seed 1 --out " + d + "/protos.csv", log) &&
         run_cli("selfplay --map " + map + " --prototypes " + d + "/protos.csv --moves 2 --segment-s 8 --seed 1 --out " +
                     d + "/sp",
                 log) &&
         run_cli("train --dataset " + d + "/sp/dataset.csv --seed 1 --out " + d + "/model", log) &&
         run_cli("race --ego gt --opponent fixed --map " + map + " --prototypes " + d + "/protos.csv --model " + d +
                     "/model/model.txt --starts 7 --moves 2 --segment-s 8 --seed 1 --out " + d + "/race_gt.csv",
                 log) &&
         run_cli("race --ego fixed --opponent fixed --map " + map + " --prototypes " + d +
                     "/protos.csv --starts 7 --moves 2 --segment-s 8 --seed 1 --out " + d + "/race_fixed.csv",
                 log) &&
         run_cli("report --races " + d + "/race_gt.csv --baseline " + d + "/race_fixed.csv --out " + d + "/report", log);
}

Outcome directional(const fs::path& run, bool ran) {
  if (!ran) return {false, "pipeline failed, see " + (run / "pipeline.log").string()};
  std::ifstream in(run / "report.json");
  const auto j = nlohmann::json::parse(in);
  const double gt = j["treatment"]["win_rate_mean"], base = j["baseline"]["win_rate_mean"];
  const auto& tt = j["paired_t_test"];
  const std::string t = tt["t"].is_number() ? num(tt["t"].get<double>()) : tt["t"].get<std::string>();
  return {gt > base, "GT " + num(gt) + " vs non-GT " + num(base) + " over " + std::to_string(j["treatment"]["races"].get<int>()) +
                         " races each, paired t " + t + ", p " + num(tt["p"].get<double>())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome rerun_identical(const fs::path& a, const fs::path& b, bool ran_a, bool ran_b) {
  if (!ran_a || !ran_b) return {false, "a pipeline run failed"};
  const char* files[] = {"race_gt.csv", "race_fixed.csv", "report.json", "report.csv"};
  std::string differ;
  for (const char* f : files) {
    const auto x = slurp(a / f);
    if (x.empty() || x != slurp(b / f)) differ += std::string(" ") + f;
  }
  return {differ.empty(), differ.empty() ? "race logs and reports are byte-identical" : "differ:" + differ};
}

}  // namespace

int main() {
  std::vector<Outcome> out(12);
  const auto stage = [&](int k, const std::function<Outcome()>& f) {
    try {
      out[k] = f();
    } catch (const std::exception& e) {
      out[k] = {false, std::string("exception: ") + e.what()};
    }
    std::cerr << "criterion " << k << ": " << (out[k].pass ? "pass" : "fail") << "  " << out[k].detail << '\n';
  };
  stage(1, cfr_oracle);
  stage(2, regret_matching);
  stage(4, dynamics);
  stage(5, ittc);
  stage(6, cma_sphere);
  stage(7, pareto_and_dpp);
  stage(8, mlp_checks);

  const fs::path work = fs::current_path() / "acceptance_runs";
  std::cerr << "desk pipeline, first run\n";
  const bool ran1 = desk_pipeline(work / "run1");
  std::cerr << "desk pipeline, second run\n";
  const bool ran2 = desk_pipeline(work / "run2");
  stage(3, [&] { return zero_sum(work / "run1" / "sp" / "tables"); });
  stage(9, [&] { return encoding(work / "run1"); });
  stage(10, [&] { return directional(work / "run1", ran1); });
  stage(11, [&] { return rerun_identical(work / "run1", work / "run2", ran1, ran2); });

  bool all = true;
  for (int k = 1; k <= 11; ++k) {
    std::cout << "criterion " << k << ": " << (out[k].pass ? "PASS" : "FAIL") << "  " << out[k].detail << '\n';
    all = all && out[k].pass;
  }
  return all ? 0 : 1;
}
