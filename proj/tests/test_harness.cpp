#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "objrace/harness.hpp"
#include "test_util.hpp"

using namespace objrace;

namespace {

PrototypeSets toy_sets() {
  PrototypeSets s;
  const AgentParams a(0.9, {2, 2, 1, 3, 2, 4, 2}), b(0.8, {3, 2, 2, 2, 3, 3, 2}), c(0.95, {1, 2, 1, 2, 1, 6, 1}),
      d(0.7, {4, 3, 2, 5, 6, 2, 3});
  s.near_optimal = {{0, a, {-1, 20}}, {1, b, {0, 15}}, {2, c, {-2, 30}}, {3, d, {1, 10}}};
  s.pf = {s.near_optimal[0]};
  s.dpp1 = {s.near_optimal[0], s.near_optimal[2]};
  s.dpp2 = {s.near_optimal[1], s.near_optimal[3]};
  return s;
}

RaceRecord record(int pairing, double credit) {
  RaceRecord r;
  r.pairing = pairing;
  r.ego_kind = "gt";
  r.opponent_kind = "fixed";
  r.map_id = "A";
  r.ego_credit = credit;
  r.winner = credit == 1.0 ? "ego" : (credit == 0.0 ? "opp" : "draw");
  return r;
}

int run_cli(const std::string& args) {
  return std::system((std::string(OBJRACE_CLI) + " " + args + " > /dev/null 2>&1").c_str());
}

}  // namespace

TEST(TTest, IdenticalSamples) {
  const std::vector<double> a{0.4, 0.5, 0.9, 0.1};
  const auto r = paired_t_test(a, a);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
  EXPECT_THROW(paired_t_test(std::vector<double>{1.0}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(TTest, ConstantDifferenceIsFlagged) {
  const std::vector<double> a{0.6, 0.7, 0.8}, b{0.5, 0.6, 0.7};
  const auto r = paired_t_test(a, b);
  EXPECT_TRUE(r.zero_variance);
  EXPECT_EQ(r.p, 0.0);
  EXPECT_NEAR(r.mean_diff, 0.1, 1e-12);
}

TEST(TTest, MatchesReferenceDistribution) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(20), b(20);
    for (int i = 0; i < 20; ++i) {
      a[i] = u(rng);
      b[i] = std::clamp(a[i] - 0.1 + 0.3 * u(rng), 0.0, 1.0);
    }
    const auto r = paired_t_test(a, b);
    double mean = 0.0, ss = 0.0;
    for (int i = 0; i < 20; ++i) mean += (a[i] - b[i]) / 20.0;
    for (int i = 0; i < 20; ++i) ss += std::pow(a[i] - b[i] - mean, 2);
    const double t = mean / (std::sqrt(ss / 19.0) / std::sqrt(20.0));
    const boost::math::students_t dist(19.0);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    EXPECT_NEAR(r.t, t, 1e-9);
    EXPECT_NEAR(r.p, p, 1e-9);
  }
}

TEST(TTest, IncompleteBetaMatchesReference) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ab(0.1, 40.0), x(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = ab(rng), b = ab(rng), xv = x(rng);
    EXPECT_NEAR(incomplete_beta(a, b, xv), boost::math::ibeta(a, b, xv), 1e-11);
  }
}

TEST(LaneSwitcherBaseline, AtMostOneSwitchPerHalfSecondInClutter) {
  RaceEnv env = testutil::straight_env();
  struct Blob {
    double x, y;
  };
  const std::vector<Blob> blobs{{8, 0}, {10, 0.4}, {11.5, -0.4}, {13, 0}, {14, 0.4}, {16, -0.4}, {17, 0}, {19, 0.4}};
  env.grid = std::make_shared<const OccupancyGrid>(testutil::make_grid(
      static_cast<int>(std::lround(84 / 0.05)), static_cast<int>(std::lround(5 / 0.05)), 0.05, {-2.0, -2.5, 0.0},
      [&](int, int, double x, double y) {
        if (std::abs(y) >= 1.5) return true;
        for (const auto& b : blobs) {
          if (std::abs(x - b.x) < 0.15 && std::abs(y - b.y) < 0.15) return true;
        }
        return false;
      }));
  LaneSwitcher ls(env.lane_switcher, env.vehicle, env.lidar);
  auto s = spawn_state(*env.raceline, 2.0, 0.0, 2.0);
  std::vector<double> switch_times;
  int last = 0;
  for (int i = 0; i < 1000; ++i) {
    const double t = i * 0.01;
    if (i % 10 == 0) {
      ls.plan(s, nullptr, *env.raceline, *env.grid, t);
      if (ls.switches() != last) {
        switch_times.push_back(t);
        last = ls.switches();
      }
    }
    s = step_dynamics(s, ls.track(s), env.vehicle, 0.01);
  }
  EXPECT_GE(switch_times.size(), 2u);
  for (std::size_t i = 1; i < switch_times.size(); ++i) EXPECT_GE(switch_times[i] - switch_times[i - 1], 0.5 - 1e-9);
}

TEST(Pairings, CountsPerOpponentKind) {
  const auto sets = toy_sets();
  std::vector<ArchiveEntry> explored;
  for (int i = 0; i < 30; ++i) explored.push_back({AgentParams{}, {double(i), 0}, i / 10, i % 10});
  EXPECT_EQ(make_pairings(sets, OpponentKind::fixed_dpp2, {}, 1).size(), 4u);
  EXPECT_EQ(make_pairings(sets, OpponentKind::random_explored, explored, 1).size(), 4u);
  EXPECT_EQ(make_pairings(sets, OpponentKind::lane_switcher, {}, 1).size(), 2u);
  EXPECT_THROW(make_pairings(sets, OpponentKind::random_explored, {}, 1), std::invalid_argument);
  const auto p = make_pairings(sets, OpponentKind::fixed_dpp2, {}, 1);
  EXPECT_EQ(p[1].ego_proto, 0u);
  EXPECT_EQ(p[1].opponent.params, sets.dpp2[1].params);
  EXPECT_EQ(p[2].ego_proto, 2u);
}

TEST(Match, RaceCountsAndRateIdentity) {
  const auto env = load_env(testutil::map_dir("A"));
  const auto sets = toy_sets();
  MatchSpec spec;
  spec.ego = EgoKind::fixed;
  spec.starts = 2;
  spec.moves = 1;
  spec.segment = 2.0;
  const auto pairings = make_pairings(sets, OpponentKind::fixed_dpp2, {}, 1);
  const auto log = run_match(spec, pairings, sets, nullptr, env, 3);
  ASSERT_EQ(log.size(), pairings.size() * 2 * 2);
  spec.alternation = false;
  EXPECT_EQ(run_match(spec, pairings, sets, nullptr, env, 3).size(), pairings.size() * 2);
  const auto c = condition_stats(log);
  for (const auto& p : c.pairings) {
    EXPECT_EQ(p.win + p.loss + p.draw, 1.0);
    EXPECT_GE(p.win_rate, 0.0);
    EXPECT_LE(p.win_rate, 1.0);
  }
  spec.alternation = true;
  spec.jobs = 3;
  const auto again = run_match(spec, pairings, sets, nullptr, env, 3);
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(again[i].final_lead, log[i].final_lead);
  spec.starts = 0;
  EXPECT_THROW(run_match(spec, pairings, sets, nullptr, env, 3), std::invalid_argument);
}

TEST(Match, SelfPlayWinRateIsBalanced) {
  const auto env = load_env(testutil::map_dir("A"));
  auto sets = toy_sets();
  sets.dpp1 = {sets.near_optimal[0]};
  sets.dpp2 = {sets.near_optimal[0]};
  MatchSpec spec;
  spec.ego = EgoKind::fixed;
  spec.starts = 5;
  const auto log = run_match(spec, make_pairings(sets, OpponentKind::fixed_dpp2, {}, 1), sets, nullptr, env, 11);
  ASSERT_EQ(log.size(), 10u);
  const auto c = condition_stats(log);
  EXPECT_GE(c.mean, 0.3);
  EXPECT_LE(c.mean, 0.7);
}

TEST(Report, RoundTripIsIdempotent) {
  std::vector<RaceRecord> gt, fx;
  for (int p = 0; p < 4; ++p) {
    for (int k = 0; k < 6; ++k) {
      gt.push_back(record(p, (p + k) % 3 == 0 ? 0.0 : ((p + k) % 3 == 1 ? 1.0 : 0.5)));
      auto b = record(p, (p * k) % 2 == 0 ? 1.0 : 0.0);
      b.ego_kind = "fixed";
      fx.push_back(b);
    }
  }
  const auto dir = testutil::temp_dir("report");
  {
    std::ofstream a(dir / "gt.csv"), b(dir / "fx.csv");
    save_race_log(a, gt);
    save_race_log(b, fx);
  }
  const nlohmann::ordered_json cfg{{"seed", 1}};
  const auto first = report_json(make_report(gt, fx), cfg).dump(2);
  const auto second = report_json(make_report(load_race_log(dir / "gt.csv"), load_race_log(dir / "fx.csv")), cfg).dump(2);
  EXPECT_EQ(first, second);
  const auto rep = make_report(gt, fx);
  ASSERT_TRUE(rep.test.has_value());
  EXPECT_EQ(rep.test->n, 4);
  EXPECT_EQ(rep.treatment.races, 24);
  EXPECT_THROW(condition_stats({}), std::invalid_argument);
  auto short_fx = fx;
  short_fx.resize(6);
  EXPECT_THROW(make_report(gt, short_fx), std::invalid_argument);
}

TEST(Cli, ErrorsExitNonzero) {
  const auto dir = testutil::temp_dir("cli");
  std::ofstream(dir / "empty.csv") << "pairing,start,side,ego_kind,opponent_kind,map,ego_proto,opponent,winner,final_lead,"
                                       "ego_crash,opp_crash,ego_credit\n";
  EXPECT_NE(run_cli("report --races " + (dir / "empty.csv").string() + " --out " + (dir / "r").string()), 0);
  EXPECT_NE(run_cli("optimize --no-such-flag 3"), 0);
  EXPECT_NE(run_cli("race --ego nonsense --map x --prototypes y --out z"), 0);
  EXPECT_NE(run_cli(""), 0);
}
