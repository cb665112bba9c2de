#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "objrace/objectives.hpp"
#include "objrace/rollout.hpp"
#include "test_util.hpp"

using namespace objrace;

TEST(Restraint, HandExamples) {
  const std::vector<double> capped(50, 5.0);
  EXPECT_DOUBLE_EQ(compute_o_res(capped, 10.0, 5.0), 0.0);
  const std::vector<double> one{1.0};
  EXPECT_DOUBLE_EQ(compute_o_res(one, 10.0, 5.0), 40.0);
  EXPECT_DOUBLE_EQ(compute_o_res(std::vector<double>{}, 10.0, 5.0), 0.0);
  // values above the cap are clamped
  EXPECT_DOUBLE_EQ(compute_o_res(std::vector<double>{7.0, 3.0}, 10.0, 5.0), 10.0 * (5.0 - 4.0));
}

TEST(Restraint, BoundedAndMonotone) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> t(1 + rng() % 40);
    for (auto& x : t) x = u(rng);
    const double r = compute_o_res(t, 10.0, 5.0);
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 50.0);
    auto smaller = t;
    const auto k = rng() % t.size();
    smaller[k] = std::uniform_real_distribution<double>(0.0, t[k])(rng);
    ASSERT_GE(compute_o_res(smaller, 10.0, 5.0), r - 1e-12);
  }
}

TEST(Restraint, ScanToTtc) {
  Scan scan;
  scan.angles = {0.0, kPi / 3, kPi / 2, -kPi};
  scan.ranges = {2.0, 2.0, 1.0, 0.5};
  std::vector<double> out;
  append_ttc(scan, 2.0, ObjectiveConfig{}, out);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_NEAR(out[1], 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(out[2], 5.0);  // not closing
  EXPECT_DOUBLE_EQ(out[3], 5.0);  // opening
  out.clear();
  scan.ranges[0] = 100.0;
  append_ttc(scan, 2.0, ObjectiveConfig{}, out);
  EXPECT_DOUBLE_EQ(out[0], 5.0);
  // a beam at max range saw nothing, however fast the car
  out.clear();
  scan.max_range = 10.0;
  scan.ranges = {10.0, 9.0, 1.0, 0.5};
  append_ttc(scan, 4.0, ObjectiveConfig{}, out);
  EXPECT_DOUBLE_EQ(out[0], 5.0);
  EXPECT_NEAR(out[1], 4.5, 1e-12);
}

TEST(Aggressiveness, SignAndAdjustments) {
  RolloutResult r;
  EXPECT_DOUBLE_EQ(compute_o_agg(r), 0.0);
  r.ego_progress = 12.0;
  r.opp_progress = 10.0;
  EXPECT_DOUBLE_EQ(compute_o_agg(r), -2.0);
  r.overtake = true;
  EXPECT_NEAR(compute_o_agg(r), -2.2, 1e-12);
  r.overtake = false;
  r.ego_crashed_into_opp = true;
  EXPECT_NEAR(compute_o_agg(r), -1.8, 1e-12);
  // behind: the adjustments keep their direction
  r.ego_progress = 8.0;
  EXPECT_NEAR(compute_o_agg(r), 2.2, 1e-12);
  r.ego_crashed_into_opp = false;
  r.overtake = true;
  EXPECT_NEAR(compute_o_agg(r), 1.8, 1e-12);
}

TEST(Aggressiveness, CrashAddsRestraintPenalty) {
  RolloutResult r;
  r.ttc_samples = {5.0, 5.0};
  EXPECT_DOUBLE_EQ(compute_o_res(r), 0.0);
  r.ego_crashed_into_opp = true;
  EXPECT_DOUBLE_EQ(compute_o_res(r), ObjectiveConfig{}.crash_res_penalty);
}

TEST(Rollout, EightSecondsIsEightHundredSteps) {
  const auto env = testutil::straight_env();
  EXPECT_EQ(env.steps_for(8.0), 800);
  const auto sc = make_scenario(env, 5.0, 2.0, 0.0, 0.0, 0.5);
  const auto [e, o] = scenario_states(sc, env);
  auto race = start_race(env, e, o, make_lattice_policy(AgentParams{}, env), make_lattice_policy(AgentParams{}, env), 1);
  advance(race, env, env.steps_for(8.0));
  EXPECT_EQ(race.step, 800);
  EXPECT_EQ(race.frames.back().tick, 80);
  EXPECT_EQ(race.frames.size(), 81u);
}

TEST(Rollout, DeterministicForTheSameSeed) {
  const auto env = load_env(testutil::map_dir("A"));
  const auto sc = make_scenario(env, 10.0, 1.5, 0.2, -0.2, 0.5);
  const AgentParams a(0.9, {2, 3, 4, 5, 6, 7, 8}), b(0.7, {8, 7, 6, 5, 4, 3, 2});
  const auto r1 = evaluate_rollout(a, b, sc, 4.0, 3, env);
  const auto r2 = evaluate_rollout(a, b, sc, 4.0, 3, env);
  EXPECT_EQ(r1.objectives, r2.objectives);
  EXPECT_EQ(r1.ttc_samples, r2.ttc_samples);
  EXPECT_EQ(r1.ego_progress, r2.ego_progress);
}

TEST(Rollout, MirroredSpawnsOnAStraightAreNearlySymmetric) {
  const auto env = testutil::straight_env();
  const auto sc = make_scenario(env, 5.0, 0.0, 0.5, -0.5, 0.5);
  const AgentParams p(0.9, {3, 2, 2, 4, 3, 5, 2});
  const auto r = evaluate_rollout(p, p, sc, 8.0, 1, env);
  EXPECT_LT(std::abs(r.objectives.agg), 0.1);
  EXPECT_GT(r.ego_progress, 10.0);
}

TEST(Rollout, RoleSwapIsAntisymmetric) {
  const auto env = testutil::straight_env();
  const AgentParams a(0.95, {2, 2, 1, 2, 1, 3, 1}), b(0.7, {4, 3, 2, 5, 6, 2, 3});
  const auto sc = make_scenario(env, 5.0, 0.0, 0.5, -0.5, 0.5);
  const auto swapped = make_scenario(env, 5.0, 0.0, -0.5, 0.5, 0.5);
  const auto r = evaluate_rollout(a, b, sc, 8.0, 1, env);
  const auto s = evaluate_rollout(b, a, swapped, 8.0, 1, env);
  EXPECT_LT(std::abs(r.objectives.agg + s.objectives.agg), 0.2);
}

TEST(Rollout, BothPerspectivesShareOneRace) {
  const auto env = load_env(testutil::map_dir("A"));
  const auto sc = make_scenario(env, 30.0, 1.0, 0.0, 0.3, 0.5);
  const auto [e, o] = scenario_states(sc, env);
  auto race = start_race(env, e, o, make_lattice_policy(AgentParams{}, env),
                         make_lattice_policy(AgentParams(0.8, {5, 5, 5, 5, 5, 5, 5}), env), 1);
  advance(race, env, 400);
  const auto me = objectives_from_frames(race, env, Perspective::ego, 0, 40);
  const auto them = objectives_from_frames(race, env, Perspective::opp, 0, 40);
  EXPECT_DOUBLE_EQ(me.ego_progress, them.opp_progress);
  EXPECT_DOUBLE_EQ(me.lead_end, -them.lead_end);
  if (!me.overtake && !them.overtake && !me.ego_crashed_into_opp && !them.ego_crashed_into_opp) {
    EXPECT_DOUBLE_EQ(me.objectives.agg, -them.objectives.agg);
  }
  EXPECT_EQ(me.ttc_samples.size(), 40u * env.lidar.beams);
  EXPECT_THROW(objectives_from_frames(race, env, Perspective::ego, 0, 99), std::out_of_range);
}

TEST(Rollout, OvertakeIsDetected) {
  // ego starts 1.5 m behind a parked car in the other lane
  const auto env = testutil::straight_env();
  const auto sc = make_scenario(env, 5.0, 1.5, -0.4, 0.5, 0.5);
  auto [e, o] = scenario_states(sc, env);
  o.v = 0.0;
  const AgentParams fast(1.0, {1, 1, 1, 1, 1, 10, 1});
  auto race = start_race(env, e, o, make_lattice_policy(fast, env), make_lattice_policy(fast, env), 1);
  race.world.opp_frozen = true;
  advance(race, env, 800);
  const auto r = objectives_from_frames(race, env, Perspective::ego, 0, 80);
  EXPECT_NEAR(r.lead_start, -1.5, 1e-9);
  EXPECT_GT(r.lead_end, 0.0);
  EXPECT_TRUE(r.overtake);
  EXPECT_FALSE(r.any_collision);
  auto plain = r;
  plain.overtake = false;
  EXPECT_NEAR(r.objectives.agg, 1.1 * compute_o_agg(plain), 1e-9);
  const auto seen_by_opp = objectives_from_frames(race, env, Perspective::opp, 0, 80);
  EXPECT_FALSE(seen_by_opp.overtake);
}

TEST(Scenarios, CountDeterminismAndClearance) {
  const auto env = load_env(testutil::map_dir("A"));
  const auto [sc, opp] = make_scenario_set(env, 120, 5);
  ASSERT_EQ(sc.size(), 120u);
  ASSERT_EQ(opp.size(), 120u);
  const auto [sc2, opp2] = make_scenario_set(env, 120, 5);
  for (std::size_t i = 0; i < sc.size(); ++i) {
    EXPECT_EQ(sc[i].station, sc2[i].station);
    EXPECT_EQ(opp[i], opp2[i]);
    EXPECT_GE(std::abs(sc[i].gap), 0.5);
    EXPECT_LE(std::abs(sc[i].gap), 3.0);
    const auto [e, o] = scenario_states(sc[i], env);
    SimWorld w;
    w.grid = env.grid;
    w.ego = e;
    w.opp = o;
    const auto rep = check_collision(w);
    EXPECT_FALSE(rep.ego_map || rep.opp_map || rep.ego_opp) << i;
    opp[i].validate();
  }
  EXPECT_THROW(make_scenario_set(env, 0, 1), std::invalid_argument);
}

TEST(Scenarios, NarrowMapFailsAfterRetries) {
  auto env = testutil::straight_env(80.0, 0.1);
  EXPECT_THROW(make_scenario_set(env, 1, 1), std::runtime_error);
}

TEST(Scenarios, CsvRoundTrip) {
  const auto env = load_env(testutil::map_dir("A"));
  const auto [sc, opp] = make_scenario_set(env, 10, 9);
  std::stringstream ss;
  save_scenarios(ss, sc, opp);
  const auto dir = testutil::temp_dir("scenarios");
  {
    std::ofstream f(dir / "s.csv");
    f << ss.str();
  }
  const auto [sc2, opp2] = load_scenarios(dir / "s.csv");
  ASSERT_EQ(sc2.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(sc2[i].station, sc[i].station);
    EXPECT_EQ(sc2[i].gap, sc[i].gap);
    EXPECT_EQ(opp2[i], opp[i]);
  }
}
