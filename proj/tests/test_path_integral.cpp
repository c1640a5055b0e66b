#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "hierpi/dynamics.hpp"
#include "hierpi/oracles.hpp"
#include "hierpi/path_integral.hpp"
#include "test_support.hpp"

namespace hierpi::pi {
namespace {

using Eigen::Vector2d;
using hierpi::testing::max_abs;

StateVector single(double px, double py, double s, double theta) {
  StateVector x(4);
  x << px, py, s, theta;
  return x;
}

StateVector scalar(double v) {
  StateVector x(1);
  x << v;
  return x;
}

CostSpec zero_cost() {
  return {[](const StateVector&) { return 0.0; }, [](const StateVector&) { return 0.0; }};
}

CostSpec goal_cost(Vector2d goal, double weight) {
  auto d = [goal, weight](const StateVector& x) { return weight * (x.head<2>() - goal).norm(); };
  return {d, d};
}

TEST(PathIntegralParams, LambdaIsDerived) {
  for (double s : {0.1, 0.3, 1.7}) {
    for (double a : {0.5, 10.0, 123.0}) {
      const PathIntegralParams p(s, a, 10, 0.01, 1.0);
      EXPECT_EQ(p.lambda(), a * s * s);
    }
  }
  EXPECT_EQ(PathIntegralParams(0.1, 10.0, 1, 0.01, 1.0).with_samples(7).samples(), 7u);
}

TEST(PathIntegralParams, Validation) {
  EXPECT_THROW(PathIntegralParams(0.0, 1.0, 1, 0.1, 1.0), ValidationError);
  EXPECT_THROW(PathIntegralParams(0.1, 0.0, 1, 0.1, 1.0), ValidationError);
  EXPECT_THROW(PathIntegralParams(0.1, 1.0, 0, 0.1, 1.0), ValidationError);
  EXPECT_THROW(PathIntegralParams(0.1, 1.0, 1, 0.0, 1.0), ValidationError);
  EXPECT_THROW(PathIntegralParams(0.1, 1.0, 1, 0.1, 0.0), ValidationError);
  EXPECT_THROW(PathIntegralParams(0.1, 1.0, 1, 0.1, 1.0, -1.0), ValidationError);
  EXPECT_THROW(PathIntegralParams(0.1, 1.0, 1, 0.1, 1.0, 1.0, 0.0), ValidationError);
  EXPECT_THROW(PathIntegralParams(0.1, 1.0, 1, 0.1, 1.0).with_samples(0), ValidationError);
}

TEST(PathIntegralParams, HorizonSteps) {
  const PathIntegralParams p(0.1, 10.0, 1, 0.01, 10.0);
  EXPECT_EQ(p.horizon_steps(0.0), 1000u);
  EXPECT_EQ(p.horizon_steps(9.99), 1u);
  EXPECT_EQ(p.horizon_steps(4.0), 600u);
  EXPECT_THROW(p.horizon_steps(10.0), ValidationError);
  const PathIntegralParams capped(0.1, 10.0, 1, 0.05, 10.0, 1.0, 2.0);
  EXPECT_EQ(capped.horizon_steps(0.0), 40u);
  EXPECT_EQ(capped.horizon_steps(9.0), 20u);
}

TEST(CostToGo, Examples) {
  const std::vector<StateVector> traj(101, single(0, 0, 0, 0));
  EXPECT_EQ(cost_to_go(traj, zero_cost(), 0.01), 0.0);
  const CostSpec unit{[](const StateVector&) { return 1.0; }, [](const StateVector&) { return 0.0; }};
  EXPECT_NEAR(cost_to_go(traj, unit, 0.01), 1.0, 1e-12);
  const double d = 2.5;
  const std::vector<StateVector> parked(101, single(3.0 - d, 0, 0, 0));
  EXPECT_NEAR(cost_to_go(parked, goal_cost(Vector2d(3.0, 0.0), 0.07), 0.01), 0.07 * d * 2.0, 1e-12);
}

TEST(CostToGo, LeftRiemannSum) {
  std::vector<StateVector> traj;
  for (int i = 0; i <= 4; ++i) traj.push_back(scalar(i));
  const CostSpec c{[](const StateVector& x) { return x(0); }, [](const StateVector& x) { return 10.0 * x(0); }};
  EXPECT_EQ(cost_to_go(traj, c, 0.5), (0 + 1 + 2 + 3) * 0.5 + 40.0);
}

TEST(CostToGo, Errors) {
  EXPECT_THROW(cost_to_go({}, zero_cost(), 0.1), ValidationError);
  const CostSpec bad{[](const StateVector&) { return std::numeric_limits<double>::infinity(); },
                     [](const StateVector&) { return 0.0; }};
  const std::vector<StateVector> traj(3, scalar(0));
  EXPECT_THROW(cost_to_go(traj, bad, 0.1), NonFinite);
}

TEST(SampleRollouts, VanishingNoiseGivesIdenticalRollouts) {
  const dyn::EffectiveDynamics eff(dyn::unicycle_model());
  const PathIntegralParams p(1e-12, 1.0, 64, 0.05, 2.0);
  const auto rollouts = sample_rollouts(eff, single(-4, 0, 0.5, 0.2), 0.0, p, goal_cost(Vector2d(3, 0), 1.0), 5);
  double mean = 0.0;
  for (const auto& r : rollouts) mean += r.cost / 64.0;
  double var = 0.0;
  for (const auto& r : rollouts) var += (r.cost - mean) * (r.cost - mean) / 64.0;
  EXPECT_LT(var, 1e-12);
}

TEST(SampleRollouts, SingleSampleIgnoresCost) {
  const dyn::EffectiveDynamics eff(dyn::unicycle_model());
  const PathIntegralParams p(0.3, 2.0, 1, 0.04, 1.0);
  const StateVector x = single(0, 0, 1, 0);
  auto rollouts = sample_rollouts(eff, x, 0.0, p, goal_cost(Vector2d(3, 0), 1.0), 9);
  ASSERT_EQ(rollouts.size(), 1u);
  const ControlEstimate est = estimate_control(rollouts, eff, x, 0.0, p);
  EXPECT_LT(max_abs(est.control - 0.3 * rollouts[0].first_noise / std::sqrt(0.04)), 1e-14);
  EXPECT_EQ(est.ess, 1.0);
  EXPECT_FALSE(est.degenerate);
}

TEST(SampleRollouts, IndependentOfWorkerCount) {
  const dyn::Hierarchy h({{tasks::make_obstacle_task_single(tasks::ObstacleSpec{}), dyn::Controller::pd},
                          {tasks::make_goal_task_single(Vector2d(3, 0)), dyn::Controller::path_integral}});
  const dyn::EffectiveDynamics eff(dyn::unicycle_model(), h);
  const PathIntegralParams p(0.1, 10.0, 256, 0.05, 10.0, 0.07, 2.0);
  const StateVector x = single(-1.2, 0.05, 0.8, 0.0);
  const auto cost = goal_cost(Vector2d(3, 0), 0.07);
  const auto one = sample_rollouts(eff, x, 0.0, p, cost, 77, 1);
  for (int workers : {4, 16}) {
    const auto many = sample_rollouts(eff, x, 0.0, p, cost, 77, workers);
    ASSERT_EQ(many.size(), one.size());
    for (std::size_t j = 0; j < one.size(); ++j) {
      EXPECT_EQ(many[j].cost, one[j].cost) << j;
      EXPECT_EQ(many[j].first_noise, one[j].first_noise) << j;
    }
  }
}

TEST(SampleRollouts, SeedsGiveDistinctStreams) {
  const dyn::EffectiveDynamics eff(dyn::unicycle_model());
  const PathIntegralParams p(0.5, 1.0, 8, 0.1, 1.0);
  const auto a = sample_rollouts(eff, single(0, 0, 1, 0), 0.0, p, zero_cost(), 1);
  const auto b = sample_rollouts(eff, single(0, 0, 1, 0), 0.0, p, zero_cost(), 2);
  EXPECT_NE(a[0].first_noise, b[0].first_noise);
  EXPECT_NE(a[0].first_noise, a[1].first_noise);
}

TEST(SampleRollouts, CountsCalls) {
  const dyn::EffectiveDynamics eff(dyn::unicycle_model());
  const PathIntegralParams p(0.5, 1.0, 2, 0.1, 0.3);
  const auto before = sampler_call_count();
  (void)sample_rollouts(eff, single(0, 0, 1, 0), 0.0, p, zero_cost(), 1);
  (void)sample_rollouts(eff, single(0, 0, 1, 0), 0.0, p, zero_cost(), 2);
  EXPECT_EQ(sampler_call_count() - before, 2u);
}

TEST(SampleRollouts, DivergenceIsNonFinite) {
  const dyn::EffectiveDynamics eff(dyn::unicycle_model());
  const PathIntegralParams p(0.5, 1.0, 4, 0.1, 0.5);
  const CostSpec bad{[](const StateVector&) { return 0.0; },
                     [](const StateVector&) { return std::numeric_limits<double>::quiet_NaN(); }};
  EXPECT_THROW(sample_rollouts(eff, single(0, 0, 1, 0), 0.0, p, bad, 1, 2), NonFinite);
}

TEST(EstimateControl, ZeroCostIsNoiseMean) {
  const dyn::EffectiveDynamics eff(dyn::unicycle_model());
  const std::size_t M = 10000;
  const double dt = 0.05;
  const PathIntegralParams p(0.1, 10.0, M, dt, 0.5);
  const StateVector x = single(0, 0, 1, 0);
  auto rollouts = sample_rollouts(eff, x, 0.0, p, zero_cost(), 3);
  const ControlEstimate est = estimate_control(rollouts, eff, x, 0.0, p);
  ControlVector mean = ControlVector::Zero(2);
  for (const auto& r : rollouts) mean += r.first_noise / static_cast<double>(M);
  EXPECT_LT(max_abs(est.control - 0.1 * mean / std::sqrt(dt)), 1e-13);
  EXPECT_LE(est.control.norm(), 4.0 * 0.1 / std::sqrt(static_cast<double>(M) * dt));
  EXPECT_NEAR(est.ess, static_cast<double>(M), 1e-6);
  EXPECT_NEAR(est.normalizer, 1.0, 1e-15);
  EXPECT_NEAR(est.weight_entropy, std::log(static_cast<double>(M)), 1e-9);
}

TEST(EstimateControl, ShiftInvariance) {
  const oracle::LqInstance lq;
  const dyn::EffectiveDynamics eff(oracle::lq_model());
  const PathIntegralParams p = oracle::lq_params(lq, 2000);
  const CostSpec base = oracle::lq_cost(lq);
  CostSpec shifted = base;
  shifted.terminal = [base](const StateVector& x) { return base.terminal(x) + 1000.0; };
  const StateVector x = scalar(1.0);
  const ControlEstimate a = pi_controller_step(eff, x, 0.0, p, base, 11);
  const ControlEstimate b = pi_controller_step(eff, x, 0.0, p, shifted, 11);
  EXPECT_LT(max_abs(a.control - b.control), 1e-12);
  EXPECT_NEAR(b.min_cost - a.min_cost, 1000.0, 1e-9);
}

TEST(EstimateControl, DiagnosticsInRange) {
  const oracle::LqInstance lq;
  const dyn::EffectiveDynamics eff(oracle::lq_model());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ControlEstimate e = pi_controller_step(eff, scalar(-1.5), 0.0, oracle::lq_params(lq, 500), oracle::lq_cost(lq), seed);
    EXPECT_GT(e.ess, 0.0);
    EXPECT_LE(e.ess, 500.0 + 1e-9);
    EXPECT_GT(e.normalizer, 0.0);
    EXPECT_LE(e.normalizer, 1.0);
    EXPECT_GE(e.mean_cost, e.min_cost);
    EXPECT_TRUE(e.control.allFinite());
  }
}

TEST(EstimateControl, SeedDeterminism) {
  const oracle::LqInstance lq;
  const dyn::EffectiveDynamics eff(oracle::lq_model());
  const auto p = oracle::lq_params(lq, 3000);
  const ControlEstimate a = pi_controller_step(eff, scalar(0.7), 0.0, p, oracle::lq_cost(lq), 5, 1);
  const ControlEstimate b = pi_controller_step(eff, scalar(0.7), 0.0, p, oracle::lq_cost(lq), 5, 8);
  EXPECT_EQ(a.control, b.control);
  EXPECT_EQ(a.ess, b.ess);
  EXPECT_EQ(a.normalizer, b.normalizer);
  EXPECT_EQ(a.weight_entropy, b.weight_entropy);
}

TEST(EstimateControl, DegenerateWeights) {
  const dyn::EffectiveDynamics eff(dyn::unicycle_model());
  const PathIntegralParams p(0.1, 10.0, 2, 0.01, 1.0);
  std::vector<RolloutResult> rollouts(2);
  rollouts[0].cost = 0.0;
  rollouts[0].first_noise = ControlVector::Ones(2);
  rollouts[1].cost = 50.0;
  rollouts[1].first_noise = -ControlVector::Ones(2);
  const StateVector x = single(0, 0, 1, 0);
  EXPECT_THROW(estimate_control(rollouts, eff, x, 0.0, p), DegenerateWeights);
  const ControlEstimate e = estimate_control(rollouts, eff, x, 0.0, p, DegeneratePolicy::accept);
  EXPECT_TRUE(e.degenerate);
  EXPECT_LT(e.ess, 2.0);
  EXPECT_LT(max_abs(e.control - 0.1 * ControlVector::Ones(2) / std::sqrt(0.01)), 1e-9);
  std::vector<RolloutResult> none;
  EXPECT_THROW(estimate_control(none, eff, x, 0.0, p), ValidationError);
}

TEST(EstimateControl, InertWithoutNullSpace) {
  const dyn::Hierarchy h({{tasks::make_goal_task_single(Vector2d(3, 0)), dyn::Controller::pd},
                          {tasks::make_goal_task_single(Vector2d(-3, 0)), dyn::Controller::path_integral}});
  const dyn::EffectiveDynamics eff(dyn::unicycle_model(), h);
  const PathIntegralParams p(0.1, 10.0, 32, 0.05, 1.0);
  const StateVector x = single(0, 0, 1, 0.3);
  const auto cost = goal_cost(Vector2d(-3, 0), 1.0);
  auto rollouts = sample_rollouts(eff, x, 0.0, p, cost, 4);
  for (const auto& r : rollouts) EXPECT_EQ(r.cost, rollouts[0].cost);
  const ControlEstimate e = estimate_control(rollouts, eff, x, 0.0, p);
  EXPECT_TRUE(e.inert);
  EXPECT_EQ(e.control, ControlVector::Zero(2));
}

TEST(EstimateControl, ProjectedNoiseBlock) {
  // With the obstacle active, only the null-space direction of its map is estimated.
  const dyn::Hierarchy h({{tasks::make_obstacle_task_single(tasks::ObstacleSpec{}), dyn::Controller::pd},
                          {tasks::make_goal_task_single(Vector2d(3, 0)), dyn::Controller::path_integral}});
  const dyn::EffectiveDynamics eff(dyn::unicycle_model(), h);
  const StateVector x = single(0.8, 0.1, 1.0, 3.0);
  const PathIntegralParams p(0.1, 10.0, 200, 0.05, 10.0, 0.07, 1.0);
  const ControlEstimate e =
      pi_controller_step(eff, x, 0.0, p, goal_cost(Vector2d(3, 0), 0.07), 8, 2, DegeneratePolicy::accept);
  const auto L1 = tasks::make_obstacle_task_single(tasks::ObstacleSpec{}).input_map(x);
  EXPECT_FALSE(e.inert);
  EXPECT_LT(std::abs((L1 * e.control)(0)), 1e-9 * std::max(1.0, e.control.norm()));
}

TEST(EstimateControl, LqMatchesRiccati) {
  const oracle::LqInstance lq;
  for (double x0 : {-1.0, 2.0}) {
    double mean = 0.0;
    const int seeds = 8;
    for (int s = 0; s < seeds; ++s) mean += oracle::lq_estimate(lq, x0, 20000, static_cast<std::uint64_t>(s)) / seeds;
    const double ref = oracle::riccati_feedback(lq, x0);
    EXPECT_LT(std::abs(mean - ref), 0.15 * std::abs(ref)) << "x0=" << x0;
  }
}

TEST(EstimateControl, VarianceShrinksWithSamples) {
  const oracle::LqInstance lq;
  auto variance = [&](std::size_t M) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 200; ++s) v.push_back(oracle::lq_estimate(lq, 1.0, M, 1000 + s));
    double mean = 0.0;
    for (double e : v) mean += e / v.size();
    double var = 0.0;
    for (double e : v) var += (e - mean) * (e - mean) / (v.size() - 1);
    return var;
  };
  const double ratio = variance(250) / variance(1000);
  EXPECT_GE(ratio, 2.5);
  EXPECT_LE(ratio, 6.0);
}

TEST(Riccati, ScalarClosedForm) {
  // With q = 0 the Riccati equation -P' = q - P^2 / alpha has P(t) = 1 / (1/q_f + (T - t)/alpha).
  oracle::LqInstance lq;
  lq.q = 0.0;
  const double expected = 1.0 / (1.0 / lq.q_f + lq.T / lq.alpha);
  EXPECT_NEAR(oracle::riccati_p(lq, 0.0), expected, 1e-10);
  EXPECT_NEAR(oracle::riccati_p(lq, lq.T), lq.q_f, 1e-15);
}

}  // namespace
}  // namespace hierpi::pi
