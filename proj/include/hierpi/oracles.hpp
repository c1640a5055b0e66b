#pragma once

// Reference computations used to check the controller: the Riccati feedback
// of a scalar linear-quadratic problem and finite-difference derivatives of
// task maps.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hierpi/dynamics.hpp"
#include "hierpi/path_integral.hpp"
#include "hierpi/rng.hpp"
#include "hierpi/tasks.hpp"
#include "hierpi/types.hpp"

namespace hierpi::oracle {

// Scalar linear-quadratic problem ------------------------------------------------

/// dx = u dt + s_hat dw, cost int (q/2 x^2 + alpha/2 u^2) dt + q_f/2 x(T)^2.
struct LqInstance {
  double q = 1.0;
  double q_f = 4.0;
  double alpha = 4.0;
  double s_hat = 0.5;
  double dt = 0.005;
  double T = 0.25;
};

/// P(t0) from -P' = q - P^2 / alpha, P(T) = q_f, by RK4 on a fine grid.
inline double riccati_p(const LqInstance& lq, double t0, int substeps = 20000) {
  const double h = (lq.T - t0) / substeps;
  auto rhs = [&](double P) { return -(lq.q - P * P / lq.alpha); };  // dP/dt
  double P = lq.q_f;
  for (int i = 0; i < substeps; ++i) {
    // integrate backwards in time: dP/d(-t) = q - P^2/alpha
    const double k1 = -rhs(P);
    const double k2 = -rhs(P + 0.5 * h * k1);
    const double k3 = -rhs(P + 0.5 * h * k2);
    const double k4 = -rhs(P + h * k3);
    P += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return P;
}

/// Optimal feedback -P(t0) x / alpha.
inline double riccati_feedback(const LqInstance& lq, double x, double t0 = 0.0) {
  return -riccati_p(lq, t0) * x / lq.alpha;
}

inline dyn::DynamicsModel lq_model() {
  return dyn::DynamicsModel(
      "scalar_integrator", 1, 1, [](const StateVector& x) { return StateVector::Zero(x.size()); },
      [](const StateVector&) { return InputMatrix::Identity(1, 1); }, {0});
}

inline pi::CostSpec lq_cost(const LqInstance& lq) {
  return {[q = lq.q](const StateVector& x) { return 0.5 * q * x(0) * x(0); },
          [qf = lq.q_f](const StateVector& x) { return 0.5 * qf * x(0) * x(0); }};
}

inline pi::PathIntegralParams lq_params(const LqInstance& lq, std::size_t samples) {
  return pi::PathIntegralParams(lq.s_hat, lq.alpha, samples, lq.dt, lq.T);
}

/// Path-integral estimate at x0, t0 = 0.
inline double lq_estimate(const LqInstance& lq, double x0, std::size_t samples, std::uint64_t seed, int workers = 1) {
  const dyn::EffectiveDynamics eff(lq_model());
  StateVector x(1);
  x(0) = x0;
  return pi::pi_controller_step(eff, x, 0.0, lq_params(lq, samples), lq_cost(lq), seed, workers).control(0);
}

// Finite differences of task maps ------------------------------------------------

/// Indices of the configuration (px, py, theta) of every agent inside the state.
inline std::vector<int> config_indices(int agents) {
  std::vector<int> idx;
  for (int i = 0; i < agents; ++i) {
    idx.push_back(kStatePerAgent * i);
    idx.push_back(kStatePerAgent * i + 1);
    idx.push_back(kStatePerAgent * i + 3);
  }
  return idx;
}

/// Random team states: positions in [-5, 5]^2 at least `clearance` from
/// `avoid` and from each other, speeds in [0.2, 2], headings in [-pi, pi).
/// The default clearance keeps agents outside the default obstacle.
inline std::vector<StateVector> random_states(int agents, std::size_t count, std::uint64_t seed,
                                              const Eigen::Vector2d& avoid = Eigen::Vector2d::Zero(),
                                              double clearance = 0.5) {
  CounterEngine engine(stream_key(seed, 0));
  std::uniform_real_distribution<double> pos(-5.0, 5.0);
  std::uniform_real_distribution<double> speed(0.2, 2.0);
  std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi);
  std::vector<StateVector> out;
  while (out.size() < count) {
    StateVector x(agents * kStatePerAgent);
    bool ok = true;
    for (int i = 0; i < agents; ++i) {
      const int o = kStatePerAgent * i;
      x(o) = pos(engine);
      x(o + 1) = pos(engine);
      x(o + 2) = speed(engine);
      x(o + 3) = heading(engine);
      if ((x.segment<2>(o) - avoid).norm() < clearance) ok = false;
    }
    if (agents == 2 && (x.segment<2>(0) - x.segment<2>(kStatePerAgent)).norm() < clearance) ok = false;
    if (ok) out.push_back(x);
  }
  return out;
}

/// Worst case over the checked states of one finite-difference comparison.
struct FdCheck {
  double max_rel_error = 0.0;
  double min_ratio = std::numeric_limits<double>::infinity();
  double max_ratio = 0.0;
  std::size_t ratio_samples = 0;

  void add(double rel_error) { max_rel_error = std::max(max_rel_error, rel_error); }
  void add_ratio(double ratio) {
    min_ratio = std::min(min_ratio, ratio);
    max_ratio = std::max(max_ratio, ratio);
    ++ratio_samples;
  }
};

struct FdReport {
  std::string task;
  std::size_t states = 0;
  FdCheck jacobian;     // J against central differences in q
  FdCheck rate;         // sigma_dot against a forward difference along the flow
  FdCheck drift;        // delta against a forward difference of sigma_dot with u = 0
  FdCheck input_map;    // delta + Lambda e_j against a forward difference with u = e_j
};

namespace detail {

inline double rel_error(const Eigen::Ref<const Eigen::MatrixXd>& approx, const Eigen::Ref<const Eigen::MatrixXd>& ref) {
  return (approx - ref).cwiseAbs().maxCoeff() / std::max(ref.cwiseAbs().maxCoeff(), 1.0);
}

}  // namespace detail

/// Compares the analytic (J, Lambda, delta) of a task with finite differences.
///
/// J uses central differences in each configuration coordinate. sigma_dot,
/// delta and Lambda are checked against one explicit Euler step of length h,
/// whose error is first order, so halving h should halve it. The ratio is
/// only recorded where the relative error at h/2 exceeds `ratio_floor`, well
/// above roundoff; for maps that are linear along the step the difference is
/// exact and there is nothing to measure.
inline FdReport check_task_derivatives(const tasks::TaskSpec& task, std::span<const StateVector> states, double h,
                                       double ratio_floor = 1e-9) {
  const dyn::DynamicsModel model = dyn::unicycle_team_model(task.agents());
  const std::vector<int> q = config_indices(task.agents());
  const int p = model.control_dim();
  FdReport report;
  report.task = task.name();
  report.states = states.size();

  auto forward = [&](const StateVector& x, const ControlVector& u, double step, const tasks::TaskEval& at_x,
                     Eigen::VectorXd& rate_fd, Eigen::VectorXd& accel_fd) {
    const StateVector xn = dyn::step_deterministic(model, x, u, step);
    const tasks::TaskEval next = task.evaluate(xn);
    rate_fd = (next.sigma - at_x.sigma) / step;
    accel_fd = (next.sigma_dot - at_x.sigma_dot) / step;
  };

  auto record = [&](FdCheck& check, const Eigen::VectorXd& ref, const Eigen::VectorXd& fd_h,
                    const Eigen::VectorXd& fd_half) {
    const double e1 = detail::rel_error(fd_h, ref);
    const double e2 = detail::rel_error(fd_half, ref);
    check.add(e1);
    if (e2 > ratio_floor) check.add_ratio(e1 / e2);
  };

  for (const StateVector& x : states) {
    const tasks::TaskEval ev = task.evaluate(x);
    const int m = task.dim();

    Eigen::MatrixXd J_fd(m, static_cast<Eigen::Index>(q.size()));
    for (std::size_t j = 0; j < q.size(); ++j) {
      StateVector xp = x;
      StateVector xm = x;
      xp(q[j]) += h;
      xm(q[j]) -= h;
      J_fd.col(static_cast<Eigen::Index>(j)) = (task.sigma(xp) - task.sigma(xm)) / (2.0 * h);
    }
    report.jacobian.add(detail::rel_error(J_fd, ev.jacobian));

    Eigen::VectorXd rate_h, rate_half, accel_h, accel_half;
    const ControlVector zero = ControlVector::Zero(p);
    forward(x, zero, h, ev, rate_h, accel_h);
    forward(x, zero, 0.5 * h, ev, rate_half, accel_half);
    record(report.rate, ev.sigma_dot, rate_h, rate_half);
    record(report.drift, ev.drift, accel_h, accel_half);

    for (int j = 0; j < p; ++j) {
      const ControlVector e = ControlVector::Unit(p, j);
      forward(x, e, h, ev, rate_h, accel_h);
      forward(x, e, 0.5 * h, ev, rate_half, accel_half);
      const Eigen::VectorXd ref = ev.drift + ev.input_map.col(j);
      record(report.input_map, ref, accel_h, accel_half);
    }
  }
  return report;
}

/// The five task maps of the two experiments, in a fixed order.
inline std::vector<tasks::TaskSpec> reference_tasks() {
  tasks::ObstacleSpec obstacle;
  const Eigen::Vector2d goal(3.0, 0.0);
  return {tasks::make_obstacle_task_single(obstacle), tasks::make_goal_task_single(goal),
          tasks::make_obstacle_task_pair(obstacle), tasks::make_centroid_task(goal), tasks::make_distance_task(0.5)};
}

}  // namespace hierpi::oracle
