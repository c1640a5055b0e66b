#pragma once

// Task definitions for unicycle teams and the closed-loop PD task law.
//
// Every task is a map sigma = h(x) together with its first and second order
// differential data. For a unicycle (px, py, s, theta) driven by (a, omega):
//
//   sigma_dot  = J(q) q_dot,            q = (px, py, theta)
//   sigma_ddot = drift(x) + Lambda(x) u
//
// The drift and input map are the exact second derivatives; they are checked
// against finite differences in the test suite.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "hierpi/errors.hpp"
#include "hierpi/hiercore.hpp"
#include "hierpi/types.hpp"

namespace hierpi::tasks {

inline constexpr double kDefaultKp = 4.0;
inline constexpr double kDefaultKd = 4.0;

struct AgentState {
  double px;
  double py;
  double speed;
  double heading;
};

inline AgentState agent_state(const StateVector& x, int agent) {
  const int o = agent * kStatePerAgent;
  return {x(o), x(o + 1), x(o + 2), x(o + 3)};
}

/// Diagonal PD gains, one entry per task row.
struct Gains {
  TaskVector kp;
  TaskVector kd;

  static Gains uniform(int dim, double kp, double kd) {
    if (kp < 0.0 || kd < 0.0) throw ValidationError("gains", "gains must be nonnegative");
    return {TaskVector::Constant(dim, kp), TaskVector::Constant(dim, kd)};
  }
  static Gains defaults(int dim) { return uniform(dim, kDefaultKp, kDefaultKd); }
};

struct DesiredSample {
  TaskVector value;
  TaskVector rate;
  TaskVector accel;
};

/// sigma_d(t) with its first two derivatives.
class DesiredTrajectory {
 public:
  static DesiredTrajectory constant(TaskVector value) {
    DesiredTrajectory d;
    const auto m = value.size();
    d.constant_ = DesiredSample{std::move(value), TaskVector::Zero(m), TaskVector::Zero(m)};
    return d;
  }

  explicit DesiredTrajectory(std::function<DesiredSample(double)> fn) : fn_(std::move(fn)) {}

  DesiredSample operator()(double t) const { return constant_ ? *constant_ : fn_(t); }

 private:
  DesiredTrajectory() = default;

  std::optional<DesiredSample> constant_;
  std::function<DesiredSample(double)> fn_;
};

/// Everything a controller needs from one task at one state.
struct TaskEval {
  TaskVector sigma;
  TaskVector sigma_dot;
  TaskVector drift;      // delta
  InputMap input_map;    // Lambda, m x p
  TaskJacobian jacobian; // d sigma / d q, m x n_q
  RowMask active;        // per-row activation predicate
};

class TaskMap {
 public:
  virtual ~TaskMap() = default;

  virtual int dim() const = 0;
  virtual int agents() const = 0;
  virtual void evaluate(const StateVector& x, TaskEval& out) const = 0;

  int control_dim() const { return agents() * kControlPerAgent; }
  int config_dim() const { return agents() * kConfigPerAgent; }
  int state_dim() const { return agents() * kStatePerAgent; }

 protected:
  void reset(TaskEval& out) const {
    const int m = dim();
    out.sigma.setZero(m);
    out.sigma_dot.setZero(m);
    out.drift.setZero(m);
    out.input_map.setZero(m, control_dim());
    out.jacobian.setZero(m, config_dim());
    out.active.setConstant(m, true);
  }
};

struct ObstacleSpec {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.5;
  double activation_threshold = 1.0;

  void validate() const {
    if (!(radius > 0.0)) throw ValidationError("obstacle.r", "radius must be positive");
    if (!(activation_threshold > radius)) {
      throw ValidationError("obstacle.threshold", "activation threshold must exceed the radius");
    }
  }
};

namespace detail {

/// Range to a point obstacle for each agent: sigma_i = |p_i - c|. Row i is
/// active while agent i is inside the threshold and closing in.
class ObstacleRangeMap final : public TaskMap {
 public:
  ObstacleRangeMap(ObstacleSpec obstacle, int agents) : obstacle_(std::move(obstacle)), agents_(agents) {
    obstacle_.validate();
  }

  int dim() const override { return agents_; }
  int agents() const override { return agents_; }

  void evaluate(const StateVector& x, TaskEval& out) const override {
    reset(out);
    for (int i = 0; i < agents_; ++i) {
      const AgentState a = agent_state(x, i);
      const double dx = a.px - obstacle_.center.x();
      const double dy = a.py - obstacle_.center.y();
      const double range = std::hypot(dx, dy);
      if (!(range > 0.0)) throw NonFinite("agent " + std::to_string(i) + " sits on the obstacle center");
      const double ex = dx / range;
      const double ey = dy / range;
      const double c = std::cos(a.heading);
      const double s = std::sin(a.heading);
      const double along = ex * c + ey * s;    // e . h
      const double across = -ex * s + ey * c;  // e . h_perp
      const double range_rate = a.speed * along;

      out.sigma(i) = range;
      out.sigma_dot(i) = range_rate;
      // d/dt (e . v) = e . v_dot + |v_perp_e|^2 / range
      out.drift(i) = (a.speed * a.speed - range_rate * range_rate) / range;
      out.input_map(i, kControlPerAgent * i) = along;
      out.input_map(i, kControlPerAgent * i + 1) = a.speed * across;
      out.jacobian(i, kConfigPerAgent * i) = ex;
      out.jacobian(i, kConfigPerAgent * i + 1) = ey;
      out.active(i) = range < obstacle_.activation_threshold && range_rate < 0.0;
    }
  }

  const ObstacleSpec& obstacle() const noexcept { return obstacle_; }

 private:
  ObstacleSpec obstacle_;
  int agents_;
};

/// Mean position of all agents. With one agent this is the position itself.
class CentroidMap final : public TaskMap {
 public:
  explicit CentroidMap(int agents) : agents_(agents) {}

  int dim() const override { return 2; }
  int agents() const override { return agents_; }

  void evaluate(const StateVector& x, TaskEval& out) const override {
    reset(out);
    const double w = 1.0 / agents_;
    for (int i = 0; i < agents_; ++i) {
      const AgentState a = agent_state(x, i);
      const double c = std::cos(a.heading);
      const double s = std::sin(a.heading);
      out.sigma(0) += w * a.px;
      out.sigma(1) += w * a.py;
      out.sigma_dot(0) += w * a.speed * c;
      out.sigma_dot(1) += w * a.speed * s;
      const int u = kControlPerAgent * i;
      out.input_map(0, u) = w * c;
      out.input_map(1, u) = w * s;
      out.input_map(0, u + 1) = -w * a.speed * s;
      out.input_map(1, u + 1) = w * a.speed * c;
      const int q = kConfigPerAgent * i;
      out.jacobian(0, q) = w;
      out.jacobian(1, q + 1) = w;
    }
  }

 private:
  int agents_;
};

/// Half squared distance between agents 0 and 1.
class SpacingMap final : public TaskMap {
 public:
  int dim() const override { return 1; }
  int agents() const override { return 2; }

  void evaluate(const StateVector& x, TaskEval& out) const override {
    reset(out);
    const AgentState a1 = agent_state(x, 0);
    const AgentState a2 = agent_state(x, 1);
    const double dx = a1.px - a2.px;
    const double dy = a1.py - a2.py;
    const double c1 = std::cos(a1.heading), s1 = std::sin(a1.heading);
    const double c2 = std::cos(a2.heading), s2 = std::sin(a2.heading);
    const double rvx = a1.speed * c1 - a2.speed * c2;
    const double rvy = a1.speed * s1 - a2.speed * s2;

    out.sigma(0) = 0.5 * (dx * dx + dy * dy);
    out.sigma_dot(0) = dx * rvx + dy * rvy;
    out.drift(0) = rvx * rvx + rvy * rvy;
    out.input_map(0, 0) = dx * c1 + dy * s1;
    out.input_map(0, 1) = a1.speed * (-dx * s1 + dy * c1);
    out.input_map(0, 2) = -(dx * c2 + dy * s2);
    out.input_map(0, 3) = -a2.speed * (-dx * s2 + dy * c2);
    out.jacobian(0, 0) = dx;
    out.jacobian(0, 1) = dy;
    out.jacobian(0, 3) = -dx;
    out.jacobian(0, 4) = -dy;
  }
};

}  // namespace detail

/// One level of the hierarchy: task map, set point and PD gains.
class TaskSpec {
 public:
  TaskSpec(std::string name, std::shared_ptr<const TaskMap> map, DesiredTrajectory desired, Gains gains)
      : name_(std::move(name)), map_(std::move(map)), desired_(std::move(desired)), gains_(std::move(gains)) {
    if (gains_.kp.size() != map_->dim() || gains_.kd.size() != map_->dim()) {
      throw DimensionMismatch("task '" + name_ + "': gain vectors must match the task dimension");
    }
    if ((gains_.kp.array() < 0.0).any() || (gains_.kd.array() < 0.0).any()) {
      throw ValidationError(name_ + ".gains", "gains must be nonnegative");
    }
  }

  const std::string& name() const noexcept { return name_; }
  int dim() const { return map_->dim(); }
  int agents() const { return map_->agents(); }
  int control_dim() const { return map_->control_dim(); }
  const Gains& gains() const noexcept { return gains_; }
  const TaskMap& map() const noexcept { return *map_; }

  void evaluate(const StateVector& x, TaskEval& out) const { map_->evaluate(x, out); }
  TaskEval evaluate(const StateVector& x) const {
    TaskEval out;
    map_->evaluate(x, out);
    return out;
  }

  TaskVector sigma(const StateVector& x) const { return evaluate(x).sigma; }
  TaskVector sigma_dot(const StateVector& x) const { return evaluate(x).sigma_dot; }
  TaskVector drift(const StateVector& x) const { return evaluate(x).drift; }
  InputMap input_map(const StateVector& x) const { return evaluate(x).input_map; }
  TaskJacobian jacobian(const StateVector& x) const { return evaluate(x).jacobian; }
  RowMask active_rows(const StateVector& x) const { return evaluate(x).active; }
  bool active(const StateVector& x) const { return evaluate(x).active.any(); }

  DesiredSample desired(double t) const { return desired_(t); }

  /// sigma_d(t) - sigma(x)
  TaskVector error(const StateVector& x, double t) const { return desired(t).value - sigma(x); }

 private:
  std::string name_;
  std::shared_ptr<const TaskMap> map_;
  DesiredTrajectory desired_;
  Gains gains_;
};

/// Rows of Lambda (and of the PD target) whose activation predicate holds.
struct ActiveRows {
  InputMap input_map;
  TaskVector target;
};

inline InputMap active_input_map(const TaskEval& ev) {
  const auto rows = static_cast<int>(ev.active.count());
  InputMap out(rows, ev.input_map.cols());
  for (int i = 0, r = 0; i < ev.input_map.rows(); ++i) {
    if (ev.active(i)) out.row(r++) = ev.input_map.row(i);
  }
  return out;
}

/// Active rows of Lambda with the closed-loop target
///   sigma_ddot_d + Kp (sigma_d - sigma) + Kd (sigma_dot_d - sigma_dot) - delta.
inline ActiveRows pd_active_rows(const TaskSpec& task, const TaskEval& ev, double t) {
  const DesiredSample d = task.desired(t);
  const auto rows = static_cast<int>(ev.active.count());
  ActiveRows out{InputMap(rows, ev.input_map.cols()), TaskVector(rows)};
  for (int i = 0, r = 0; i < ev.input_map.rows(); ++i) {
    if (!ev.active(i)) continue;
    out.input_map.row(r) = ev.input_map.row(i);
    out.target(r) = d.accel(i) + task.gains().kp(i) * (d.value(i) - ev.sigma(i)) +
                    task.gains().kd(i) * (d.rate(i) - ev.sigma_dot(i)) - ev.drift(i);
    ++r;
  }
  return out;
}

/// Closed-loop inverse-kinematics law u_k = Lambda^+ (target) on the active
/// rows. Throws TaskInactive when no row is active and RankDeficient when the
/// active rows of Lambda lose rank.
inline ControlVector pd_task_control(const TaskSpec& task, const TaskEval& ev, double t,
                                     hier::RankTolerance tol = {}) {
  if (!ev.active.any()) throw TaskInactive("task '" + task.name() + "' is inactive");
  const ActiveRows rows = pd_active_rows(task, ev, t);
  return hier::right_pseudoinverse(rows.input_map, tol) * rows.target;
}

inline ControlVector pd_task_control(const TaskSpec& task, const StateVector& x, double t,
                                     hier::RankTolerance tol = {}) {
  return pd_task_control(task, task.evaluate(x), t, tol);
}

// Factories for the shipped tasks ------------------------------------------

inline TaskSpec make_obstacle_task_single(const ObstacleSpec& obstacle, Gains gains = Gains::defaults(1)) {
  return TaskSpec("obstacle", std::make_shared<detail::ObstacleRangeMap>(obstacle, 1),
                  DesiredTrajectory::constant(TaskVector::Constant(1, obstacle.radius)), std::move(gains));
}

inline TaskSpec make_goal_task_single(const Eigen::Vector2d& goal, Gains gains = Gains::defaults(2)) {
  return TaskSpec("goal", std::make_shared<detail::CentroidMap>(1), DesiredTrajectory::constant(goal),
                  std::move(gains));
}

/// Stacked obstacle ranges of two agents; Lambda is block diagonal and each
/// agent's row is activated independently.
inline TaskSpec make_obstacle_task_pair(const ObstacleSpec& obstacle, Gains gains = Gains::defaults(2)) {
  return TaskSpec("obstacle_pair", std::make_shared<detail::ObstacleRangeMap>(obstacle, 2),
                  DesiredTrajectory::constant(TaskVector::Constant(2, obstacle.radius)), std::move(gains));
}

inline TaskSpec make_centroid_task(const Eigen::Vector2d& goal, Gains gains = Gains::defaults(2)) {
  return TaskSpec("centroid", std::make_shared<detail::CentroidMap>(2), DesiredTrajectory::constant(goal),
                  std::move(gains));
}

/// Keeps the two agents at distance `spacing`; the regulated value is spacing^2 / 2.
inline TaskSpec make_distance_task(double spacing, Gains gains = Gains::defaults(1)) {
  if (!(spacing > 0.0)) throw ValidationError("spacing_l", "desired spacing must be positive");
  return TaskSpec("distance", std::make_shared<detail::SpacingMap>(),
                  DesiredTrajectory::constant(TaskVector::Constant(1, 0.5 * spacing * spacing)), std::move(gains));
}

}  // namespace hierpi::tasks
