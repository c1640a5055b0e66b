#pragma once

// Control-affine plant models, Euler / Euler-Maruyama steps and the
// effective dynamics seen by the path-integral level of a task hierarchy.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hierpi/errors.hpp"
#include "hierpi/hiercore.hpp"
#include "hierpi/tasks.hpp"
#include "hierpi/types.hpp"

namespace hierpi::dyn {

/// x_dot = f(x) + G(x) u. Rows listed in noise_rows are the ones the control
/// (and therefore the exploration noise) enters; every other row of G is zero.
class DynamicsModel {
 public:
  using DriftFn = std::function<StateVector(const StateVector&)>;
  using InputFn = std::function<InputMatrix(const StateVector&)>;

  DynamicsModel(std::string name, int state_dim, int control_dim, DriftFn drift, InputFn input,
                std::vector<int> noise_rows, int agents = 0)
      : name_(std::move(name)),
        state_dim_(state_dim),
        control_dim_(control_dim),
        agents_(agents),
        drift_(std::move(drift)),
        input_(std::move(input)),
        noise_rows_(std::move(noise_rows)) {
    if (state_dim_ < 1 || state_dim_ > kMaxStateDim) throw DimensionMismatch("state dimension out of range");
    if (control_dim_ < 1 || control_dim_ > kMaxControlDim) throw DimensionMismatch("control dimension out of range");
    for (int r : noise_rows_) {
      if (r < 0 || r >= state_dim_) throw DimensionMismatch("noise row out of range");
    }
  }

  const std::string& name() const noexcept { return name_; }
  int state_dim() const noexcept { return state_dim_; }
  int control_dim() const noexcept { return control_dim_; }
  int agents() const noexcept { return agents_; }
  const std::vector<int>& noise_rows() const noexcept { return noise_rows_; }

  StateVector drift(const StateVector& x) const { return drift_(x); }
  InputMatrix input(const StateVector& x) const { return input_(x); }

 private:
  std::string name_;
  int state_dim_;
  int control_dim_;
  int agents_;
  DriftFn drift_;
  InputFn input_;
  std::vector<int> noise_rows_;
};

/// Team of `agents` unicycles, state (px, py, s, theta) and control (a, omega) per agent.
inline DynamicsModel unicycle_team_model(int agents) {
  if (agents < 1 || agents > kMaxAgents) throw DimensionMismatch("unsupported agent count");
  const int nx = agents * kStatePerAgent;
  const int nu = agents * kControlPerAgent;
  InputMatrix G = InputMatrix::Zero(nx, nu);
  std::vector<int> noise_rows;
  for (int i = 0; i < agents; ++i) {
    G(kStatePerAgent * i + 2, kControlPerAgent * i) = 1.0;
    G(kStatePerAgent * i + 3, kControlPerAgent * i + 1) = 1.0;
    noise_rows.push_back(kStatePerAgent * i + 2);
    noise_rows.push_back(kStatePerAgent * i + 3);
  }
  auto drift = [agents](const StateVector& x) {
    StateVector f = StateVector::Zero(x.size());
    for (int i = 0; i < agents; ++i) {
      const int o = kStatePerAgent * i;
      f(o) = x(o + 2) * std::cos(x(o + 3));
      f(o + 1) = x(o + 2) * std::sin(x(o + 3));
    }
    return f;
  };
  auto input = [G](const StateVector&) { return G; };
  return DynamicsModel(agents == 1 ? "single_unicycle" : "two_unicycle", nx, nu, std::move(drift),
                       std::move(input), std::move(noise_rows), agents);
}

inline DynamicsModel unicycle_model() { return unicycle_team_model(1); }
inline DynamicsModel two_unicycle_model() { return unicycle_team_model(2); }

inline void require_finite(const StateVector& x, const char* what) {
  if (!x.allFinite()) throw NonFinite(std::string(what) + " produced a non-finite state");
}

/// Heading mapped to [0, 2 pi).
inline double wrap_heading(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta, two_pi);
  if (w < 0.0) w += two_pi;
  return w;
}

/// Explicit Euler: x + (f(x) + G(x) u) dt.
inline StateVector step_deterministic(const DynamicsModel& model, const StateVector& x, const ControlVector& u,
                                      double dt) {
  if (!(dt > 0.0)) throw ValidationError("dt", "step must be positive");
  if (x.size() != model.state_dim() || u.size() != model.control_dim()) {
    throw DimensionMismatch("state or control size does not match the model");
  }
  StateVector next = x + (model.drift(x) + model.input(x) * u) * dt;
  require_finite(next, "deterministic step");
  return next;
}

// Hierarchy -------------------------------------------------------------------

enum class Controller { pd, path_integral };

struct Level {
  tasks::TaskSpec task;
  Controller controller = Controller::pd;
};

/// Tasks in descending priority, each with the controller that drives it.
class Hierarchy {
 public:
  Hierarchy() = default;
  explicit Hierarchy(std::vector<Level> levels) : levels_(std::move(levels)) {
    for (const auto& l : levels_) {
      if (l.task.control_dim() != levels_.front().task.control_dim()) {
        throw DimensionMismatch("all tasks must act on the same control space");
      }
    }
    std::size_t pi_levels = 0;
    for (std::size_t k = 0; k < levels_.size(); ++k) {
      if (levels_[k].controller == Controller::path_integral) {
        pi_index_ = k;
        ++pi_levels;
      }
    }
    if (pi_levels > 1) throw ValidationError("tasks", "at most one task may use the path-integral controller");
  }

  std::size_t size() const noexcept { return levels_.size(); }
  bool empty() const noexcept { return levels_.empty(); }
  const Level& operator[](std::size_t k) const { return levels_[k]; }
  auto begin() const noexcept { return levels_.begin(); }
  auto end() const noexcept { return levels_.end(); }
  std::optional<std::size_t> path_integral_index() const noexcept { return pi_index_; }

  /// Same tasks, every level on its PD law.
  Hierarchy all_pd() const {
    std::vector<Level> copy = levels_;
    for (auto& l : copy) l.controller = Controller::pd;
    return Hierarchy(std::move(copy));
  }

 private:
  std::vector<Level> levels_;
  std::optional<std::size_t> pi_index_;
};

/// One level evaluated at one state.
struct LevelState {
  tasks::TaskEval eval;
  bool active = false;          // some row active and the active rows have full rank
  bool rank_deficient = false;  // active rows lost rank; the level sits out this step
  InputMap active_map;          // active rows of Lambda (zero rows when the level sits out)
  ControlVector control;        // PD law, zero for the path-integral level or when inactive
  ControlMatrix projector;      // P_i = I - Lambda_a^+ Lambda_a, identity when inactive
  ControlMatrix null_space;     // N_i = P_1 ... P_{i-1}
};

/// Every level at one state, plus the pieces the composition needs.
struct HierarchySnapshot {
  std::vector<LevelState> levels;
  ControlVector pd_control;    // sum over PD levels of N_i u_i
  ControlMatrix pi_null_space; // N_k of the path-integral level (identity without one)

  /// u = sum_{i != k} N_i u_i + N_k u_pi
  ControlVector compose(const ControlVector& pi_control) const { return pd_control + pi_null_space * pi_control; }
};

/// Evaluates activation, PD laws and nested projectors of every level at x.
///
/// Inactive levels and levels whose active rows are rank deficient contribute
/// nothing and project with the identity. The nested composition
///   u_1 + P_1 (u_2 + P_2 (u_3 + ...))
/// expands to sum_i N_i u_i with N_i = P_1 ... P_{i-1}, which is what this
/// snapshot stores.
inline void evaluate_hierarchy(const Hierarchy& hierarchy, const StateVector& x, double t, HierarchySnapshot& out,
                               hier::RankTolerance tol = {}) {
  const std::size_t K = hierarchy.size();
  out.levels.resize(K);
  if (K == 0) return;
  const int p = hierarchy[0].task.control_dim();
  const auto pi_index = hierarchy.path_integral_index();

  ControlMatrix N = ControlMatrix::Identity(p, p);
  out.pd_control.setZero(p);
  out.pi_null_space = ControlMatrix::Identity(p, p);

  for (std::size_t k = 0; k < K; ++k) {
    const Level& level = hierarchy[k];
    LevelState& s = out.levels[k];
    level.task.evaluate(x, s.eval);
    s.null_space = N;
    s.control.setZero(p);
    s.projector.setIdentity(p, p);
    s.active = false;
    s.rank_deficient = false;
    s.active_map.resize(0, p);

    const bool is_pi = pi_index && *pi_index == k;
    if (s.eval.active.any()) {
      const tasks::ActiveRows rows = tasks::pd_active_rows(level.task, s.eval, t);
      try {
        const auto pinv = hier::right_pseudoinverse(rows.input_map, tol);
        s.projector.noalias() -= pinv * rows.input_map;
        if (!is_pi) s.control.noalias() = pinv * rows.target;
        s.active_map = rows.input_map;
        s.active = true;
      } catch (const RankDeficient&) {
        s.rank_deficient = true;
        s.projector.setIdentity(p, p);
      }
    }

    if (is_pi) {
      out.pi_null_space = N;
    } else if (s.active) {
      out.pd_control.noalias() += N * s.control;
    }
    N = N * s.projector;
  }
}

inline HierarchySnapshot evaluate_hierarchy(const Hierarchy& hierarchy, const StateVector& x, double t,
                                            hier::RankTolerance tol = {}) {
  HierarchySnapshot out;
  evaluate_hierarchy(hierarchy, x, t, out, tol);
  return out;
}

// Effective dynamics -------------------------------------------------------------

/// f~, G~ and N_k at one state.
struct EffectiveTerms {
  StateVector drift;     // f(x) + G(x) sum_{i != k} N_i u_i(x)
  InputMatrix input;     // G(x) N_k(x)
  ControlMatrix null_space;
};

/// Plant dynamics with every PD level folded into the drift and the
/// path-integral level's projected input map as the only control channel:
///   dx = f~(x) dt + G~(x) (u~ dt + s_hat dw).
/// The PD laws are re-evaluated at every queried state, so rollouts see the
/// closed loop of the other tasks.
class EffectiveDynamics {
 public:
  /// The path-integral task is the only task: f~ = f and G~ = G.
  explicit EffectiveDynamics(DynamicsModel model) : model_(std::move(model)) {}

  EffectiveDynamics(DynamicsModel model, Hierarchy hierarchy)
      : model_(std::move(model)), hierarchy_(std::move(hierarchy)) {
    if (!hierarchy_.empty()) {
      if (!hierarchy_.path_integral_index()) {
        throw ValidationError("tasks", "effective dynamics need exactly one path-integral task");
      }
      if (hierarchy_[0].task.control_dim() != model_.control_dim()) {
        throw DimensionMismatch("hierarchy and model disagree on the control dimension");
      }
    }
  }

  const DynamicsModel& model() const noexcept { return model_; }
  const Hierarchy& hierarchy() const noexcept { return hierarchy_; }
  std::size_t pi_index() const noexcept { return hierarchy_.path_integral_index().value_or(0); }

  void evaluate(const StateVector& x, double t, HierarchySnapshot& workspace, EffectiveTerms& out,
                hier::RankTolerance tol = {}) const {
    const int p = model_.control_dim();
    out.drift = model_.drift(x);
    const InputMatrix G = model_.input(x);
    if (hierarchy_.empty()) {
      out.input = G;
      out.null_space = ControlMatrix::Identity(p, p);
      return;
    }
    evaluate_hierarchy(hierarchy_, x, t, workspace, tol);
    out.drift.noalias() += G * workspace.pd_control;
    out.input.noalias() = G * workspace.pi_null_space;
    out.null_space = workspace.pi_null_space;
  }

  EffectiveTerms evaluate(const StateVector& x, double t) const {
    HierarchySnapshot workspace;
    EffectiveTerms out;
    evaluate(x, t, workspace, out);
    return out;
  }

  /// Rows of G~ that the noise drives directly.
  BoundedMatrix<kMaxStateDim, kMaxControlDim> noise_block(const InputMatrix& input) const {
    const auto& rows = model_.noise_rows();
    BoundedMatrix<kMaxStateDim, kMaxControlDim> out(static_cast<Eigen::Index>(rows.size()), input.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = input.row(rows[r]);
    return out;
  }

 private:
  DynamicsModel model_;
  Hierarchy hierarchy_;
};

/// x + f~ dt + G~ (u~ dt + s_hat eps sqrt(dt)) with precomputed terms.
inline StateVector advance(const EffectiveTerms& terms, const StateVector& x, const ControlVector& control,
                           double s_hat, double dt, const ControlVector& eps) {
  StateVector next = x + terms.drift * dt;
  next.noalias() += terms.input * (control * dt + eps * (s_hat * std::sqrt(dt)));
  return next;
}

/// One Euler-Maruyama step of the effective dynamics under a given noise draw.
inline StateVector step_stochastic(const EffectiveDynamics& eff, const StateVector& x, double t,
                                   const ControlVector& control, double s_hat, double dt, const ControlVector& eps) {
  if (!(dt > 0.0)) throw ValidationError("dt", "step must be positive");
  if (!(s_hat >= 0.0)) throw ValidationError("s_hat", "diffusion coefficient must be nonnegative");
  if (control.size() != eff.model().control_dim() || eps.size() != eff.model().control_dim()) {
    throw DimensionMismatch("control or noise size does not match the model");
  }
  const EffectiveTerms terms = eff.evaluate(x, t);
  StateVector next = advance(terms, x, control, s_hat, dt, eps);
  require_finite(next, "stochastic step");
  return next;
}

inline EffectiveDynamics effective_dynamics(DynamicsModel model, Hierarchy hierarchy) {
  return EffectiveDynamics(std::move(model), std::move(hierarchy));
}

}  // namespace hierpi::dyn
