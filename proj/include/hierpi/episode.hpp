#pragma once

// Closed-loop episodes and seeded batches over a scenario.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hierpi/dynamics.hpp"
#include "hierpi/errors.hpp"
#include "hierpi/hiercore.hpp"
#include "hierpi/parallel.hpp"
#include "hierpi/path_integral.hpp"
#include "hierpi/rng.hpp"
#include "hierpi/scenario.hpp"
#include "hierpi/types.hpp"

namespace hierpi::harness {

inline constexpr double kOscillationWindow = 0.2;  // trailing fraction of the episode
inline constexpr int kOscillationSignChanges = 3;

struct TaskRecord {
  bool active = false;
  TaskVector sigma;
  TaskVector error;               // sigma_d - sigma
  ControlVector contribution;     // N_i u_i
  double tracking_residual = std::numeric_limits<double>::quiet_NaN();  // |Lambda_a u - target| for active PD levels
};

struct PiRecord {
  bool invoked = false;
  bool inert = false;
  bool degenerate = false;
  double ess = std::numeric_limits<double>::quiet_NaN();
  double weight_entropy = std::numeric_limits<double>::quiet_NaN();
  double min_cost = std::numeric_limits<double>::quiet_NaN();
  double mean_cost = std::numeric_limits<double>::quiet_NaN();
  double control_norm = std::numeric_limits<double>::quiet_NaN();
};

struct StepRecord {
  double t = 0.0;
  StateVector x;
  ControlVector u;  // zero on the terminal record
  std::vector<TaskRecord> tasks;
  PiRecord pi;
};

struct EpisodeSummary {
  double final_goal_distance = 0.0;
  double min_obstacle_distance = 0.0;  // min over steps and agents of |p - c|
  double min_clearance = 0.0;          // min_obstacle_distance - r
  int oscillation_sign_changes = 0;
  bool oscillating = false;
  double mean_spacing_error = 0.0;     // time average of | |p1 - p2| - l |, two agents only
  std::uint64_t sampler_calls = 0;
  std::size_t degenerate_steps = 0;    // control steps whose weights had ESS < 2
};

struct TrajectoryLog {
  Mode mode = Mode::pd_only;
  std::uint64_t seed = 0;
  int agents = 1;
  std::vector<std::string> task_names;
  std::vector<StepRecord> steps;
  EpisodeSummary summary;
};

/// Strict sign changes of the discrete derivative of a series.
inline int derivative_sign_changes(const std::vector<double>& series) {
  int changes = 0;
  double prev = 0.0;
  for (std::size_t i = 1; i < series.size(); ++i) {
    const double d = series[i] - series[i - 1];
    if (d == 0.0) continue;
    if (prev != 0.0 && (d > 0.0) != (prev > 0.0)) ++changes;
    prev = d;
  }
  return changes;
}

/// Recomputes the terminal summary from the step series.
inline EpisodeSummary summarize(const Scenario& scn, const std::vector<StepRecord>& steps) {
  EpisodeSummary s;
  if (steps.empty()) return s;
  s.final_goal_distance = scn.goal_distance(steps.back().x);
  s.min_obstacle_distance = std::numeric_limits<double>::infinity();
  std::vector<double> goal;
  goal.reserve(steps.size());
  double spacing_sum = 0.0;
  for (const auto& st : steps) {
    for (int i = 0; i < scn.agents(); ++i) {
      const double d = (st.x.segment<2>(kStatePerAgent * i) - scn.obstacle.center).norm();
      s.min_obstacle_distance = std::min(s.min_obstacle_distance, d);
    }
    goal.push_back(scn.goal_distance(st.x));
    if (scn.spacing) spacing_sum += std::abs(scn.agent_spacing(st.x) - *scn.spacing);
  }
  s.min_clearance = s.min_obstacle_distance - scn.obstacle.radius;
  const auto window = static_cast<std::size_t>(std::ceil(kOscillationWindow * static_cast<double>(goal.size())));
  const std::vector<double> tail(goal.end() - static_cast<std::ptrdiff_t>(std::min(window + 1, goal.size())),
                                 goal.end());
  s.oscillation_sign_changes = derivative_sign_changes(tail);
  s.oscillating = s.oscillation_sign_changes >= kOscillationSignChanges;
  if (scn.spacing) s.mean_spacing_error = spacing_sum / static_cast<double>(steps.size());
  return s;
}

/// One closed-loop episode. The plant is integrated without noise; in hybrid
/// mode the path-integral level draws its rollout noise from stream_key(seed, step).
/// Steps whose importance weights collapse (ESS < 2) still apply the estimate
/// and are counted in the summary.
inline TrajectoryLog run_episode(const Scenario& scn, Mode mode, std::uint64_t seed, int workers = default_workers()) {
  const dyn::DynamicsModel model = scn.dynamics();
  const dyn::Hierarchy hierarchy = scn.hierarchy(mode);
  const std::optional<dyn::EffectiveDynamics> eff =
      mode == Mode::hybrid ? std::optional<dyn::EffectiveDynamics>(dyn::EffectiveDynamics(model, hierarchy))
                           : std::nullopt;
  const pi::PathIntegralParams params = scn.pi_params();
  const pi::CostSpec cost = scn.cost();
  const auto pi_index = hierarchy.path_integral_index();
  const std::size_t K = hierarchy.size();
  const std::size_t n = scn.steps();
  const int p = model.control_dim();
  std::uint64_t sampler_calls = 0;

  TrajectoryLog log;
  log.mode = mode;
  log.seed = seed;
  log.agents = scn.agents();
  for (const auto& level : hierarchy) log.task_names.push_back(level.task.name());
  log.steps.reserve(n + 1);

  StateVector x = scn.x0;
  dyn::HierarchySnapshot snap;
  std::vector<ControlVector> controls(K);
  std::vector<InputMap> maps(K);
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * scn.dt;
    StepRecord rec;
    rec.t = t;
    rec.x = x;
    rec.u = ControlVector::Zero(p);
    try {
      dyn::evaluate_hierarchy(hierarchy, x, t, snap);
      ControlVector pi_control = ControlVector::Zero(p);
      if (k < n && pi_index) {
        const pi::ControlEstimate est = pi::pi_controller_step(*eff, x, t, params, cost, stream_key(seed, k), workers,
                                                               pi::DegeneratePolicy::accept);
        ++sampler_calls;
        pi_control = est.control;
        rec.pi = {true,         est.inert,          est.degenerate,    est.ess, est.weight_entropy,
                  est.min_cost, est.mean_cost, est.control.norm()};
      }
      for (std::size_t i = 0; i < K; ++i) {
        const bool is_pi = pi_index && *pi_index == i;
        controls[i] = is_pi ? pi_control : snap.levels[i].control;
        maps[i] = snap.levels[i].active_map;
      }
      if (k < n) rec.u = hier::compose_nested(controls, maps);

      rec.tasks.resize(K);
      for (std::size_t i = 0; i < K; ++i) {
        const dyn::LevelState& ls = snap.levels[i];
        TaskRecord& tr = rec.tasks[i];
        tr.active = ls.active;
        tr.sigma = ls.eval.sigma;
        tr.error = hierarchy[i].task.desired(t).value - ls.eval.sigma;
        tr.contribution = k < n ? ControlVector(ls.null_space * controls[i]) : ControlVector::Zero(p);
        const bool is_pi = pi_index && *pi_index == i;
        if (ls.active && !is_pi && k < n) {
          const tasks::ActiveRows rows = tasks::pd_active_rows(hierarchy[i].task, ls.eval, t);
          tr.tracking_residual = (rows.input_map * rec.u - rows.target).norm();
        }
      }
      log.steps.push_back(std::move(rec));
      if (k < n) x = dyn::step_deterministic(model, x, log.steps.back().u, scn.dt);
    } catch (const NumericalFailure& e) {
      throw EpisodeFailure(k, e.what());
    }
  }
  log.summary = summarize(scn, log.steps);
  for (const auto& st : log.steps) log.summary.degenerate_steps += st.pi.degenerate ? 1 : 0;
  log.summary.sampler_calls = sampler_calls;
  return log;
}

/// Per-step mean and standard deviation across completed runs.
struct BatchStats {
  std::vector<double> t;
  std::vector<double> mean_goal_distance;
  std::vector<double> std_goal_distance;
  std::vector<double> mean_spacing;
  std::vector<double> std_spacing;
  std::size_t runs = 0;       // configured run count
  std::size_t completed = 0;
  std::size_t successes = 0;  // final goal distance < success radius and no obstacle penetration
  std::vector<double> final_goal_distance;    // per completed run, in run order
  std::vector<double> min_obstacle_distance;
  std::vector<double> mean_spacing_error;
};

struct BatchResult {
  BatchStats stats;
  std::vector<std::optional<TrajectoryLog>> logs;  // index i holds run i, empty when it failed
  std::vector<std::string> errors;                 // "run i: message"
};

inline bool run_succeeded(const Scenario& scn, const EpisodeSummary& s) {
  return s.final_goal_distance < scn.success_radius && s.min_obstacle_distance >= scn.obstacle.radius;
}

/// Aggregates logs in run order. Population standard deviation.
inline BatchStats aggregate(const Scenario& scn, const std::vector<std::optional<TrajectoryLog>>& logs) {
  BatchStats stats;
  stats.runs = logs.size();
  std::vector<const TrajectoryLog*> done;
  for (const auto& l : logs) {
    if (l) done.push_back(&*l);
  }
  stats.completed = done.size();
  if (done.empty()) return stats;
  const std::size_t steps = done.front()->steps.size();
  stats.t.resize(steps);
  stats.mean_goal_distance.assign(steps, 0.0);
  stats.std_goal_distance.assign(steps, 0.0);
  stats.mean_spacing.assign(steps, 0.0);
  stats.std_spacing.assign(steps, 0.0);
  const auto count = static_cast<double>(done.size());
  for (std::size_t k = 0; k < steps; ++k) {
    stats.t[k] = done.front()->steps[k].t;
    double g = 0.0;
    double d = 0.0;
    for (const auto* l : done) {
      g += scn.goal_distance(l->steps[k].x);
      d += scn.agent_spacing(l->steps[k].x);
    }
    g /= count;
    d /= count;
    double gv = 0.0;
    double dv = 0.0;
    for (const auto* l : done) {
      gv += std::pow(scn.goal_distance(l->steps[k].x) - g, 2);
      dv += std::pow(scn.agent_spacing(l->steps[k].x) - d, 2);
    }
    stats.mean_goal_distance[k] = g;
    stats.std_goal_distance[k] = std::sqrt(gv / count);
    stats.mean_spacing[k] = d;
    stats.std_spacing[k] = std::sqrt(dv / count);
  }
  for (const auto* l : done) {
    stats.final_goal_distance.push_back(l->summary.final_goal_distance);
    stats.min_obstacle_distance.push_back(l->summary.min_obstacle_distance);
    stats.mean_spacing_error.push_back(l->summary.mean_spacing_error);
    if (run_succeeded(scn, l->summary)) ++stats.successes;
  }
  return stats;
}

/// Runs seeds base, base + 1, ... concurrently. Failed runs are recorded and
/// skipped; more than 10% failures fail the batch.
inline BatchResult run_batch(const Scenario& scn, Mode mode, std::size_t n_runs, int workers = default_workers()) {
  if (n_runs < 1) throw ValidationError("runs", "need at least one run");
  BatchResult result;
  result.logs.resize(n_runs);
  std::vector<std::string> failures(n_runs);
  const int outer = static_cast<int>(std::min<std::size_t>(n_runs, static_cast<std::size_t>(std::max(1, workers))));
  const int inner = std::max(1, workers / outer);
  parallel_for(n_runs, outer, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        result.logs[i] = run_episode(scn, mode, scn.seeds.base + i, inner);
      } catch (const Error& e) {
        failures[i] = e.what();
      }
    }
  });
  for (std::size_t i = 0; i < n_runs; ++i) {
    if (!result.logs[i]) result.errors.push_back("run " + std::to_string(i) + ": " + failures[i]);
  }
  if (10 * result.errors.size() > n_runs) {
    throw NumericalFailure(std::to_string(result.errors.size()) + " of " + std::to_string(n_runs) +
                           " runs failed; first: " + result.errors.front());
  }
  result.stats = aggregate(scn, result.logs);
  return result;
}

}  // namespace hierpi::harness
