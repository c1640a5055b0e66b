#pragma once

// Sampling-based path-integral controller for one level of the hierarchy.
//
// Rollouts integrate the uncontrolled effective dynamics
//   x_{i+1} = x_i + f~(x_i) dt + s_hat G~(x_i) eps_i sqrt(dt)
// and the control is the importance-weighted average of the first noise draw:
//   u* = pinv(G2) * sum_j w_j s_hat G2 eps_0j / (sum_j w_j sqrt(dt)),
//   w_j = exp(-(S_j - min S) / lambda),   lambda = alpha s_hat^2,
// where G2 are the noise-driven rows of G~ at the current state.

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hierpi/dynamics.hpp"
#include "hierpi/errors.hpp"
#include "hierpi/hiercore.hpp"
#include "hierpi/parallel.hpp"
#include "hierpi/rng.hpp"
#include "hierpi/types.hpp"

namespace hierpi::pi {

class PathIntegralParams {
 public:
  PathIntegralParams(double s_hat, double alpha, std::size_t samples, double dt, double horizon_end,
                     double running_weight = 1.0, std::optional<double> horizon_cap = std::nullopt)
      : s_hat_(s_hat),
        alpha_(alpha),
        samples_(samples),
        dt_(dt),
        horizon_end_(horizon_end),
        running_weight_(running_weight),
        horizon_cap_(horizon_cap) {
    if (!(s_hat_ > 0.0)) throw ValidationError("pi.s_hat", "diffusion coefficient must be positive");
    if (!(alpha_ > 0.0)) throw ValidationError("pi.alpha", "control cost weight must be positive");
    if (samples_ < 1) throw ValidationError("pi.M", "need at least one sample");
    if (!(dt_ > 0.0)) throw ValidationError("dt", "step must be positive");
    if (!(horizon_end_ > 0.0)) throw ValidationError("T", "horizon must be positive");
    if (!(running_weight_ >= 0.0)) throw ValidationError("pi.running_weight", "weight must be nonnegative");
    if (horizon_cap_ && !(*horizon_cap_ > 0.0)) throw ValidationError("pi.horizon_cap", "cap must be positive");
  }

  double s_hat() const noexcept { return s_hat_; }
  double alpha() const noexcept { return alpha_; }
  /// Temperature tying control cost and noise: lambda = alpha s_hat^2.
  double lambda() const noexcept { return alpha_ * s_hat_ * s_hat_; }
  std::size_t samples() const noexcept { return samples_; }
  double dt() const noexcept { return dt_; }
  double horizon_end() const noexcept { return horizon_end_; }
  double running_weight() const noexcept { return running_weight_; }
  std::optional<double> horizon_cap() const noexcept { return horizon_cap_; }

  PathIntegralParams with_samples(std::size_t samples) const {
    PathIntegralParams p = *this;
    if (samples < 1) throw ValidationError("pi.M", "need at least one sample");
    p.samples_ = samples;
    return p;
  }

  /// Rollout length from t0: the residual horizon (T - t0) / dt, optionally capped.
  std::size_t horizon_steps(double t0) const {
    const double residual = (horizon_end_ - t0) / dt_;
    if (!(residual > 0.5)) throw ValidationError("t0", "rollouts must start before the horizon end");
    auto steps = static_cast<std::size_t>(std::llround(residual));
    if (horizon_cap_) {
      steps = std::min(steps, static_cast<std::size_t>(std::max<long long>(1, std::llround(*horizon_cap_ / dt_))));
    }
    return std::max<std::size_t>(steps, 1);
  }

 private:
  double s_hat_;
  double alpha_;
  std::size_t samples_;
  double dt_;
  double horizon_end_;
  double running_weight_;
  std::optional<double> horizon_cap_;
};

/// State-only running and terminal costs. The control cost alpha/2 |u|^2 is
/// implied by the temperature and never supplied here.
struct CostSpec {
  std::function<double(const StateVector&)> running;
  std::function<double(const StateVector&)> terminal;
};

/// phi(x_tau) + sum_{i < tau} L(x_i) dt over a stored trajectory x_0 ... x_tau.
inline double cost_to_go(std::span<const StateVector> trajectory, const CostSpec& cost, double dt) {
  if (trajectory.empty()) throw ValidationError("trajectory", "trajectory must not be empty");
  double S = 0.0;
  for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) S += cost.running(trajectory[i]) * dt;
  S += cost.terminal(trajectory.back());
  if (!std::isfinite(S)) throw NonFinite("cost-to-go is not finite");
  return S;
}

struct RolloutResult {
  double cost = 0.0;          // S
  ControlVector first_noise;  // eps_0
  double weight = 0.0;        // exp(-(S - S_min) / lambda), set by estimate_control
};

struct ControlEstimate {
  ControlVector control;     // u*
  double normalizer = 0.0;   // mean weight
  double ess = 0.0;          // (sum w)^2 / sum w^2
  double weight_entropy = 0.0;
  double min_cost = 0.0;
  double mean_cost = 0.0;
  bool inert = false;        // G2 vanished: the level has no authority at this state
  bool degenerate = false;   // ESS < 2 with M >= 2 (only reported when degenerate weights are accepted)
};

/// What estimate_control does when one sample dominates the weights.
enum class DegeneratePolicy { raise, accept };

namespace detail {
inline std::atomic<std::uint64_t> sampler_calls{0};
}

/// Number of sample_rollouts invocations in this process.
inline std::uint64_t sampler_call_count() noexcept { return detail::sampler_calls.load(); }

/// Draws params.samples() rollouts of the uncontrolled effective dynamics from
/// (x0, t0). Sample j uses the noise stream (seed, j), so the result is a pure
/// function of the inputs regardless of `workers`.
inline std::vector<RolloutResult> sample_rollouts(const dyn::EffectiveDynamics& eff, const StateVector& x0,
                                                  double t0, const PathIntegralParams& params,
                                                  const CostSpec& cost, std::uint64_t seed,
                                                  int workers = default_workers()) {
  detail::sampler_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t M = params.samples();
  const std::size_t steps = params.horizon_steps(t0);
  const double dt = params.dt();
  const double s_hat = params.s_hat();
  const int p = eff.model().control_dim();
  const ControlVector zero = ControlVector::Zero(p);

  std::vector<RolloutResult> results(M);
  parallel_for(M, workers, [&](std::size_t begin, std::size_t end) {
    dyn::HierarchySnapshot workspace;
    dyn::EffectiveTerms terms;
    ControlVector eps(p);
    for (std::size_t j = begin; j < end; ++j) {
      CounterEngine engine(stream_key(seed, j));
      std::normal_distribution<double> normal;
      StateVector x = x0;
      double S = 0.0;
      for (std::size_t i = 0; i < steps; ++i) {
        S += cost.running(x) * dt;
        eff.evaluate(x, t0 + static_cast<double>(i) * dt, workspace, terms);
        for (int c = 0; c < p; ++c) eps(c) = normal(engine);
        if (i == 0) results[j].first_noise = eps;
        x = dyn::advance(terms, x, zero, s_hat, dt, eps);
        if (!x.allFinite()) {
          throw NonFinite("rollout " + std::to_string(j) + " diverged at step " + std::to_string(i));
        }
      }
      S += cost.terminal(x);
      if (!std::isfinite(S)) throw NonFinite("rollout " + std::to_string(j) + " has a non-finite cost");
      results[j].cost = S;
    }
  });
  return results;
}

/// Importance-weighted control from a batch of rollouts started at x0.
/// Fills the rollout weights. When M >= 2 and the effective sample size drops
/// below 2, throws DegenerateWeights, or with DegeneratePolicy::accept returns
/// the estimate anyway with `degenerate` set.
inline ControlEstimate estimate_control(std::span<RolloutResult> rollouts, const dyn::EffectiveDynamics& eff,
                                        const StateVector& x0, double t0, const PathIntegralParams& params,
                                        DegeneratePolicy policy = DegeneratePolicy::raise,
                                        hier::RankTolerance tol = {}) {
  const std::size_t M = rollouts.size();
  if (M == 0) throw ValidationError("rollouts", "need at least one rollout");
  const int p = eff.model().control_dim();
  const double lambda = params.lambda();

  double min_cost = std::numeric_limits<double>::infinity();
  double cost_sum = 0.0;
  for (const auto& r : rollouts) {
    min_cost = std::min(min_cost, r.cost);
    cost_sum += r.cost;
  }

  double w_sum = 0.0;
  double w_sq_sum = 0.0;
  ControlVector weighted_eps = ControlVector::Zero(p);
  for (auto& r : rollouts) {
    r.weight = std::exp(-(r.cost - min_cost) / lambda);
    w_sum += r.weight;
    w_sq_sum += r.weight * r.weight;
    weighted_eps.noalias() += r.weight * r.first_noise;
  }

  ControlEstimate est;
  est.min_cost = min_cost;
  est.mean_cost = cost_sum / static_cast<double>(M);
  est.normalizer = w_sum / static_cast<double>(M);
  est.ess = w_sum * w_sum / w_sq_sum;
  for (const auto& r : rollouts) {
    const double q = r.weight / w_sum;
    if (q > 0.0) est.weight_entropy -= q * std::log(q);
  }
  if (M >= 2 && est.ess < 2.0) {
    if (policy == DegeneratePolicy::raise) throw DegenerateWeights(est.ess);
    est.degenerate = true;
  }

  const dyn::EffectiveTerms terms = eff.evaluate(x0, t0);
  const auto G2 = eff.noise_block(terms.input);
  est.inert = hier::numerical_rank(G2, tol) == 0;
  if (est.inert) {
    est.control = ControlVector::Zero(p);
    return est;
  }
  const auto numerator = (params.s_hat() * (G2 * weighted_eps)).eval();
  est.control = hier::truncated_pseudoinverse(G2, tol) * numerator / (w_sum * std::sqrt(params.dt()));
  if (!est.control.allFinite()) throw NonFinite("path-integral control is not finite");
  return est;
}

/// Sample, weight and estimate: one control update of the path-integral level.
inline ControlEstimate pi_controller_step(const dyn::EffectiveDynamics& eff, const StateVector& x, double t,
                                          const PathIntegralParams& params, const CostSpec& cost,
                                          std::uint64_t seed, int workers = default_workers(),
                                          DegeneratePolicy policy = DegeneratePolicy::raise) {
  std::vector<RolloutResult> rollouts = sample_rollouts(eff, x, t, params, cost, seed, workers);
  return estimate_control(rollouts, eff, x, t, params, policy);
}

}  // namespace hierpi::pi
