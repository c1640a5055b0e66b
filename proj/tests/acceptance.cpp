// Acceptance run: one PASS/FAIL line per criterion, plus a plain-text report.
//
//   acceptance --scenarios DIR --report FILE [--only N]
//
// Exits 0 once every criterion has been evaluated, whatever the verdicts;
// exits 1 only when the run itself breaks (missing scenario, exception).

#include <CLI11.hpp>
#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hierpi/hierpi.hpp"

namespace {

using namespace hierpi;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  bool skipped = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 ---------------------------------------------------------------------------

Eigen::MatrixXd random_rows(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  for (;;) {
    Eigen::MatrixXd J(rows, cols);
    for (Eigen::Index i = 0; i < J.size(); ++i) J.data()[i] = n01(rng);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
    const auto& sv = svd.singularValues();
    if (sv(rows - 1) > 1e-3 * sv(0)) return J;
  }
}

Verdict projector_algebra() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> n_dist(1, 12);
  std::uniform_int_distribution<int> k_dist(1, 4);
  double idem = 0.0, annih = 0.0, minnorm = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = n_dist(rng);
    const int K = k_dist(rng);
    std::vector<Eigen::MatrixXd> Js;
    for (int k = 0; k < K; ++k) {
      const int m = std::uniform_int_distribution<int>(1, n)(rng);
      Js.push_back(random_rows(m, n, rng));
    }
    const hier::TaskJacobianSet set(Js);
    const hier::ProjectorChain chain = hier::projector_chain(set);
    for (std::size_t k = 0; k < chain.projectors.size(); ++k) {
      const Eigen::MatrixXd& N = chain.projectors[k];
      idem = std::max(idem, (N * N - N).cwiseAbs().maxCoeff());
      idem = std::max(idem, (N - N.transpose()).cwiseAbs().maxCoeff());
      for (std::size_t j = 0; j < k; ++j) annih = std::max(annih, (Js[j] * N).cwiseAbs().maxCoeff());
    }
    for (const auto& J : Js) {
      // J^+ is a right inverse whose columns lie in the row space of J, and
      // it agrees with the complete orthogonal decomposition.
      const Eigen::MatrixXd Jp = hier::right_pseudoinverse(J);
      const Eigen::MatrixXd P = hier::null_space_projector(J);
      const Eigen::MatrixXd ref = J.completeOrthogonalDecomposition().pseudoInverse();
      const double scale = std::max(1.0, ref.cwiseAbs().maxCoeff());
      minnorm = std::max(minnorm, (J * Jp - Eigen::MatrixXd::Identity(J.rows(), J.rows())).cwiseAbs().maxCoeff());
      minnorm = std::max(minnorm, (P * Jp).cwiseAbs().maxCoeff() / scale);
      minnorm = std::max(minnorm, (Jp - ref).cwiseAbs().maxCoeff() / scale);
    }
  }
  const double elapsed = seconds_since(t0);
  Verdict v;
  v.pass = idem < 1e-9 && annih < 1e-9 && minnorm < 1e-9 && elapsed < 10.0;
  v.detail = fmt("idempotence %.2e, annihilation %.2e, minimal norm %.2e, %.1f s", idem, annih, minnorm, elapsed);
  return v;
}

// 2 ---------------------------------------------------------------------------

Verdict derivative_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  std::size_t ratios = 0;
  std::ostringstream per_task;
  for (const auto& task : oracle::reference_tasks()) {
    const auto xs = oracle::random_states(task.agents(), 500, 7);
    const auto r = oracle::check_task_derivatives(task, xs, 1e-5);
    const double err = std::max({r.jacobian.max_rel_error, r.rate.max_rel_error, r.drift.max_rel_error,
                                 r.input_map.max_rel_error});
    worst = std::max(worst, err);
    for (const oracle::FdCheck* c : {&r.rate, &r.drift, &r.input_map}) {
      if (c->ratio_samples == 0) continue;
      lo = std::min(lo, c->min_ratio);
      hi = std::max(hi, c->max_ratio);
      ratios += c->ratio_samples;
    }
    per_task << " " << r.task << "=" << fmt("%.1e", err);
  }
  const double elapsed = seconds_since(t0);
  Verdict v;
  v.pass = worst < 1e-4 && ratios > 0 && lo >= 1.5 && hi <= 2.5 && elapsed < 30.0;
  v.detail = fmt("max relative error %.2e, h/(h/2) ratio in [%.3f, %.3f] over %zu checks, %.1f s;", worst, lo, hi,
                 ratios, elapsed) +
             per_task.str();
  return v;
}

// 3 ---------------------------------------------------------------------------

Verdict lq_riccati() {
  const auto t0 = Clock::now();
  const oracle::LqInstance lq;
  const std::vector<double> states{-2.0, -1.0, -0.5, 1.0, 2.0};
  const std::vector<std::size_t> sizes{1000, 10000, 100000};
  const int seeds = 50;
  const int workers = default_workers();

  double worst_at_full = 0.0;
  std::vector<double> rms(sizes.size(), 0.0);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    for (double x0 : states) {
      const double ref = oracle::riccati_feedback(lq, x0);
      double mean = 0.0, sq = 0.0;
      for (int s = 0; s < seeds; ++s) {
        const double e = oracle::lq_estimate(lq, x0, sizes[i], static_cast<std::uint64_t>(s), workers);
        mean += e / seeds;
        sq += (e - ref) * (e - ref) / seeds;
      }
      rms[i] += std::sqrt(sq) / std::abs(ref) / static_cast<double>(states.size());
      if (sizes[i] == 100000) worst_at_full = std::max(worst_at_full, std::abs(mean - ref) / std::abs(ref));
    }
  }
  const bool monotone = rms[0] > rms[1] && rms[1] > rms[2];
  const double elapsed = seconds_since(t0);
  Verdict v;
  v.pass = worst_at_full < 0.10 && monotone && elapsed < 300.0;
  v.detail = fmt("worst mean relative error at M=1e5 %.3f, rms error %.4f > %.4f > %.4f, %.1f s", worst_at_full,
                 rms[0], rms[1], rms[2], elapsed);
  return v;
}

// 4 ---------------------------------------------------------------------------

Verdict estimator_properties() {
  const oracle::LqInstance lq;
  const dyn::EffectiveDynamics eff(oracle::lq_model());
  const pi::CostSpec base = oracle::lq_cost(lq);
  StateVector x(1);
  x << 1.0;

  double shift = 0.0;
  for (double offset : {1.0, 1000.0, -250.0}) {
    pi::CostSpec shifted = base;
    shifted.terminal = [base, offset](const StateVector& s) { return base.terminal(s) + offset; };
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto a = pi::pi_controller_step(eff, x, 0.0, oracle::lq_params(lq, 2000), base, seed);
      const auto b = pi::pi_controller_step(eff, x, 0.0, oracle::lq_params(lq, 2000), shifted, seed);
      shift = std::max(shift, (a.control - b.control).cwiseAbs().maxCoeff());
    }
  }

  bool identical = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ref = pi::pi_controller_step(eff, x, 0.0, oracle::lq_params(lq, 3000), base, seed, 1);
    for (int workers : {4, 16}) {
      const auto e = pi::pi_controller_step(eff, x, 0.0, oracle::lq_params(lq, 3000), base, seed, workers);
      identical = identical && e.control == ref.control && e.ess == ref.ess && e.normalizer == ref.normalizer;
    }
  }

  auto variance = [&](std::size_t M) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 200; ++s) v.push_back(oracle::lq_estimate(lq, 1.0, M, 5000 + s));
    double mean = 0.0;
    for (double e : v) mean += e / static_cast<double>(v.size());
    double var = 0.0;
    for (double e : v) var += (e - mean) * (e - mean) / static_cast<double>(v.size() - 1);
    return var;
  };
  const double ratio = variance(500) / variance(2000);

  Verdict v;
  v.pass = shift < 1e-12 && identical && ratio >= 2.5 && ratio <= 6.0;
  v.detail = fmt("shift difference %.2e, workers {1,4,16} %s, variance ratio M=500/2000 %.3f", shift,
                 identical ? "bit-identical" : "DIFFER", ratio);
  return v;
}

// 5, 6, 7 -----------------------------------------------------------------------

std::size_t count_if_below(const std::vector<double>& v, double bound) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](double d) { return d < bound; }));
}

std::size_t count_clear(const std::vector<double>& v, double r) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](double d) { return d >= r; }));
}

double mean_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m += e / static_cast<double>(v.size());
  return m;
}

/// The runtime bounds assume 8 workers; on smaller machines they are reported only.
std::string runtime_note(double elapsed, double budget, bool& ok) {
  const int workers = default_workers();
  if (workers >= 8) {
    ok = elapsed < budget;
    return fmt("%.0f s (budget %.0f s)", elapsed, budget);
  }
  ok = true;
  return fmt("%.0f s on %d worker(s), budget %.0f s applies at 8", elapsed, workers, budget);
}

Verdict single_agent(const fs::path& dir) {
  const auto t0 = Clock::now();
  const harness::Scenario scn = harness::load_scenario(dir / "single_agent_desk.scenario");
  const auto pd = harness::run_episode(scn, harness::Mode::pd_only, scn.seeds.base);
  const auto hy = harness::run_batch(scn, harness::Mode::hybrid, scn.seeds.count);
  const auto& st = hy.stats;
  const std::size_t reached = count_if_below(st.final_goal_distance, scn.success_radius);
  const std::size_t clear = count_clear(st.min_obstacle_distance, scn.obstacle.radius);
  bool time_ok = true;
  const std::string runtime = runtime_note(seconds_since(t0), 900.0, time_ok);

  const bool pd_ok = pd.summary.final_goal_distance > 1.0 && pd.summary.oscillating;
  Verdict v;
  v.pass = pd_ok && st.completed == scn.seeds.count && reached >= 95 && clear == scn.seeds.count && time_ok;
  v.detail = fmt("pd_only final %.3f, %d sign changes (%s); hybrid %zu/%zu reached < %.2f (mean final %.3f), "
                 "%zu/%zu clear of obstacle; ",
                 pd.summary.final_goal_distance, pd.summary.oscillation_sign_changes,
                 pd.summary.oscillating ? "oscillating" : "not oscillating", reached, scn.seeds.count,
                 scn.success_radius, mean_of(st.final_goal_distance), clear, scn.seeds.count) +
             runtime;
  return v;
}

Verdict two_agent(const fs::path& dir) {
  const auto t0 = Clock::now();
  const harness::Scenario scn = harness::load_scenario(dir / "two_agent_desk.scenario");
  // pd_only is deterministic, so every seed gives the same run.
  const auto pd = harness::run_episode(scn, harness::Mode::pd_only, scn.seeds.base);
  const auto hy = harness::run_batch(scn, harness::Mode::hybrid, scn.seeds.count);
  const auto& st = hy.stats;
  const std::size_t reached = count_if_below(st.final_goal_distance, scn.success_radius);
  const std::size_t clear = count_clear(st.min_obstacle_distance, scn.obstacle.radius);
  const double hybrid_spacing = mean_of(st.mean_spacing_error);
  const double pd_spacing = pd.summary.mean_spacing_error;
  bool time_ok = true;
  const std::string runtime = runtime_note(seconds_since(t0), 1500.0, time_ok);

  Verdict v;
  v.pass = pd.summary.final_goal_distance > 1.0 && st.completed == scn.seeds.count && reached >= 90 &&
           clear == scn.seeds.count && hybrid_spacing < pd_spacing && time_ok;
  v.detail = fmt("pd_only centroid final %.3f; hybrid %zu/%zu reached < %.2f (mean final %.3f), %zu/%zu clear; "
                 "spacing error hybrid %.4f vs pd_only %.4f; ",
                 pd.summary.final_goal_distance, reached, scn.seeds.count, scn.success_radius,
                 mean_of(st.final_goal_distance), clear, scn.seeds.count, hybrid_spacing, pd_spacing) +
             runtime;
  return v;
}

Verdict full_scale(const fs::path& dir) {
  Verdict v;
  const char* flag = std::getenv("HIERPI_RUN_SLOW");
  if (flag == nullptr || std::string(flag).empty() || std::string(flag) == "0") {
    v.skipped = true;
    v.detail = "set HIERPI_RUN_SLOW=1 to run";
    return v;
  }
  const auto t0 = Clock::now();
  const harness::Scenario scn = harness::load_scenario(dir / "single_agent.scenario");
  const auto log = harness::run_episode(scn, harness::Mode::hybrid, scn.seeds.base);
  const auto& s = log.summary;
  v.pass = s.final_goal_distance < scn.success_radius && s.min_obstacle_distance >= scn.obstacle.radius;
  v.detail = fmt("M=%zu dt=%g seed %llu: final %.3f, min obstacle distance %.3f, %zu degenerate steps, %.0f s",
                 scn.pi.samples, scn.dt, static_cast<unsigned long long>(scn.seeds.base), s.final_goal_distance,
                 s.min_obstacle_distance, s.degenerate_steps, seconds_since(t0));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string scenarios = "scenarios";
  std::string report_path;
  std::vector<int> only;
  app.add_option("--scenarios", scenarios, "Directory holding the shipped scenario files");
  app.add_option("--report", report_path, "Write the verdicts to this file as well");
  app.add_option("--only", only, "Evaluate only these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(scenarios);
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"projector algebra", projector_algebra},
      {"derivative oracle", derivative_oracle},
      {"LQ Riccati oracle", lq_riccati},
      {"estimator properties", estimator_properties},
      {"single-agent reproduction", [&] { return single_agent(dir); }},
      {"two-agent reproduction", [&] { return two_agent(dir); }},
      {"full-scale spot run", [&] { return full_scale(dir); }},
  };

  std::ostringstream report;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      std::fprintf(stderr, "criterion %d aborted: %s\n", id, e.what());
      return 1;
    }
    const char* tag = v.skipped ? "SKIPPED" : (v.pass ? "PASS" : "FAIL");
    if (!v.skipped && !v.pass) ++failures;
    const std::string line = fmt("[%s] %d %s: ", tag, id, criteria[i].first) + v.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << "\n";
  }
  report << failures << " criteria failed\n";
  std::printf("%d criteria failed\n", failures);

  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) {
      std::fprintf(stderr, "cannot write %s\n", report_path.c_str());
      return 1;
    }
    out << report.str();
  }
  return 0;
}
