// hierpi: run scenarios, batches and reference checks from the command line.
//
// Exit codes: 0 success, 1 I/O or usage error, 2 invalid input, 3 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hierpi/hierpi.hpp"

namespace fs = std::filesystem;
using namespace hierpi;

namespace {

struct Overrides {
  std::optional<std::size_t> samples;
  std::optional<double> horizon_cap;
  std::optional<double> dt;
};

harness::Scenario load(const std::string& path, const Overrides& o) {
  harness::Scenario scn = harness::load_scenario(path);
  if (o.samples) scn.pi.samples = *o.samples;
  if (o.horizon_cap) scn.pi.horizon_cap = *o.horizon_cap;
  if (o.dt) scn.dt = *o.dt;
  scn.validate();
  return scn;
}

void print_summary(const harness::TrajectoryLog& log) {
  const auto& s = log.summary;
  std::printf("mode=%s seed=%llu steps=%zu final_goal_distance=%.6g min_obstacle_distance=%.6g "
              "oscillation_sign_changes=%d oscillating=%s mean_spacing_error=%.6g sampler_calls=%llu degenerate_steps=%zu\n",
              harness::to_string(log.mode).c_str(), static_cast<unsigned long long>(log.seed), log.steps.size(),
              s.final_goal_distance, s.min_obstacle_distance, s.oscillation_sign_changes,
              s.oscillating ? "yes" : "no", s.mean_spacing_error, static_cast<unsigned long long>(s.sampler_calls), s.degenerate_steps);
}

int cmd_validate(const std::string& path) {
  const harness::Scenario scn = harness::load_scenario(path);
  const auto doc = harness::to_json(scn);
  std::cout << doc.dump(2) << "\n";
  std::cout << "valid: " << scn.steps() << " steps, " << scn.tasks.size() << " tasks\n";
  return 0;
}

int cmd_run(const std::string& path, const Overrides& o, const std::string& mode, std::uint64_t seed,
            const std::string& out) {
  const harness::Scenario scn = load(path, o);
  const auto t0 = std::chrono::steady_clock::now();
  const harness::TrajectoryLog log = harness::run_episode(scn, harness::parse_mode(mode), seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  print_summary(log);
  std::printf("elapsed_s=%.3f\n", secs);
  if (!out.empty()) {
    fs::create_directories(out);
    io::export_log(log, fs::path(out) / "trajectory.csv");
    io::export_log(log, fs::path(out) / "trajectory.json");
  }
  return 0;
}

int cmd_batch(const std::string& path, const Overrides& o, const std::string& mode, std::optional<std::size_t> runs,
              const std::string& out, bool per_run) {
  const harness::Scenario scn = load(path, o);
  const std::size_t n = runs.value_or(scn.seeds.count);
  const auto t0 = std::chrono::steady_clock::now();
  const harness::BatchResult result = harness::run_batch(scn, harness::parse_mode(mode), n);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& st = result.stats;
  std::size_t safe = 0;
  double spacing = 0.0;
  for (std::size_t i = 0; i < st.completed; ++i) {
    if (st.min_obstacle_distance[i] >= scn.obstacle.radius) ++safe;
    spacing += st.mean_spacing_error[i];
  }
  std::printf("runs=%zu completed=%zu successes=%zu no_penetration=%zu final_mean_goal_distance=%.6g "
              "mean_spacing_error=%.6g elapsed_s=%.3f\n",
              st.runs, st.completed, st.successes, safe, st.mean_goal_distance.empty() ? 0.0 : st.mean_goal_distance.back(),
              st.completed ? spacing / static_cast<double>(st.completed) : 0.0, secs);
  for (const auto& e : result.errors) std::fprintf(stderr, "%s\n", e.c_str());
  if (per_run) {
    for (std::size_t i = 0; i < st.completed; ++i) {
      std::printf("run %zu final_goal_distance=%.6g min_obstacle_distance=%.6g\n", i, st.final_goal_distance[i],
                  st.min_obstacle_distance[i]);
    }
  }
  if (!out.empty()) {
    fs::create_directories(out);
    io::export_stats(st, fs::path(out) / "stats.csv");
    io::export_stats(st, fs::path(out) / "stats.json");
  }
  return 0;
}

int cmd_oracle_lq(std::size_t samples, std::size_t seeds) {
  const oracle::LqInstance lq;
  std::printf("x0,riccati,estimate_mean,relative_error\n");
  for (double x0 : {-2.0, -1.0, -0.5, 1.0, 2.0}) {
    double mean = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) mean += oracle::lq_estimate(lq, x0, samples, s, default_workers());
    mean /= static_cast<double>(seeds);
    const double ref = oracle::riccati_feedback(lq, x0);
    std::printf("%g,%.6g,%.6g,%.4g\n", x0, ref, mean, std::abs(mean - ref) / std::abs(ref));
  }
  return 0;
}

int cmd_oracle_fd(std::size_t states, double h) {
  std::printf("task,states,J_rel,rate_rel,drift_rel,map_rel,ratio_min,ratio_max\n");
  for (const auto& task : oracle::reference_tasks()) {
    const auto xs = oracle::random_states(task.agents(), states, 7);
    const auto r = oracle::check_task_derivatives(task, xs, h);
    const double lo = std::min({r.rate.min_ratio, r.drift.min_ratio, r.input_map.min_ratio});
    const double hi = std::max({r.rate.max_ratio, r.drift.max_ratio, r.input_map.max_ratio});
    std::printf("%s,%zu,%.3g,%.3g,%.3g,%.3g,%.4g,%.4g\n", r.task.c_str(), r.states, r.jacobian.max_rel_error,
                r.rate.max_rel_error, r.drift.max_rel_error, r.input_map.max_rel_error, lo, hi);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical task control with a path-integral level"};
  app.require_subcommand(1);

  std::string scenario;
  std::string mode = "hybrid";
  std::uint64_t seed = 0;
  std::string out;
  Overrides o;
  std::optional<std::size_t> runs;
  bool per_run = false;

  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--samples", o.samples, "Override the sample count M");
    cmd->add_option("--horizon-cap", o.horizon_cap, "Override the rollout horizon cap (s)");
    cmd->add_option("--dt", o.dt, "Override the time step (s)");
  };

  auto* run = app.add_subcommand("run", "Run one episode");
  run->add_option("--scenario", scenario, "Scenario file")->required();
  run->add_option("--mode", mode, "pd or hybrid")->check(CLI::IsMember({"pd", "hybrid"}));
  run->add_option("--seed", seed, "Episode seed");
  run->add_option("--out", out, "Output directory");
  add_overrides(run);

  auto* batch = app.add_subcommand("batch", "Run seeded episodes and aggregate them");
  batch->add_option("--scenario", scenario, "Scenario file")->required();
  batch->add_option("--mode", mode, "pd or hybrid")->check(CLI::IsMember({"pd", "hybrid"}));
  batch->add_option("--runs", runs, "Run count (default: seeds.count)");
  batch->add_option("--out", out, "Output directory");
  batch->add_flag("--per-run", per_run, "Print one line per run");
  add_overrides(batch);

  auto* validate = app.add_subcommand("validate", "Check a scenario file and print it resolved");
  validate->add_option("--scenario", scenario, "Scenario file")->required();

  auto* oracle_cmd = app.add_subcommand("oracle", "Reference checks");
  oracle_cmd->require_subcommand(1);
  std::size_t lq_samples = 100000;
  std::size_t lq_seeds = 50;
  auto* lq = oracle_cmd->add_subcommand("lq", "Path-integral estimate against the Riccati feedback");
  lq->add_option("--samples", lq_samples, "Samples per estimate");
  lq->add_option("--seeds", lq_seeds, "Estimates averaged per state");
  std::size_t fd_states = 500;
  double fd_h = 1e-5;
  auto* fd = oracle_cmd->add_subcommand("fd", "Task derivatives against finite differences");
  fd->add_option("--states", fd_states, "Random states per task");
  fd->add_option("--step", fd_h, "Step size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(scenario, o, mode, seed, out);
    if (*batch) return cmd_batch(scenario, o, mode, runs, out, per_run);
    if (*validate) return cmd_validate(scenario);
    if (*lq) return cmd_oracle_lq(lq_samples, lq_seeds);
    if (*fd) return cmd_oracle_fd(fd_states, fd_h);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid %s: %s\n", e.field().c_str(), e.what());
    return 2;
  } catch (const NumericalFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
