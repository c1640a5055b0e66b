#pragma once

// Scenario files: JSON documents describing the plant, obstacle, goal, task
// hierarchy and path-integral settings of one experiment.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hierpi/dynamics.hpp"
#include "hierpi/errors.hpp"
#include "hierpi/path_integral.hpp"
#include "hierpi/tasks.hpp"
#include "hierpi/types.hpp"

namespace hierpi::harness {

enum class ModelKind { single_unicycle, two_unicycle };
enum class Mode { pd_only, hybrid };

/// Where a scenario value came from: a value reported with the original
/// experiments, a shipped default, or an unlabeled value from the file.
enum class Provenance { paper, default_value, user };

inline constexpr double kDefaultInitialSpeed = 0.1;

inline std::string to_string(ModelKind m) { return m == ModelKind::single_unicycle ? "single_unicycle" : "two_unicycle"; }
inline std::string to_string(Mode m) { return m == Mode::pd_only ? "pd" : "hybrid"; }
inline std::string to_string(dyn::Controller c) { return c == dyn::Controller::pd ? "pd" : "path_integral"; }
inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::paper: return "paper";
    case Provenance::default_value: return "default";
    case Provenance::user: return "user";
  }
  return "user";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "pd" || s == "pd_only") return Mode::pd_only;
  if (s == "hybrid") return Mode::hybrid;
  throw ValidationError("mode", "expected 'pd' or 'hybrid', got '" + std::string(s) + "'");
}

struct TaskConfig {
  std::string name;
  dyn::Controller controller = dyn::Controller::pd;
  double kp = tasks::kDefaultKp;
  double kd = tasks::kDefaultKd;
};

struct PiConfig {
  double s_hat = 0.1;
  double alpha = 10.0;
  std::size_t samples = 10000;
  double running_weight = 0.07;
  std::optional<double> horizon_cap;
};

struct SeedConfig {
  std::uint64_t base = 0;
  std::size_t count = 100;
};

struct Scenario {
  ModelKind model = ModelKind::single_unicycle;
  double T = 10.0;
  double dt = 0.01;
  tasks::ObstacleSpec obstacle;
  Eigen::Vector2d goal{3.0, 0.0};
  std::optional<double> spacing;
  StateVector x0;
  std::vector<TaskConfig> tasks;
  PiConfig pi;
  SeedConfig seeds;
  double success_radius = 0.3;
  std::map<std::string, Provenance> provenance;

  int agents() const { return model == ModelKind::single_unicycle ? 1 : 2; }

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }

  dyn::DynamicsModel dynamics() const { return dyn::unicycle_team_model(agents()); }

  /// Task hierarchy as configured; pd_only forces every level onto its PD law.
  dyn::Hierarchy hierarchy(Mode mode) const {
    std::vector<dyn::Level> levels;
    for (const auto& tc : tasks) {
      levels.push_back({make_task(tc), mode == Mode::pd_only ? dyn::Controller::pd : tc.controller});
    }
    dyn::Hierarchy h(std::move(levels));
    if (mode == Mode::hybrid && !h.path_integral_index()) {
      throw ValidationError("tasks", "hybrid mode needs exactly one path_integral task");
    }
    return h;
  }

  pi::PathIntegralParams pi_params() const {
    return pi::PathIntegralParams(pi.s_hat, pi.alpha, pi.samples, dt, T, pi.running_weight, pi.horizon_cap);
  }

  /// Position the goal refers to: the agent itself or the team centroid.
  Eigen::Vector2d centroid(const StateVector& x) const {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (int i = 0; i < agents(); ++i) c += x.segment<2>(kStatePerAgent * i);
    return c / agents();
  }

  double goal_distance(const StateVector& x) const { return (centroid(x) - goal).norm(); }

  double agent_spacing(const StateVector& x) const {
    if (agents() < 2) return 0.0;
    return (x.segment<2>(0) - x.segment<2>(kStatePerAgent)).norm();
  }

  /// L(x) = w |centroid - goal| and phi = L.
  pi::CostSpec cost() const {
    const double w = pi.running_weight;
    auto L = [this, w](const StateVector& x) { return w * goal_distance(x); };
    return {L, L};
  }

  tasks::TaskSpec make_task(const TaskConfig& tc) const {
    const auto gains = [&](int dim) { return tasks::Gains::uniform(dim, tc.kp, tc.kd); };
    if (model == ModelKind::single_unicycle) {
      if (tc.name == "obstacle") return tasks::make_obstacle_task_single(obstacle, gains(1));
      if (tc.name == "goal") return tasks::make_goal_task_single(goal, gains(2));
    } else {
      if (tc.name == "obstacle" || tc.name == "obstacle_pair") return tasks::make_obstacle_task_pair(obstacle, gains(2));
      if (tc.name == "centroid") return tasks::make_centroid_task(goal, gains(2));
      if (tc.name == "distance") return tasks::make_distance_task(spacing.value_or(0.0), gains(1));
    }
    throw ValidationError("tasks.name", "unknown task '" + tc.name + "' for model " + to_string(model));
  }

  void validate() const {
    if (!(T > 0.0)) throw ValidationError("T", "duration must be positive");
    if (!(dt > 0.0)) throw ValidationError("dt", "step must be positive");
    if (std::abs(T / dt - std::round(T / dt)) > 1e-9 * std::max(1.0, T / dt)) {
      throw ValidationError("dt", "step must divide the duration");
    }
    obstacle.validate();
    if (x0.size() != agents() * kStatePerAgent) {
      throw ValidationError("x0", "expected " + std::to_string(agents() * kStatePerAgent) + " entries");
    }
    if (!x0.allFinite()) throw ValidationError("x0", "entries must be finite");
    if (model == ModelKind::two_unicycle && !(spacing && *spacing > 0.0)) {
      throw ValidationError("spacing_l", "two-agent scenarios need a positive spacing");
    }
    if (tasks.empty()) throw ValidationError("tasks", "at least one task is required");
    std::size_t pi_tasks = 0;
    for (const auto& tc : tasks) {
      if (tc.kp < 0.0 || tc.kd < 0.0) throw ValidationError("tasks.kp", "gains must be nonnegative");
      if (tc.controller == dyn::Controller::path_integral) ++pi_tasks;
      (void)make_task(tc);
    }
    if (pi_tasks > 1) throw ValidationError("tasks", "at most one task may use the path_integral controller");
    (void)pi_params();
    if (seeds.count < 1) throw ValidationError("seeds.count", "need at least one run");
    if (!(success_radius > 0.0)) throw ValidationError("success_radius", "must be positive");
  }
};

namespace detail {

using nlohmann::json;

inline Provenance provenance_of(const json& doc, const std::string& key, bool present) {
  if (!present) return Provenance::default_value;
  if (doc.contains("provenance") && doc["provenance"].contains(key)) {
    const auto tag = doc["provenance"][key].get<std::string>();
    if (tag == "paper") return Provenance::paper;
    if (tag == "default") return Provenance::default_value;
    if (tag == "user") return Provenance::user;
    throw ValidationError("provenance." + key, "unknown tag '" + tag + "'");
  }
  return Provenance::user;
}

template <typename T>
T read(const json& obj, const std::string& key, const std::string& field, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(field, e.what());
  }
}

inline dyn::Controller parse_controller(const std::string& s, const std::string& field) {
  if (s == "pd") return dyn::Controller::pd;
  if (s == "path_integral" || s == "pi") return dyn::Controller::path_integral;
  throw ValidationError(field, "expected 'pd' or 'path_integral', got '" + s + "'");
}

}  // namespace detail

/// Parses and validates a scenario document, filling defaults.
inline Scenario parse_scenario(std::string_view text) {
  using detail::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, e.what());
  }
  if (!doc.is_object()) throw ParseError(0, "scenario must be a JSON object");

  Scenario s;
  const auto mark = [&](const std::string& key) { s.provenance[key] = detail::provenance_of(doc, key, doc.contains(key)); };

  const auto model = detail::read<std::string>(doc, "model", "model", "single_unicycle");
  if (model == "single_unicycle") s.model = ModelKind::single_unicycle;
  else if (model == "two_unicycle") s.model = ModelKind::two_unicycle;
  else throw ValidationError("model", "expected 'single_unicycle' or 'two_unicycle'");
  mark("model");

  s.T = detail::read<double>(doc, "T", "T", 10.0);
  mark("T");
  s.dt = detail::read<double>(doc, "dt", "dt", s.model == ModelKind::single_unicycle ? 0.01 : 0.1);
  mark("dt");

  if (doc.contains("obstacle")) {
    const auto& o = doc["obstacle"];
    s.obstacle.center = {detail::read<double>(o, "cx", "obstacle.cx", 0.0), detail::read<double>(o, "cy", "obstacle.cy", 0.0)};
    s.obstacle.radius = detail::read<double>(o, "r", "obstacle.r", 0.5);
    s.obstacle.activation_threshold = detail::read<double>(o, "threshold", "obstacle.threshold", 2.0 * s.obstacle.radius);
  }
  mark("obstacle");

  if (doc.contains("goal")) {
    const auto& g = doc["goal"];
    s.goal = {detail::read<double>(g, "x", "goal.x", 3.0), detail::read<double>(g, "y", "goal.y", 0.0)};
  }
  mark("goal");

  if (doc.contains("spacing_l")) s.spacing = detail::read<double>(doc, "spacing_l", "spacing_l", 0.5);
  else if (s.model == ModelKind::two_unicycle) s.spacing = 0.5;
  mark("spacing_l");

  const int agents = s.agents();
  std::vector<double> x0;
  if (doc.contains("x0")) {
    x0 = detail::read<std::vector<double>>(doc, "x0", "x0", {});
  } else if (agents == 1) {
    x0 = {-4.0, 0.0, kDefaultInitialSpeed, 0.0};
  } else {
    x0 = {-4.5, 0.0, kDefaultInitialSpeed, 0.0, -4.0, 0.0, kDefaultInitialSpeed, 0.0};
  }
  if (x0.empty() || static_cast<int>(x0.size()) > kMaxStateDim) {
    throw ValidationError("x0", "expected " + std::to_string(agents * kStatePerAgent) + " entries");
  }
  s.x0 = Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(x0.size()));
  mark("x0");

  if (doc.contains("tasks")) {
    if (!doc["tasks"].is_array()) throw ValidationError("tasks", "expected an array");
    for (const auto& t : doc["tasks"]) {
      TaskConfig tc;
      tc.name = detail::read<std::string>(t, "name", "tasks.name", "");
      tc.controller = detail::parse_controller(detail::read<std::string>(t, "controller", "tasks.controller", "pd"),
                                               "tasks.controller");
      tc.kp = detail::read<double>(t, "kp", "tasks.kp", tasks::kDefaultKp);
      tc.kd = detail::read<double>(t, "kd", "tasks.kd", tasks::kDefaultKd);
      s.tasks.push_back(tc);
    }
  } else if (agents == 1) {
    s.tasks = {{"obstacle", dyn::Controller::pd}, {"goal", dyn::Controller::path_integral}};
  } else {
    s.tasks = {{"obstacle_pair", dyn::Controller::pd},
               {"centroid", dyn::Controller::path_integral},
               {"distance", dyn::Controller::pd}};
  }
  mark("tasks");
  // Gains are labelled apart from the task list: the hierarchy can come from
  // a reference setup while the gains are chosen locally.
  bool gains_present = false;
  if (doc.contains("tasks")) {
    for (const auto& t : doc["tasks"]) gains_present = gains_present || t.contains("kp") || t.contains("kd");
  }
  s.provenance["tasks.gains"] = detail::provenance_of(doc, "tasks.gains", gains_present);

  if (doc.contains("pi")) {
    const auto& p = doc["pi"];
    s.pi.s_hat = detail::read<double>(p, "s_hat", "pi.s_hat", s.pi.s_hat);
    s.pi.alpha = detail::read<double>(p, "alpha", "pi.alpha", s.pi.alpha);
    s.pi.samples = detail::read<std::size_t>(p, "M", "pi.M", s.pi.samples);
    s.pi.running_weight = detail::read<double>(p, "running_weight", "pi.running_weight",
                                               agents == 1 ? 0.07 : 0.21);
    if (p.contains("horizon_cap") && !p["horizon_cap"].is_null()) {
      s.pi.horizon_cap = detail::read<double>(p, "horizon_cap", "pi.horizon_cap", 0.0);
    }
  } else if (agents == 2) {
    s.pi.running_weight = 0.21;
  }
  mark("pi");

  if (doc.contains("seeds")) {
    s.seeds.base = detail::read<std::uint64_t>(doc["seeds"], "base", "seeds.base", 0);
    s.seeds.count = detail::read<std::size_t>(doc["seeds"], "count", "seeds.count", 100);
  }
  mark("seeds");

  s.success_radius = detail::read<double>(doc, "success_radius", "success_radius", agents == 1 ? 0.3 : 0.4);
  mark("success_radius");

  s.validate();
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str());
}

/// JSON document that parses back to the same scenario.
inline nlohmann::json to_json(const Scenario& s) {
  nlohmann::json doc;
  doc["model"] = to_string(s.model);
  doc["T"] = s.T;
  doc["dt"] = s.dt;
  doc["obstacle"] = {{"cx", s.obstacle.center.x()},
                     {"cy", s.obstacle.center.y()},
                     {"r", s.obstacle.radius},
                     {"threshold", s.obstacle.activation_threshold}};
  doc["goal"] = {{"x", s.goal.x()}, {"y", s.goal.y()}};
  if (s.spacing) doc["spacing_l"] = *s.spacing;
  doc["x0"] = std::vector<double>(s.x0.data(), s.x0.data() + s.x0.size());
  doc["tasks"] = nlohmann::json::array();
  for (const auto& t : s.tasks) {
    doc["tasks"].push_back({{"name", t.name}, {"controller", to_string(t.controller)}, {"kp", t.kp}, {"kd", t.kd}});
  }
  doc["pi"] = {{"s_hat", s.pi.s_hat}, {"alpha", s.pi.alpha}, {"M", s.pi.samples}, {"running_weight", s.pi.running_weight}};
  doc["pi"]["horizon_cap"] = s.pi.horizon_cap ? nlohmann::json(*s.pi.horizon_cap) : nlohmann::json(nullptr);
  doc["seeds"] = {{"base", s.seeds.base}, {"count", s.seeds.count}};
  doc["success_radius"] = s.success_radius;
  for (const auto& [key, p] : s.provenance) doc["provenance"][key] = to_string(p);
  return doc;
}

}  // namespace hierpi::harness
