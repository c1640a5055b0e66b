#pragma once

// CSV and JSON export of trajectory logs and batch statistics. Numbers are
// written in shortest round-trip form, so reading a file back reproduces
// every double bit for bit.

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "hierpi/episode.hpp"
#include "hierpi/errors.hpp"
#include "hierpi/scenario.hpp"

namespace hierpi::io {

enum class Format { csv, json };

inline Format format_for(const std::filesystem::path& path) {
  return path.extension() == ".json" ? Format::json : Format::csv;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(0, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

/// A CSV file as a header plus rows of numbers.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  bool operator==(const Table& other) const {
    if (columns != other.columns || rows.size() != other.rows.size()) return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != other.rows[i].size()) return false;
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        const double a = rows[i][j];
        const double b = other.rows[i][j];
        if (!(a == b || (std::isnan(a) && std::isnan(b)))) return false;
        if (a == b && std::signbit(a) != std::signbit(b)) return false;
      }
    }
    return true;
  }
};

inline std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t j = 0; j < table.columns.size(); ++j) {
    if (j) out += ',';
    out += table.columns[j];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += format_double(row[j]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline Table parse_csv(std::string_view text) {
  Table table;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 0) {
      for (auto c : split(line)) table.columns.emplace_back(c);
    } else if (!line.empty()) {
      std::vector<double> row;
      for (auto c : split(line)) {
        try {
          row.push_back(parse_double(c));
        } catch (const ParseError& e) {
          throw ParseError(pos, "line " + std::to_string(line_no + 1) + ": " + e.what());
        }
      }
      if (row.size() != table.columns.size()) {
        throw ParseError(pos, "line " + std::to_string(line_no + 1) + " has " + std::to_string(row.size()) +
                                  " fields, expected " + std::to_string(table.columns.size()));
      }
      table.rows.push_back(std::move(row));
    }
    ++line_no;
    pos = end + 1;
  }
  return table;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Trajectory logs ---------------------------------------------------------------

/// One row per step and agent:
///   t, agent, px, py, s, theta, a, omega,
///   task<k>_active, sigma<k>, err<k> for every task k (norms of the task vectors),
///   ess, minS, unorm  (NaN when the sampler was not called at that step),
///   theta_wrapped  (heading mod 2 pi; theta itself is stored unwrapped).
inline Table log_table(const harness::TrajectoryLog& log) {
  Table table;
  table.columns = {"t", "agent", "px", "py", "s", "theta", "a", "omega"};
  for (std::size_t k = 1; k <= log.task_names.size(); ++k) {
    const auto i = std::to_string(k);
    table.columns.insert(table.columns.end(), {"task" + i + "_active", "sigma" + i, "err" + i});
  }
  table.columns.insert(table.columns.end(), {"ess", "minS", "unorm", "theta_wrapped"});
  for (const auto& st : log.steps) {
    for (int a = 0; a < log.agents; ++a) {
      const int xs = kStatePerAgent * a;
      const int us = kControlPerAgent * a;
      std::vector<double> row = {st.t, static_cast<double>(a), st.x(xs), st.x(xs + 1), st.x(xs + 2), st.x(xs + 3),
                                 st.u(us), st.u(us + 1)};
      for (const auto& tr : st.tasks) {
        row.push_back(tr.active ? 1.0 : 0.0);
        row.push_back(tr.sigma.norm());
        row.push_back(tr.error.norm());
      }
      row.push_back(st.pi.ess);
      row.push_back(st.pi.min_cost);
      row.push_back(st.pi.control_norm);
      row.push_back(dyn::wrap_heading(st.x(xs + 3)));
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

namespace detail {

using nlohmann::json;

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double number(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

template <typename V>
json vec(const V& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v(i)));
  return out;
}

template <typename V>
V vec(const json& j) {
  V v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i]);
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const harness::TrajectoryLog& log) {
  using detail::json;
  using detail::number;
  using detail::vec;
  json doc;
  doc["mode"] = harness::to_string(log.mode);
  doc["seed"] = log.seed;
  doc["agents"] = log.agents;
  doc["tasks"] = log.task_names;
  doc["steps"] = json::array();
  for (const auto& st : log.steps) {
    json s;
    s["t"] = st.t;
    s["x"] = vec(st.x);
    s["u"] = vec(st.u);
    s["theta_wrapped"] = json::array();
    for (int a = 0; a < log.agents; ++a) s["theta_wrapped"].push_back(dyn::wrap_heading(st.x(kStatePerAgent * a + 3)));
    s["tasks"] = json::array();
    for (const auto& tr : st.tasks) {
      s["tasks"].push_back({{"active", tr.active},
                            {"sigma", vec(tr.sigma)},
                            {"error", vec(tr.error)},
                            {"contribution", vec(tr.contribution)},
                            {"tracking_residual", number(tr.tracking_residual)}});
    }
    s["pi"] = {{"invoked", st.pi.invoked},
               {"inert", st.pi.inert},
               {"degenerate", st.pi.degenerate},
               {"ess", number(st.pi.ess)},
               {"weight_entropy", number(st.pi.weight_entropy)},
               {"minS", number(st.pi.min_cost)},
               {"meanS", number(st.pi.mean_cost)},
               {"unorm", number(st.pi.control_norm)}};
    doc["steps"].push_back(std::move(s));
  }
  const auto& sm = log.summary;
  doc["summary"] = {{"final_goal_distance", sm.final_goal_distance},
                    {"min_obstacle_distance", sm.min_obstacle_distance},
                    {"min_clearance", sm.min_clearance},
                    {"oscillation_sign_changes", sm.oscillation_sign_changes},
                    {"oscillating", sm.oscillating},
                    {"mean_spacing_error", sm.mean_spacing_error},
                    {"sampler_calls", sm.sampler_calls},
                    {"degenerate_steps", sm.degenerate_steps}};
  return doc;
}

inline harness::TrajectoryLog log_from_json(const nlohmann::json& doc) {
  using detail::number;
  harness::TrajectoryLog log;
  try {
    log.mode = harness::parse_mode(doc.at("mode").get<std::string>());
    log.seed = doc.at("seed").get<std::uint64_t>();
    log.agents = doc.at("agents").get<int>();
    log.task_names = doc.at("tasks").get<std::vector<std::string>>();
    for (const auto& s : doc.at("steps")) {
      harness::StepRecord st;
      st.t = s.at("t").get<double>();
      st.x = detail::vec<StateVector>(s.at("x"));
      st.u = detail::vec<ControlVector>(s.at("u"));
      for (const auto& tr : s.at("tasks")) {
        harness::TaskRecord r;
        r.active = tr.at("active").get<bool>();
        r.sigma = detail::vec<TaskVector>(tr.at("sigma"));
        r.error = detail::vec<TaskVector>(tr.at("error"));
        r.contribution = detail::vec<ControlVector>(tr.at("contribution"));
        r.tracking_residual = number(tr.at("tracking_residual"));
        st.tasks.push_back(std::move(r));
      }
      const auto& p = s.at("pi");
      st.pi = {p.at("invoked").get<bool>(), p.at("inert").get<bool>(), p.at("degenerate").get<bool>(), number(p.at("ess")),
               number(p.at("weight_entropy")), number(p.at("minS")), number(p.at("meanS")), number(p.at("unorm"))};
      log.steps.push_back(std::move(st));
    }
    const auto& sm = doc.at("summary");
    log.summary.final_goal_distance = sm.at("final_goal_distance").get<double>();
    log.summary.min_obstacle_distance = sm.at("min_obstacle_distance").get<double>();
    log.summary.min_clearance = sm.at("min_clearance").get<double>();
    log.summary.oscillation_sign_changes = sm.at("oscillation_sign_changes").get<int>();
    log.summary.oscillating = sm.at("oscillating").get<bool>();
    log.summary.mean_spacing_error = sm.at("mean_spacing_error").get<double>();
    log.summary.sampler_calls = sm.at("sampler_calls").get<std::uint64_t>();
    log.summary.degenerate_steps = sm.at("degenerate_steps").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed trajectory log: ") + e.what());
  }
  return log;
}

// Batch statistics --------------------------------------------------------------

/// t, mean_goal_distance, std_goal_distance, mean_spacing, std_spacing.
inline Table stats_table(const harness::BatchStats& stats) {
  Table table;
  table.columns = {"t", "mean_goal_distance", "std_goal_distance", "mean_spacing", "std_spacing"};
  for (std::size_t k = 0; k < stats.t.size(); ++k) {
    table.rows.push_back({stats.t[k], stats.mean_goal_distance[k], stats.std_goal_distance[k], stats.mean_spacing[k],
                          stats.std_spacing[k]});
  }
  return table;
}

inline nlohmann::json to_json(const harness::BatchStats& stats) {
  return {{"runs", stats.runs},
          {"completed", stats.completed},
          {"successes", stats.successes},
          {"t", stats.t},
          {"mean_goal_distance", stats.mean_goal_distance},
          {"std_goal_distance", stats.std_goal_distance},
          {"mean_spacing", stats.mean_spacing},
          {"std_spacing", stats.std_spacing},
          {"final_goal_distance", stats.final_goal_distance},
          {"min_obstacle_distance", stats.min_obstacle_distance},
          {"mean_spacing_error", stats.mean_spacing_error}};
}

inline harness::BatchStats stats_from_json(const nlohmann::json& doc) {
  harness::BatchStats s;
  try {
    s.runs = doc.at("runs").get<std::size_t>();
    s.completed = doc.at("completed").get<std::size_t>();
    s.successes = doc.at("successes").get<std::size_t>();
    s.t = doc.at("t").get<std::vector<double>>();
    s.mean_goal_distance = doc.at("mean_goal_distance").get<std::vector<double>>();
    s.std_goal_distance = doc.at("std_goal_distance").get<std::vector<double>>();
    s.mean_spacing = doc.at("mean_spacing").get<std::vector<double>>();
    s.std_spacing = doc.at("std_spacing").get<std::vector<double>>();
    s.final_goal_distance = doc.at("final_goal_distance").get<std::vector<double>>();
    s.min_obstacle_distance = doc.at("min_obstacle_distance").get<std::vector<double>>();
    s.mean_spacing_error = doc.at("mean_spacing_error").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed batch statistics: ") + e.what());
  }
  return s;
}

// Files -------------------------------------------------------------------------

inline void export_log(const harness::TrajectoryLog& log, const std::filesystem::path& path) {
  if (format_for(path) == Format::json) write_text(path, to_json(log).dump(1) + "\n");
  else write_text(path, to_csv(log_table(log)));
}

inline void export_stats(const harness::BatchStats& stats, const std::filesystem::path& path) {
  if (format_for(path) == Format::json) write_text(path, to_json(stats).dump(1) + "\n");
  else write_text(path, to_csv(stats_table(stats)));
}

inline Table import_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

inline harness::TrajectoryLog import_log_json(const std::filesystem::path& path) {
  try {
    return log_from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, e.what());
  }
}

inline harness::BatchStats import_stats_json(const std::filesystem::path& path) {
  try {
    return stats_from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, e.what());
  }
}

}  // namespace hierpi::io
