#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace hierpi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Base for failures of the numerical pipeline (CLI exit code 3).
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Smallest singular value is at or below the rank threshold.
class RankDeficient : public NumericalFailure {
 public:
  RankDeficient(double sigma_min, double threshold)
      : NumericalFailure("rank deficient: smallest singular value " + std::to_string(sigma_min) +
                         " <= threshold " + std::to_string(threshold)),
        sigma_min_(sigma_min),
        threshold_(threshold) {}

  double sigma_min() const noexcept { return sigma_min_; }
  double threshold() const noexcept { return threshold_; }

 private:
  double sigma_min_;
  double threshold_;
};

class NonFinite : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// A single rollout dominates the importance weights.
class DegenerateWeights : public NumericalFailure {
 public:
  explicit DegenerateWeights(double ess)
      : NumericalFailure("degenerate importance weights: effective sample size " + std::to_string(ess)),
        ess_(ess) {}

  double ess() const noexcept { return ess_; }

 private:
  double ess_;
};

/// Numerical failure inside an episode, tagged with the control step.
class EpisodeFailure : public NumericalFailure {
 public:
  EpisodeFailure(std::size_t step, const std::string& what)
      : NumericalFailure("step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A PD law was requested for a task whose activation predicate is false.
class TaskInactive : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t position, const std::string& message)
      : Error("parse error at byte " + std::to_string(position) + ": " + message), position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error("invalid '" + field + "': " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hierpi
