#pragma once

// Linear-algebra layer of the task hierarchy: right pseudo-inverses,
// null-space projectors and the two ways of composing prioritized controls.
// Everything here is a pure function of its arguments.

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "hierpi/errors.hpp"

namespace hierpi::hier {

/// Singular values at or below max(relative * sigma_max, absolute) count as zero.
struct RankTolerance {
  double relative = 1e-8;
  double absolute = 1e-12;

  double threshold(double sigma_max) const noexcept { return std::max(relative * sigma_max, absolute); }
};

namespace detail {

template <typename Derived>
using TransposedPlain =
    Eigen::Matrix<typename Derived::Scalar, Derived::ColsAtCompileTime, Derived::RowsAtCompileTime,
                  (Derived::ColsAtCompileTime == 1 && Derived::RowsAtCompileTime != 1) ? Eigen::RowMajor
                                                                                        : Eigen::ColMajor,
                  Derived::MaxColsAtCompileTime, Derived::MaxRowsAtCompileTime>;

template <typename Derived>
using ColumnSquarePlain = Eigen::Matrix<typename Derived::Scalar, Derived::ColsAtCompileTime,
                                        Derived::ColsAtCompileTime, Eigen::ColMajor,
                                        Derived::MaxColsAtCompileTime, Derived::MaxColsAtCompileTime>;

template <typename Plain>
constexpr int svd_options() {
  // Thin factors need a dynamic column count; fixed shapes fall back to full ones.
  return Plain::ColsAtCompileTime == Eigen::Dynamic ? (Eigen::ComputeThinU | Eigen::ComputeThinV)
                                                    : (Eigen::ComputeFullU | Eigen::ComputeFullV);
}

}  // namespace detail

/// Minimum-norm right inverse J^T (J J^T)^-1 of a full-row-rank J, via SVD.
///
/// Throws RankDeficient when the smallest singular value is not above the
/// tolerance threshold, and DimensionMismatch when J has more rows than columns.
template <typename Derived>
detail::TransposedPlain<Derived> right_pseudoinverse(const Eigen::MatrixBase<Derived>& J, RankTolerance tol = {}) {
  const Eigen::Index m = J.rows();
  const Eigen::Index n = J.cols();
  if (m > n) {
    throw DimensionMismatch("right pseudo-inverse needs rows <= cols, got " + std::to_string(m) + "x" +
                            std::to_string(n));
  }
  detail::TransposedPlain<Derived> out(n, m);
  if (m == 0) return out;

  if (m == 1) {
    // A single row has exactly one singular value: its norm.
    const double norm = J.norm();
    const double threshold = tol.threshold(norm);
    if (!(norm > threshold)) throw RankDeficient(norm, threshold);
    out = J.transpose() / (norm * norm);
    return out;
  }

  if (m == 2) {
    // Closed form J^T (J J^T)^-1 when the 2x2 Gram matrix is well conditioned;
    // near-singular cases go through the SVD below.
    const double a = J.row(0).squaredNorm();
    const double b = J.row(0).dot(J.row(1));
    const double c = J.row(1).squaredNorm();
    const double mid = 0.5 * (a + c);
    const double rad = std::hypot(0.5 * (a - c), b);
    const double lmax = mid + rad;
    const double det = a * c - b * b;
    if (lmax > 0.0 && det > 1e-6 * lmax * lmax) {
      const double inv = 1.0 / det;
      out.col(0) = (c * inv) * J.row(0).transpose() - (b * inv) * J.row(1).transpose();
      out.col(1) = (a * inv) * J.row(1).transpose() - (b * inv) * J.row(0).transpose();
      return out;
    }
  }

  using Plain = typename Derived::PlainObject;
  const Eigen::JacobiSVD<Plain> svd(J, detail::svd_options<Plain>());
  const auto& sv = svd.singularValues();
  const double threshold = tol.threshold(sv(0));
  if (!(sv(m - 1) > threshold)) throw RankDeficient(sv(m - 1), threshold);
  out = svd.matrixV().leftCols(m) * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  return out;
}

/// Moore-Penrose inverse of an arbitrary matrix with small singular values truncated.
template <typename Derived>
detail::TransposedPlain<Derived> truncated_pseudoinverse(const Eigen::MatrixBase<Derived>& A,
                                                         RankTolerance tol = {}) {
  detail::TransposedPlain<Derived> out(A.cols(), A.rows());
  out.setZero();
  const Eigen::Index k = std::min(A.rows(), A.cols());
  if (k == 0) return out;

  using Plain = typename Derived::PlainObject;
  const Eigen::JacobiSVD<Plain> svd(A, detail::svd_options<Plain>());
  const auto& sv = svd.singularValues();
  const double threshold = tol.threshold(sv(0));
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(sv(i) > threshold)) break;
    out.noalias() += (svd.matrixV().col(i) / sv(i)) * svd.matrixU().col(i).transpose();
  }
  return out;
}

template <typename Derived>
Eigen::Index numerical_rank(const Eigen::MatrixBase<Derived>& A, RankTolerance tol = {}) {
  const Eigen::Index k = std::min(A.rows(), A.cols());
  if (k == 0) return 0;
  const Eigen::JacobiSVD<typename Derived::PlainObject> svd(A);
  const auto& sv = svd.singularValues();
  const double threshold = tol.threshold(sv(0));
  Eigen::Index rank = 0;
  while (rank < k && sv(rank) > threshold) ++rank;
  return rank;
}

/// I - J^+ J for a full-row-rank J.
template <typename Derived>
detail::ColumnSquarePlain<Derived> null_space_projector(const Eigen::MatrixBase<Derived>& J,
                                                        RankTolerance tol = {}) {
  const Eigen::Index n = J.cols();
  detail::ColumnSquarePlain<Derived> P = detail::ColumnSquarePlain<Derived>::Identity(n, n);
  if (J.rows() == 0) return P;
  P.noalias() -= right_pseudoinverse(J, tol) * J;
  return P;
}

/// Prioritized task Jacobians J_1 (highest) ... J_K, all with n columns.
class TaskJacobianSet {
 public:
  explicit TaskJacobianSet(std::vector<Eigen::MatrixXd> jacobians, RankTolerance tol = {})
      : jacobians_(std::move(jacobians)) {
    if (jacobians_.empty()) throw DimensionMismatch("task set needs at least one Jacobian");
    n_ = jacobians_.front().cols();
    for (const auto& J : jacobians_) {
      if (J.cols() != n_) throw DimensionMismatch("all Jacobians must share the configuration dimension");
      if (J.rows() > n_) throw DimensionMismatch("task dimension exceeds configuration dimension");
      (void)right_pseudoinverse(J, tol);  // full row rank or RankDeficient
    }
  }

  Eigen::Index configuration_dim() const noexcept { return n_; }
  std::size_t size() const noexcept { return jacobians_.size(); }
  const Eigen::MatrixXd& operator[](std::size_t k) const { return jacobians_[k]; }
  auto begin() const noexcept { return jacobians_.begin(); }
  auto end() const noexcept { return jacobians_.end(); }

 private:
  std::vector<Eigen::MatrixXd> jacobians_;
  Eigen::Index n_ = 0;
};

/// projectors[k] is N_{k+1}; there are K+1 of them, the last one being the
/// null space left after every task. residual_dims[k] = rank(N_{k+2}).
struct ProjectorChain {
  std::vector<Eigen::MatrixXd> projectors;
  std::vector<Eigen::Index> residual_dims;
};

/// Recursive null-space projectors, N_1 = I and
///   N_{k+1} = N_k (I - (J_k N_k)^+ (J_k N_k)).
/// Restricting J_k to the space N_k leaves makes every N_k an orthogonal
/// projector that annihilates all higher-priority Jacobians.
inline ProjectorChain projector_chain(const TaskJacobianSet& tasks, RankTolerance tol = {}) {
  const Eigen::Index n = tasks.configuration_dim();
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);

  ProjectorChain chain;
  chain.projectors.reserve(tasks.size() + 1);
  chain.residual_dims.reserve(tasks.size());
  chain.projectors.push_back(identity);
  for (const auto& J : tasks) {
    const Eigen::MatrixXd& N = chain.projectors.back();
    const Eigen::MatrixXd restricted = J * N;
    Eigen::MatrixXd next = N * (identity - truncated_pseudoinverse(restricted, tol) * restricted);
    chain.residual_dims.push_back(numerical_rank(next, tol));
    chain.projectors.push_back(std::move(next));
  }
  return chain;
}

struct CapacityLevel {
  std::size_t level = 0;  // 1-based priority
  Eigen::Index consumed_dofs = 0;
  Eigen::Index remaining_dofs = 0;
};

struct CapacityReport {
  std::vector<CapacityLevel> levels;
  /// First level after which the remaining null space is empty; any lower
  /// priority task contributes nothing.
  std::optional<std::size_t> exhausted_at;
};

inline CapacityReport capacity_report(const TaskJacobianSet& tasks, RankTolerance tol = {}) {
  const ProjectorChain chain = projector_chain(tasks, tol);
  CapacityReport report;
  Eigen::Index previous = tasks.configuration_dim();
  for (std::size_t k = 0; k < chain.residual_dims.size(); ++k) {
    const Eigen::Index remaining = std::max<Eigen::Index>(chain.residual_dims[k], 0);
    report.levels.push_back({k + 1, previous - remaining, remaining});
    if (remaining == 0 && !report.exhausted_at) report.exhausted_at = k + 1;
    previous = remaining;
  }
  return report;
}

/// u = sum_k N_k u_k. Needs at least as many projectors as controls.
template <typename ControlRange, typename ProjectorRange>
auto compose_flat(const ControlRange& controls, const ProjectorRange& projectors) {
  using Vector = std::remove_cvref_t<decltype(*std::begin(controls))>;
  auto u_it = std::begin(controls);
  auto n_it = std::begin(projectors);
  if (u_it == std::end(controls)) throw DimensionMismatch("compose_flat needs at least one control");
  const Eigen::Index p = u_it->size();
  Vector u = Vector::Zero(p);
  for (; u_it != std::end(controls); ++u_it, ++n_it) {
    if (n_it == std::end(projectors)) throw DimensionMismatch("fewer projectors than controls");
    if (u_it->size() != p || n_it->rows() != p || n_it->cols() != p) {
      throw DimensionMismatch("control and projector sizes disagree");
    }
    u.noalias() += *n_it * *u_it;
  }
  return u;
}

template <typename ControlRange>
auto compose_flat(const ControlRange& controls, const ProjectorChain& chain) {
  return compose_flat(controls, chain.projectors);
}

/// u = u_1 + (I - L_1^+ L_1)(u_2 + (I - L_2^+ L_2)(u_3 + ...)), folded from
/// the innermost task outward. A map with zero rows stands for an inactive
/// task (identity projector). The last task's map is not needed.
template <typename ControlRange, typename MapRange>
auto compose_nested(const ControlRange& controls, const MapRange& input_maps, RankTolerance tol = {}) {
  using Vector = std::remove_cvref_t<decltype(*std::begin(controls))>;
  const auto K = static_cast<std::size_t>(std::distance(std::begin(controls), std::end(controls)));
  const auto maps = static_cast<std::size_t>(std::distance(std::begin(input_maps), std::end(input_maps)));
  if (K == 0) throw DimensionMismatch("compose_nested needs at least one control");
  if (maps + 1 < K) throw DimensionMismatch("compose_nested needs an input map for every task but the last");

  const Eigen::Index p = std::begin(controls)->size();
  Vector acc = *std::next(std::begin(controls), static_cast<std::ptrdiff_t>(K - 1));
  if (acc.size() != p) throw DimensionMismatch("controls must share one dimension");
  for (std::size_t k = K - 1; k-- > 0;) {
    const auto& u_k = *std::next(std::begin(controls), static_cast<std::ptrdiff_t>(k));
    const auto& map = *std::next(std::begin(input_maps), static_cast<std::ptrdiff_t>(k));
    if (u_k.size() != p || map.cols() != p) throw DimensionMismatch("control and input map sizes disagree");
    Vector projected = null_space_projector(map, tol) * acc;
    acc = u_k + projected;
  }
  return acc;
}

}  // namespace hierpi::hier
