#pragma once

#include <Eigen/Core>

namespace hierpi {

// Upper bounds for the shipped unicycle models. Everything on the control
// path uses dynamic-size, bounded-capacity Eigen types so that the rollout
// loops never touch the heap.
inline constexpr int kMaxAgents = 2;
inline constexpr int kStatePerAgent = 4;
inline constexpr int kControlPerAgent = 2;
inline constexpr int kConfigPerAgent = 3;
inline constexpr int kMaxStateDim = kMaxAgents * kStatePerAgent;
inline constexpr int kMaxControlDim = kMaxAgents * kControlPerAgent;
inline constexpr int kMaxConfigDim = kMaxAgents * kConfigPerAgent;
inline constexpr int kMaxTaskDim = 4;

template <int MaxRows>
using BoundedVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, MaxRows, 1>;

template <int MaxRows, int MaxCols>
using BoundedMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, MaxRows, MaxCols>;

using StateVector = BoundedVector<kMaxStateDim>;
using ControlVector = BoundedVector<kMaxControlDim>;
using TaskVector = BoundedVector<kMaxTaskDim>;

/// Task-space input map Λ (m × p).
using InputMap = BoundedMatrix<kMaxTaskDim, kMaxControlDim>;
/// Configuration Jacobian J (m × n_q).
using TaskJacobian = BoundedMatrix<kMaxTaskDim, kMaxConfigDim>;
/// Control-space square matrices, e.g. null-space projectors (p × p).
using ControlMatrix = BoundedMatrix<kMaxControlDim, kMaxControlDim>;
/// State input matrix G (n_x × p).
using InputMatrix = BoundedMatrix<kMaxStateDim, kMaxControlDim>;

using RowMask = Eigen::Array<bool, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxTaskDim, 1>;

}  // namespace hierpi
