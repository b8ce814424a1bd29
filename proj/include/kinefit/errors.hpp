// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT

#pragma once

#include <stdexcept>
#include <string>

namespace kinefit {

/// Base class of all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rotation angle too close to pi for a reliable logarithm.
struct AngleNearPi : Error {
  AngleNearPi() : Error("rotation angle within tolerance of pi; log map is not continuous there") {}
};

struct DimensionMismatch : Error {
  using Error::Error;
};

/// A measurement references an unknown keypoint id.
struct BadAttachment : Error {
  using Error::Error;
};

/// Dense normal equations could not be factorized even at the damping ceiling.
struct SingularSystem : Error {
  double smallest_pivot;
  explicit SingularSystem(double pivot)
      : Error("dense system singular at damping ceiling; smallest pivot " + std::to_string(pivot)),
        smallest_pivot(pivot) {}
};

/// Q22 at some node is not positive definite after damping.
struct IndefiniteQ22 : Error {
  int node;
  double pivot;
  IndefiniteQ22(int node_index, double pivot_value)
      : Error("Q22 not positive definite at node " + std::to_string(node_index) +
              " (pivot " + std::to_string(pivot_value) + ")"),
        node(node_index), pivot(pivot_value) {}
};

/// Root system M0 is singular; supply priors or damping.
struct SingularRoot : Error {
  double pivot;
  explicit SingularRoot(double pivot_value)
      : Error("root system singular (pivot " + std::to_string(pivot_value) +
              "); the root pose and shape need priors or damping"),
        pivot(pivot_value) {}
};

struct NonFiniteObjective : Error {
  NonFiniteObjective() : Error("objective evaluated to a non-finite value") {}
};

}  // namespace kinefit
