// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// Dense unconstrained Gauss-Newton direction: chain-rule sensitivities of
// every part pose with respect to (root twist, joint rotations, shape), full
// Jacobian assembly and one dense symmetric solve. O(K^3) + O(K^2 N); kept
// deliberately straightforward to serve as the reference oracle for the
// sparse solver.

#pragma once

#include <Eigen/Cholesky>
#include <vector>

#include "kinefit/residuals.hpp"

namespace kinefit {

/// Derivatives of one part's pose twist with respect to the unconstrained
/// variables (root twist, all joint rotations, shape).
struct PartSensitivity {
  Eigen::Matrix<double, 6, 6> d_root;
  Eigen::MatrixXd d_joints;  // 6 x 3K; zero outside the root-to-part path
  Eigen::Matrix<double, 6, Eigen::Dynamic, 0, 6, kMaxShapeParams> d_shape;  // 6 x P
};

/// Top-down recursion composing child sensitivities from the parent through
/// the top blocks of A_i and B_i.
inline std::vector<PartSensitivity> propagate_chain_rule(
    const KinematicTree& tree, const std::vector<ConstraintDerivatives>& cds) {
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  std::vector<PartSensitivity> sens(static_cast<size_t>(k) + 1);
  sens[0].d_root.setIdentity();
  sens[0].d_joints = Eigen::MatrixXd::Zero(6, 3 * k);
  sens[0].d_shape = Eigen::Matrix<double, 6, Eigen::Dynamic>::Zero(6, p);
  for (int i = 1; i <= k; ++i) {
    const auto iu = static_cast<size_t>(i);
    const PartSensitivity& par = sens[static_cast<size_t>(tree.parent[iu])];
    const ConstraintDerivatives& cd = cds[iu];
    PartSensitivity& s = sens[iu];
    s.d_root = cd.pose * par.d_root;
    s.d_joints.noalias() = cd.pose * par.d_joints;
    s.d_joints.block<6, 3>(0, 3 * (i - 1)) += cd.joint;
    s.d_shape = cd.pose * par.d_shape + cd.shape;
  }
  return sens;
}

/// Full Jacobian of one part's residual block in the unconstrained
/// coordinates [root twist (6); joint rotations (3K); shape (P)].
inline Eigen::MatrixXd dense_jacobian(const ResidualBlock& block, const PartSensitivity& sens,
                                      int k, int p) {
  const Eigen::Index n = block.rows();
  Eigen::MatrixXd j(n, 6 + 3 * k + p);
  const auto j1_pose = block.j1.leftCols(6);
  j.leftCols(6).noalias() = j1_pose * sens.d_root;
  j.middleCols(6, 3 * k).noalias() = j1_pose * sens.d_joints;
  if (block.part >= 1) {
    j.middleCols(6 + 3 * (block.part - 1), 3) += block.j2;
  }
  j.rightCols(p).noalias() = j1_pose * sens.d_shape;
  j.rightCols(p) += block.j1.rightCols(p);
  return j;
}

/// Normal equations H = sum J_i^T J_i, g = sum J_i^T r_i.
struct DenseSystem {
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
};

inline DenseSystem assemble_dense(const std::vector<ResidualBlock>& blocks,
                                  const std::vector<PartSensitivity>& sens,
                                  const KinematicTree& tree) {
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  const Eigen::Index dim = 6 + 3 * k + p;
  if (blocks.size() != sens.size()) throw DimensionMismatch("blocks/sensitivities size mismatch");
  DenseSystem sys{Eigen::MatrixXd::Zero(dim, dim), Eigen::VectorXd::Zero(dim)};
  for (const auto& block : blocks) {
    if (block.rows() == 0) continue;
    const Eigen::MatrixXd j = dense_jacobian(block, sens[static_cast<size_t>(block.part)], k, p);
    sys.h.selfadjointView<Eigen::Lower>().rankUpdate(j.transpose());
    sys.g.noalias() += j.transpose() * block.r;
  }
  sys.h.triangularView<Eigen::StrictlyUpper>() = sys.h.transpose();
  return sys;
}

/// Direction in the unconstrained coordinates.
struct DenseDirection {
  Eigen::VectorXd dx;  // [root twist; joint rotations; shape]
  double predicted_decrease = 0.0;

  Vector6d root_twist() const { return dx.head<6>(); }
  Eigen::Vector3d joint_delta(int i) const { return dx.segment<3>(6 + 3 * (i - 1)); }
  Eigen::VectorXd shape_delta(int p) const { return dx.tail(p); }
};

/// Solves (H + damping I) dx = -g by LDLT. On an unusable factorization the
/// damping is escalated x10 up to 1e6 before reporting SingularSystem.
inline DenseDirection solve_dense(const DenseSystem& sys, double damping) {
  DenseDirection out;
  const double gnorm = sys.g.norm();
  if (gnorm == 0.0) {
    out.dx = Eigen::VectorXd::Zero(sys.g.size());
    return out;
  }
  double lambda = damping;
  const Eigen::Index dim = sys.g.size();
  double smallest_pivot = 0.0;
  while (true) {
    Eigen::MatrixXd damped = sys.h;
    damped.diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
    smallest_pivot = ldlt.vectorD().minCoeff();
    if (ldlt.info() == Eigen::Success && smallest_pivot > 0.0) {
      out.dx = ldlt.solve(-sys.g);
      // One step of iterative refinement sharpens the factorization error.
      out.dx -= ldlt.solve((damped * out.dx + sys.g).eval());
      const double resid = (damped * out.dx + sys.g).norm();
      if (out.dx.allFinite() && resid <= 1e-8 * gnorm) {
        out.predicted_decrease = 0.5 * out.dx.dot(sys.h * out.dx) + sys.g.dot(out.dx);
        return out;
      }
    }
    if (lambda >= 1e6) throw SingularSystem(smallest_pivot);
    lambda = lambda > 0.0 ? 10.0 * lambda : 1e-10;
    (void)dim;
  }
}

/// Full dense pipeline at one linearization point: residual blocks,
/// constraint derivatives, chain rule, assembly and solve.
class DenseSolver {
 public:
  explicit DenseSolver(const KinematicTree& tree) : tree_(&tree) {}

  DenseDirection compute(const PartStateView& view, const ProblemLayout& layout,
                         const MeasurementSet& measurements, const ObjectiveConfig& config,
                         double damping, SkipCounts* skips = nullptr,
                         DenseSystem* system_out = nullptr) {
    SkipCounts local;
    const auto blocks = assemble_all_blocks(view, *tree_, layout, measurements, config, local);
    if (skips) *skips = local;
    std::vector<ConstraintDerivatives> cds(static_cast<size_t>(tree_->num_parts()));
    for (int i = 1; i <= tree_->num_joints; ++i) {
      cds[static_cast<size_t>(i)] = constraint_derivatives(view, *tree_, i);
    }
    const auto sens = propagate_chain_rule(*tree_, cds);
    DenseSystem sys = assemble_dense(blocks, sens, *tree_);
    DenseDirection dir = solve_dense(sys, damping);
    if (system_out) *system_out = std::move(sys);
    return dir;
  }

 private:
  const KinematicTree* tree_;
};

}  // namespace kinefit
