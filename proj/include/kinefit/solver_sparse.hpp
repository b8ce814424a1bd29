// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// Sparse constrained Gauss-Newton direction in O(K) + O(N).
//
// The linearized problem
//
//   min  sum_i  1/2 dx_i' H_i11 dx_i + dw_i' H_i21 dx_i
//              + 1/2 dw_i' H_i22 dw_i + g_i1' dx_i + g_i2' dw_i
//   s.t. dx_i = A_i dx_par(i) + B_i dw_i
//
// is solved exactly by a leaf-to-root elimination sweep producing value
// matrices (M_i, m_i), feedback gains (K_i, k_i) and the predicted decrease,
// followed by a root solve and a root-to-leaf recovery sweep. The bottom
// rows of A_i ([0 | I]) and B_i (0) are never materialized; all arithmetic
// runs on the 6-row top blocks, which is what makes each node O((9+P)^2).
//
// SparseSolver keeps all per-node storage alive across calls, so repeated
// directions over one tree do not allocate.

#pragma once

#include <Eigen/Cholesky>
#include <algorithm>
#include <utility>
#include <vector>

#include "kinefit/residuals.hpp"

namespace kinefit {

using PartMat = Eigen::MatrixXd;                          // (6+P) x (6+P)
using PartVec = Eigen::VectorXd;                          // 6+P
using JointPartMat = Eigen::Matrix<double, 3, Eigen::Dynamic>;  // 3 x (6+P)

/// Quadratic model of one part: H_i11, H_i21, H_i22, g_i1, g_i2.
struct NodeQuadratic {
  PartMat h11;
  JointPartMat h21;
  Eigen::Matrix3d h22;
  PartVec g1;
  Eigen::Vector3d g2;

  static NodeQuadratic Zero(int p) {
    NodeQuadratic q;
    q.h11 = PartMat::Zero(6 + p, 6 + p);
    q.h21 = JointPartMat::Zero(3, 6 + p);
    q.h22.setZero();
    q.g1 = PartVec::Zero(6 + p);
    q.g2.setZero();
    return q;
  }
};

/// J^T J / J^T r products per part, written in place; empty blocks give
/// zero quadratics.
inline void build_node_quadratics_into(const std::vector<ResidualBlock>& blocks, int p,
                                       std::vector<NodeQuadratic>& quads) {
  quads.resize(blocks.size());
  for (size_t i = 0; i < blocks.size(); ++i) {
    const ResidualBlock& b = blocks[i];
    NodeQuadratic& q = quads[i];
    if (b.rows() == 0) {
      q = NodeQuadratic::Zero(p);
      continue;
    }
    q.h11.noalias() = b.j1.transpose() * b.j1;
    q.h21.noalias() = b.j2.transpose() * b.j1;
    q.h22.noalias() = b.j2.transpose() * b.j2;
    q.g1.noalias() = b.j1.transpose() * b.r;
    q.g2.noalias() = b.j2.transpose() * b.r;
  }
}

inline std::vector<NodeQuadratic> build_node_quadratics(const std::vector<ResidualBlock>& blocks,
                                                        int p) {
  std::vector<NodeQuadratic> quads;
  build_node_quadratics_into(blocks, p, quads);
  return quads;
}

/// Output of eliminating joint i: feedback gains and the value function
/// passed to the parent.
struct GainTerms {
  JointPartMat gain;       // K_i, 3 x (6+P)
  Eigen::Vector3d offset;  // k_i
  PartMat value_mat;       // M_i
  PartVec value_vec;       // m_i
  double decrease = 0.0;   // Delta E_i
};

/// Exact Gauss-Newton direction of the constrained formulation.
struct SparseDirection {
  std::vector<PartVec> dx;              // per part, (6+P)
  std::vector<Eigen::Vector3d> domega;  // per part; [0] = 0
  double predicted_decrease = 0.0;

  Vector6d root_twist() const { return dx[0].head<6>(); }
  Eigen::VectorXd shape_delta(int p) const { return dx[0].tail(p); }

  /// Repacks into the unconstrained coordinates [root twist; dOmega; dbeta]
  /// for comparison against the dense solver.
  Eigen::VectorXd to_unconstrained(int k, int p) const {
    Eigen::VectorXd out(6 + 3 * k + p);
    out.head<6>() = dx[0].head<6>();
    for (int i = 1; i <= k; ++i) out.segment<3>(6 + 3 * (i - 1)) = domega[static_cast<size_t>(i)];
    out.tail(p) = dx[0].tail(p);
    return out;
  }
};

/// Whether the sweep exploits the structural bottom rows of A_i/B_i or
/// materializes them and uses full dense products (debug oracle).
enum class StructureMode { Structural, Materialized };

namespace detail {

/// LDL^T of a symmetric 3x3 with positivity check; pivots at or below tol fail.
struct Ldlt3 {
  double d0 = 0, d1 = 0, d2 = 0;
  double l10 = 0, l20 = 0, l21 = 0;
  bool ok = false;

  Ldlt3(const Eigen::Matrix3d& a, double tol) {
    d0 = a(0, 0);
    if (d0 <= tol) return;
    l10 = a(1, 0) / d0;
    l20 = a(2, 0) / d0;
    d1 = a(1, 1) - l10 * l10 * d0;
    if (d1 <= tol) return;
    l21 = (a(2, 1) - l20 * l10 * d0) / d1;
    d2 = a(2, 2) - l20 * l20 * d0 - l21 * l21 * d1;
    if (d2 <= tol) return;
    ok = true;
  }

  Eigen::Vector3d solve(const Eigen::Vector3d& b) const {
    const double z0 = b(0);
    const double z1 = b(1) - l10 * z0;
    const double z2 = b(2) - l20 * z0 - l21 * z1;
    const double x2 = z2 / d2;
    const double x1 = z1 / d1 - l21 * x2;
    const double x0 = z0 / d0 - l10 * x1 - l20 * x2;
    return {x0, x1, x2};
  }
};

inline double pd_tolerance(const Eigen::Matrix3d& q22) {
  return 1e-13 * std::max(1.0, q22.diagonal().cwiseAbs().maxCoeff());
}

}  // namespace detail

/// Eliminates dOmega_i from the node quadratic (Q11, Q21, Q22, q1, q2),
/// writing the gains and the value function pushed to the parent. A node
/// whose joint appears nowhere (all-zero Q22, Q21, q2) passes its quadratic
/// through unchanged with zero gains.
inline void eliminate_joint(int node, const PartMat& q11, const JointPartMat& q21,
                            const Eigen::Matrix3d& q22, const PartVec& q1,
                            const Eigen::Vector3d& q2, double accumulated_decrease,
                            GainTerms& out) {
  const Eigen::Index d = q1.size();
  if (q22.lpNorm<Eigen::Infinity>() == 0.0 && q21.lpNorm<Eigen::Infinity>() == 0.0 &&
      q2.lpNorm<Eigen::Infinity>() == 0.0) {
    out.gain = JointPartMat::Zero(3, d);
    out.offset.setZero();
    out.value_mat = q11;
    out.value_vec = q1;
    out.decrease = accumulated_decrease;
    return;
  }
  const detail::Ldlt3 ldlt(q22, detail::pd_tolerance(q22));
  if (!ldlt.ok) {
    throw IndefiniteQ22(node, std::min({q22(0, 0), q22(1, 1), q22(2, 2)}));
  }
  out.gain.resize(3, d);
  for (Eigen::Index c = 0; c < d; ++c) out.gain.col(c) = -ldlt.solve(q21.col(c));
  out.offset = -ldlt.solve(q2);
  out.value_mat.resize(d, d);
  out.value_mat.noalias() = q21.transpose() * out.gain;
  out.value_mat += q11;
  out.value_vec.resize(d);
  out.value_vec.noalias() = q21.transpose() * out.offset;
  out.value_vec += q1;
  out.decrease = accumulated_decrease + 0.5 * q2.dot(out.offset);
}

/// Reusable storage for the backward sweep: value-function accumulators and
/// the per-node pulled-back quadratic.
struct SweepScratch {
  std::vector<PartMat> n11;
  std::vector<PartVec> n1;
  std::vector<double> child_decrease;
  PartMat q11;
  Eigen::Matrix<double, 6, Eigen::Dynamic> w;  // top strip of N11 * A
  JointPartMat q21, vtop;
  PartVec q1;

  void prepare(int k, int p) {
    const auto parts = static_cast<size_t>(k) + 1;
    const Eigen::Index d = 6 + p;
    n11.resize(parts);
    n1.resize(parts);
    child_decrease.assign(parts, 0.0);
    q11.resize(d, d);
    w.resize(6, d);
    q21.resize(3, d);
    vtop.resize(3, d);
    q1.resize(d);
  }
};

/// The leaf-to-root sweep (accumulate children, pull back through A_i/B_i,
/// eliminate each joint) plus the root accumulation. Damping is added to the
/// diagonals of H_i11 and H_i22 of every node before elimination. Gains are
/// written per node; the root value function is left in scratch.n11[0] /
/// scratch.n1[0] / scratch.child_decrease[0].
inline void backward_sweep_into(const std::vector<NodeQuadratic>& quads,
                                const std::vector<ConstraintDerivatives>& cds,
                                const KinematicTree& tree, double damping, StructureMode mode,
                                SweepScratch& scratch, std::vector<GainTerms>& gains) {
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  scratch.prepare(k, p);
  gains.resize(static_cast<size_t>(k) + 1);
  for (int i = 0; i <= k; ++i) {
    const auto iu = static_cast<size_t>(i);
    scratch.n11[iu] = quads[iu].h11;
    scratch.n11[iu].diagonal().array() += damping;
    scratch.n1[iu] = quads[iu].g1;
  }

  Eigen::Matrix3d q22;
  Eigen::Vector3d q2;
  for (int i = k; i >= 1; --i) {
    const auto iu = static_cast<size_t>(i);
    const auto par = static_cast<size_t>(tree.parent[iu]);
    const ConstraintDerivatives& cd = cds[iu];
    const PartMat& nii = scratch.n11[iu];
    Eigen::Matrix3d n22 = quads[iu].h22;
    n22.diagonal().array() += damping;

    if (mode == StructureMode::Structural) {
      // Blockwise products with A = [[Ap, As], [0, I]] and B = [[Bt], [0]].
      const auto ntt = nii.topLeftCorner<6, 6>();
      const auto ntb = nii.topRightCorner(6, p);
      const auto nbb = nii.bottomRightCorner(p, p);
      const auto n21t = quads[iu].h21.leftCols<6>();
      const auto n21b = quads[iu].h21.rightCols(p);

      // W = [Ntt*Ap | Ntt*As + Ntb] is the top strip of N11*A.
      scratch.w.leftCols<6>().noalias() = ntt * cd.pose;
      scratch.w.rightCols(p).noalias() = ntt * cd.shape;
      scratch.w.rightCols(p) += ntb;

      scratch.q11.topLeftCorner<6, 6>().noalias() = cd.pose.transpose() * scratch.w.leftCols<6>();
      scratch.q11.topRightCorner(6, p).noalias() = cd.pose.transpose() * scratch.w.rightCols(p);
      scratch.q11.bottomLeftCorner(p, 6).noalias() = cd.shape.transpose() * scratch.w.leftCols<6>();
      scratch.q11.bottomLeftCorner(p, 6).noalias() += ntb.transpose() * cd.pose;
      scratch.q11.bottomRightCorner(p, p).noalias() =
          cd.shape.transpose() * scratch.w.rightCols(p);
      scratch.q11.bottomRightCorner(p, p).noalias() += ntb.transpose() * cd.shape;
      scratch.q11.bottomRightCorner(p, p) += nbb;

      // V = B'N11 + N21, a 3 x (6+P) strip.
      scratch.vtop.leftCols<6>().noalias() = cd.joint.transpose() * ntt;
      scratch.vtop.leftCols<6>() += n21t;
      scratch.vtop.rightCols(p).noalias() = cd.joint.transpose() * ntb;
      scratch.vtop.rightCols(p) += n21b;

      scratch.q21.leftCols<6>().noalias() = scratch.vtop.leftCols<6>() * cd.pose;
      scratch.q21.rightCols(p).noalias() = scratch.vtop.leftCols<6>() * cd.shape;
      scratch.q21.rightCols(p) += scratch.vtop.rightCols(p);

      q22.noalias() = cd.joint.transpose() * (ntt * cd.joint).eval();
      const Eigen::Matrix3d nb = n21t * cd.joint;
      q22 += nb + nb.transpose() + n22;

      scratch.q1.head<6>().noalias() = cd.pose.transpose() * scratch.n1[iu].head<6>();
      scratch.q1.tail(p).noalias() = cd.shape.transpose() * scratch.n1[iu].head<6>();
      scratch.q1.tail(p) += scratch.n1[iu].tail(p);
      q2.noalias() = cd.joint.transpose() * scratch.n1[iu].head<6>();
      q2 += quads[iu].g2;
    } else {
      const Eigen::MatrixXd a = cd.dense_A(p);
      const Eigen::MatrixXd b = cd.dense_B(p);
      const Eigen::MatrixXd na = nii * a;
      scratch.q11 = a.transpose() * na;
      scratch.q21 = b.transpose() * na + quads[iu].h21 * a;
      const Eigen::Matrix3d nb = quads[iu].h21 * b;
      q22 = b.transpose() * nii * b + nb + nb.transpose() + n22;
      scratch.q1 = a.transpose() * scratch.n1[iu];
      q2 = b.transpose() * scratch.n1[iu] + quads[iu].g2;
    }

    eliminate_joint(i, scratch.q11, scratch.q21, q22, scratch.q1, q2, scratch.child_decrease[iu],
                    gains[iu]);
    scratch.n11[par] += gains[iu].value_mat;
    scratch.n1[par] += gains[iu].value_vec;
    scratch.child_decrease[par] += gains[iu].decrease;
  }
}

struct BackwardSweepResult {
  std::vector<GainTerms> gains;    // size K+1; [0] unused
  PartMat root_mat;                // M_0
  PartVec root_vec;                // m_0
  double children_decrease = 0.0;  // accumulated Delta E of the root's children
};

inline BackwardSweepResult backward_sweep(const std::vector<NodeQuadratic>& quads,
                                          const std::vector<ConstraintDerivatives>& cds,
                                          const KinematicTree& tree, double damping,
                                          StructureMode mode = StructureMode::Structural) {
  SweepScratch scratch;
  BackwardSweepResult out;
  backward_sweep_into(quads, cds, tree, damping, mode, scratch, out.gains);
  out.root_mat = std::move(scratch.n11[0]);
  out.root_vec = std::move(scratch.n1[0]);
  out.children_decrease = scratch.child_decrease[0];
  return out;
}

/// Root solve: dx_0 = -M0^-1 m0, plus the total predicted decrease
/// Delta E_0 = (children decrease) - 1/2 m0' M0^-1 m0.
inline std::pair<PartVec, double> root_solve(const PartMat& root_mat, const PartVec& root_vec,
                                             double children_decrease) {
  if (root_vec.lpNorm<Eigen::Infinity>() == 0.0 && root_mat.lpNorm<Eigen::Infinity>() == 0.0) {
    return {PartVec::Zero(root_vec.size()), children_decrease};
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(root_mat);
  const double min_pivot = ldlt.vectorD().minCoeff();
  const double scale = std::max(1.0, root_mat.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || min_pivot <= 1e-14 * scale) {
    throw SingularRoot(min_pivot);
  }
  PartVec dx0 = ldlt.solve((-root_vec).eval());
  const double decrease = children_decrease + 0.5 * root_vec.dot(dx0);
  return {std::move(dx0), decrease};
}

/// Top-down recovery: dOmega_i = K_i dx_par + k_i, then
/// dx_i = A_i dx_par + B_i dOmega_i.
inline SparseDirection forward_sweep(const PartVec& dx0, double predicted_decrease,
                                     const std::vector<GainTerms>& gains,
                                     const std::vector<ConstraintDerivatives>& cds,
                                     const KinematicTree& tree,
                                     StructureMode mode = StructureMode::Structural) {
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  SparseDirection dir;
  dir.dx.resize(static_cast<size_t>(k) + 1);
  dir.domega.assign(static_cast<size_t>(k) + 1, Eigen::Vector3d::Zero());
  dir.predicted_decrease = predicted_decrease;
  dir.dx[0] = dx0;
  for (int i = 1; i <= k; ++i) {
    const auto iu = static_cast<size_t>(i);
    const PartVec& dxp = dir.dx[static_cast<size_t>(tree.parent[iu])];
    dir.domega[iu].noalias() = gains[iu].gain * dxp;
    dir.domega[iu] += gains[iu].offset;
    if (mode == StructureMode::Structural) {
      dir.dx[iu].resize(6 + p);
      dir.dx[iu].head<6>().noalias() = cds[iu].pose * dxp.head<6>();
      dir.dx[iu].head<6>().noalias() += cds[iu].shape * dxp.tail(p);
      dir.dx[iu].head<6>().noalias() += cds[iu].joint * dir.domega[iu];
      dir.dx[iu].tail(p) = dxp.tail(p);
    } else {
      dir.dx[iu] = cds[iu].dense_A(p) * dxp + cds[iu].dense_B(p) * dir.domega[iu];
    }
  }
  return dir;
}

/// Exact gradient of the unconstrained objective in the coordinates
/// [root twist; dOmega; dbeta], computed by a leaf-to-root adjoint pass in
/// O(K): y_i = g_i1 + sum_children A_c' y_c; grad_Omega_i = B_i' y_i + g_i2.
inline Eigen::VectorXd unconstrained_gradient(const std::vector<NodeQuadratic>& quads,
                                              const std::vector<ConstraintDerivatives>& cds,
                                              const KinematicTree& tree) {
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  std::vector<PartVec> y(static_cast<size_t>(k) + 1);
  for (int i = 0; i <= k; ++i) y[static_cast<size_t>(i)] = quads[static_cast<size_t>(i)].g1;
  Eigen::VectorXd grad(6 + 3 * k + p);
  for (int i = k; i >= 1; --i) {
    const auto iu = static_cast<size_t>(i);
    const auto par = static_cast<size_t>(tree.parent[iu]);
    grad.segment<3>(6 + 3 * (i - 1)).noalias() = cds[iu].joint.transpose() * y[iu].head<6>();
    grad.segment<3>(6 + 3 * (i - 1)) += quads[iu].g2;
    y[par].head<6>().noalias() += cds[iu].pose.transpose() * y[iu].head<6>();
    y[par].tail(p).noalias() += cds[iu].shape.transpose() * y[iu].head<6>();
    y[par].tail(p) += y[iu].tail(p);
  }
  grad.head<6>() = y[0].head<6>();
  grad.tail(p) = y[0].tail(p);
  return grad;
}

/// Steps 1-3 at one linearization point. All per-node storage lives on the
/// instance and is reused, so warm calls do not allocate. Instances are
/// single-threaded; distinct instances over the same tree may run
/// concurrently.
class SparseSolver {
 public:
  explicit SparseSolver(const KinematicTree& tree)
      : tree_(&tree),
        blocks_(static_cast<size_t>(tree.num_parts())),
        cds_(static_cast<size_t>(tree.num_parts())) {}

  SparseDirection compute(const PartStateView& view, const ProblemLayout& layout,
                          const MeasurementSet& measurements, const ObjectiveConfig& config,
                          double damping, SkipCounts* skips = nullptr,
                          StructureMode mode = StructureMode::Structural) {
    SkipCounts local;
    for (int i = 0; i <= tree_->num_joints; ++i) {
      assemble_block(view, *tree_, layout, measurements, config, i,
                     blocks_[static_cast<size_t>(i)], local);
    }
    if (skips) *skips = local;
    for (int i = 1; i <= tree_->num_joints; ++i) {
      cds_[static_cast<size_t>(i)] = constraint_derivatives(view, *tree_, i);
    }
    build_node_quadratics_into(blocks_, tree_->num_shape_params, quads_);
    backward_sweep_into(quads_, cds_, *tree_, damping, mode, scratch_, gains_);
    auto [dx0, decrease] =
        root_solve(scratch_.n11[0], scratch_.n1[0], scratch_.child_decrease[0]);
    return forward_sweep(dx0, decrease, gains_, cds_, *tree_, mode);
  }

  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  const std::vector<ConstraintDerivatives>& constraint_derivs() const { return cds_; }

 private:
  const KinematicTree* tree_;
  std::vector<ResidualBlock> blocks_;
  std::vector<ConstraintDerivatives> cds_;
  std::vector<NodeQuadratic> quads_;
  std::vector<GainTerms> gains_;
  SweepScratch scratch_;
};

/// Convenience wrapper running the whole sparse pipeline once.
inline SparseDirection gauss_newton_direction(const PartStateView& view, const KinematicTree& tree,
                                              const MeasurementSet& measurements,
                                              const ObjectiveConfig& config, double damping) {
  const ProblemLayout layout = build_layout(tree, measurements.items);
  SparseSolver solver(tree);
  return solver.compute(view, layout, measurements, config, damping);
}

}  // namespace kinefit
