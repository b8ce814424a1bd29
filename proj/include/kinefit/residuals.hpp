// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// Per-body-part residual blocks r_i(T_i, Omega_i, beta_i) for all loss
// terms, their analytic block Jacobians J1 = dr/d[T_i; beta_i] and
// J2 = dr/dOmega_i, and the constraint derivatives A_i, B_i.
//
// Weights enter as sqrt(lambda) row scaling, so everything downstream of a
// ResidualBlock is plain unweighted least squares.

#pragma once

#include <optional>
#include <vector>

#include "kinefit/model.hpp"

namespace kinefit {

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;  // pixels per length unit
  double cx = 0.0, cy = 0.0;  // pixels

  Eigen::Vector2d project(const Eigen::Vector3d& p) const {
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
  }
};

/// Keypoints closer than this to the camera plane are skipped.
inline constexpr double kMinDepth = 1e-6;
/// Bones shorter than this cannot define an orientation; skipped.
inline constexpr double kMinBoneLength = 1e-8;

enum class MeasurementKind { Keypoint2D, Keypoint3D, Pof };

struct Measurement {
  MeasurementKind kind = MeasurementKind::Keypoint3D;
  int keypoint = 0;
  Eigen::Vector3d value = Eigen::Vector3d::Zero();  // first 2 entries for Keypoint2D
  double weight = 1.0;
};

struct MeasurementSet {
  CameraIntrinsics camera;
  std::vector<Measurement> items;
};

struct JointPriorSpec {
  Eigen::Matrix3d mean = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d sqrt_weight = Eigen::Matrix3d::Identity();  // W^(1/2)
};

/// Scalar loss weights plus the optional per-part priors of the objective.
struct ObjectiveConfig {
  double lambda_3d = 1.0;
  double lambda_pof = 1.0;
  double lambda_pose = 1e-2;
  double lambda_joint = 1e-2;
  double lambda_shape = 1e-2;
  std::vector<std::optional<Pose>> pose_priors;            // size K+1 or empty
  std::vector<std::optional<JointPriorSpec>> joint_priors; // size K+1 (entry 0 unused) or empty

  const std::optional<Pose>& pose_prior(int part) const {
    static const std::optional<Pose> none;
    if (pose_priors.empty()) return none;
    return pose_priors[static_cast<size_t>(part)];
  }
  const std::optional<JointPriorSpec>& joint_prior(int part) const {
    static const std::optional<JointPriorSpec> none;
    if (joint_priors.empty() || part < 1) return none;
    return joint_priors[static_cast<size_t>(part)];
  }
};

/// Measurements skipped at the current linearization point.
struct SkipCounts {
  int behind_camera = 0;
  int degenerate_bone = 0;
  int total() const { return behind_camera + degenerate_bone; }
};

/// Stacked weighted residual of one body part with its block Jacobians.
struct ResidualBlock {
  int part = 0;
  Eigen::VectorXd r;   // N_i
  Eigen::MatrixXd j1;  // N_i x (6+P), columns [pose twist | shape]
  Eigen::MatrixXd j2;  // N_i x 3, joint rotation
  Eigen::Index rows() const { return r.size(); }
};

/// Derivatives of the constraint x_i = [F_i(x_parent, Omega_i); beta_parent]
/// under right-multiplicative increments.
///
///   A_i = [[pose, shape], [0, I_P]]   (6+P) x (6+P)
///   B_i = [[joint],       [0    ]]    (6+P) x 3
///
/// Only the top blocks are stored; the bottom rows are exactly [0 | I] and 0
/// and are handled structurally by the solvers.
struct ConstraintDerivatives {
  Eigen::Matrix<double, 6, 6> pose;
  Eigen::Matrix<double, 6, Eigen::Dynamic, 0, 6, kMaxShapeParams> shape;  // 6 x P
  Eigen::Matrix<double, 6, 3> joint;

  Eigen::MatrixXd dense_A(int p) const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6 + p, 6 + p);
    a.topLeftCorner(6, 6) = pose;
    a.topRightCorner(6, p) = shape;
    a.bottomRightCorner(p, p).setIdentity();
    return a;
  }
  Eigen::MatrixXd dense_B(int p) const {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(6 + p, 3);
    b.topRows(6) = joint;
    return b;
  }
};

/// A_i, B_i at the current view. The relative rotation is recovered from the
/// view, the relative offset from the shape basis.
inline ConstraintDerivatives constraint_derivatives(const PartStateView& view,
                                                    const KinematicTree& tree, int i) {
  if (i < 1) throw Error("part 0 is the root and has no constraint");
  const auto iu = static_cast<size_t>(i);
  const Pose& t_par = view.part(tree.parent[iu]);
  const Pose& t_i = view.part(i);
  const Eigen::Matrix3d rel_rot = t_par.rotation.transpose() * t_i.rotation;
  const Eigen::Vector3d d = tree.shape_basis[iu] * view.beta + tree.offsets[iu];

  ConstraintDerivatives out;
  out.pose.setZero();
  out.pose.topLeftCorner<3, 3>() = rel_rot.transpose();
  out.pose.bottomRightCorner<3, 3>() = rel_rot.transpose();
  out.pose.bottomLeftCorner<3, 3>() = -rel_rot.transpose() * skew(d);
  out.shape.resize(6, tree.num_shape_params);
  out.shape.topRows(3).setZero();
  out.shape.bottomRows(3) = rel_rot.transpose() * tree.shape_basis[iu];
  out.joint.setZero();
  out.joint.topRows<3>().setIdentity();
  return out;
}

namespace detail {

/// Derivative of the keypoint position v = R (V beta + v0) + t with respect
/// to the pose twist [omega; rho] and shape.
struct KeypointDerivatives {
  Eigen::Vector3d v;
  Eigen::Matrix<double, 3, 6> d_pose;
  Eigen::Matrix<double, 3, Eigen::Dynamic, 0, 3, kMaxShapeParams> d_shape;
};

inline KeypointDerivatives keypoint_derivatives(const Pose& t, const KeypointAttachment& att,
                                                const Eigen::VectorXd& beta) {
  KeypointDerivatives out;
  const Eigen::Vector3d rel = att.V * beta + att.v0;
  out.v = t.rotation * rel + t.translation;
  out.d_pose.leftCols<3>() = -t.rotation * skew(rel);
  out.d_pose.rightCols<3>() = t.rotation;
  out.d_shape = t.rotation * att.V;
  return out;
}

}  // namespace detail

// --- individual residual kinds ----------------------------------------------
//
// The *_eval functions return the unweighted residual and Jacobian blocks;
// a disengaged optional means the measurement is skipped (degenerate).

struct Residual2d {
  Eigen::Vector2d r;
  Eigen::Matrix<double, 2, 6> d_pose;
  Eigen::Matrix<double, 2, Eigen::Dynamic, 0, 2, kMaxShapeParams> d_shape;
};

inline std::optional<Residual2d> residual_2d_eval(const PartStateView& view,
                                                  const KeypointAttachment& att,
                                                  const Eigen::Vector2d& measured,
                                                  const CameraIntrinsics& cam) {
  const auto kp = detail::keypoint_derivatives(view.part(att.body_part), att, view.beta);
  const double z = kp.v.z();
  if (z <= kMinDepth) return std::nullopt;
  Residual2d out;
  out.r = cam.project(kp.v) - measured;
  Eigen::Matrix<double, 2, 3> dproj;
  // clang-format off
  dproj << cam.fx / z, 0.0,        -cam.fx * kp.v.x() / (z * z),
           0.0,        cam.fy / z, -cam.fy * kp.v.y() / (z * z);
  // clang-format on
  out.d_pose = dproj * kp.d_pose;
  out.d_shape = dproj * kp.d_shape;
  return out;
}

struct Residual3d {
  Eigen::Vector3d r;
  Eigen::Matrix<double, 3, 6> d_pose;
  Eigen::Matrix<double, 3, Eigen::Dynamic, 0, 3, kMaxShapeParams> d_shape;
};

inline Residual3d residual_3d_eval(const PartStateView& view, const KeypointAttachment& att,
                                   const Eigen::Vector3d& measured) {
  const auto kp = detail::keypoint_derivatives(view.part(att.body_part), att, view.beta);
  return {kp.v - measured, kp.d_pose, kp.d_shape};
}

/// Part orientation field: unit vector from the part origin to the keypoint.
inline std::optional<Residual3d> residual_pof_eval(const PartStateView& view,
                                                   const KeypointAttachment& att,
                                                   const Eigen::Vector3d& measured_dir) {
  const Pose& t = view.part(att.body_part);
  const Eigen::Vector3d rel = att.V * view.beta + att.v0;
  const Eigen::Vector3d u = t.rotation * rel;  // v_j - t_i
  const double n = u.norm();
  if (n <= kMinBoneLength) return std::nullopt;
  const Eigen::Vector3d uhat = u / n;
  const Eigen::Matrix3d pn = (Eigen::Matrix3d::Identity() - uhat * uhat.transpose()) / n;
  Residual3d out;
  out.r = uhat - measured_dir;
  out.d_pose.leftCols<3>() = pn * (-t.rotation * skew(rel));
  out.d_pose.rightCols<3>().setZero();  // translation cancels in v_j - t_i
  out.d_shape = pn * (t.rotation * att.V);
  return out;
}

struct ResidualPosePrior {
  Vector6d r;
  Matrix6d d_pose;
};

/// Geodesic pose prior r = log(prior^-1 * T_i); 6 rows matching the twist.
inline ResidualPosePrior residual_pose_prior_eval(const PartStateView& view, const Pose& prior,
                                                  int part) {
  ResidualPosePrior out;
  out.r = se3_log(prior.inverse() * view.part(part));
  out.d_pose = se3_right_jacobian_inverse(out.r);
  return out;
}

struct ResidualJointPrior {
  Eigen::Vector3d r;
  Eigen::Matrix3d d_joint;
};

/// Weighted geodesic joint prior r = W^(1/2) log(mean^T Omega).
inline ResidualJointPrior residual_joint_prior_eval(const Eigen::Matrix3d& omega,
                                                    const JointPriorSpec& prior) {
  const Eigen::Vector3d phi = so3_log(prior.mean.transpose() * omega);
  return {prior.sqrt_weight * phi, prior.sqrt_weight * so3_right_jacobian_inverse(phi)};
}

// Value-only wrappers for the operations above.

inline std::optional<Eigen::Vector2d> residual_2d(const PartStateView& view,
                                                  const KeypointAttachment& att,
                                                  const Eigen::Vector2d& measured,
                                                  const CameraIntrinsics& cam) {
  const auto eval = residual_2d_eval(view, att, measured, cam);
  if (!eval) return std::nullopt;
  return eval->r;
}

inline Eigen::Vector3d residual_3d(const PartStateView& view, const KeypointAttachment& att,
                                   const Eigen::Vector3d& measured) {
  return residual_3d_eval(view, att, measured).r;
}

inline std::optional<Eigen::Vector3d> residual_pof(const PartStateView& view,
                                                   const KeypointAttachment& att,
                                                   const Eigen::Vector3d& measured_dir) {
  const auto eval = residual_pof_eval(view, att, measured_dir);
  if (!eval) return std::nullopt;
  return eval->r;
}

inline Vector6d residual_pose_prior(const PartStateView& view, const Pose& prior, int part) {
  return residual_pose_prior_eval(view, prior, part).r;
}

inline Eigen::Vector3d residual_joint_prior(const Eigen::Matrix3d& omega,
                                            const Eigen::Matrix3d& prior_mean,
                                            const Eigen::Matrix3d& sqrt_weight) {
  return residual_joint_prior_eval(omega, {prior_mean, sqrt_weight}).r;
}

inline Eigen::VectorXd residual_shape_prior(const Eigen::VectorXd& beta) { return beta; }

// --- block assembly ----------------------------------------------------------

/// Measurement indices grouped by the body part their keypoint attaches to.
struct ProblemLayout {
  std::vector<std::vector<int>> meas_by_part;  // size K+1
  std::vector<int> att_index;                  // per measurement, index into tree.attachments
};

inline ProblemLayout build_layout(const KinematicTree& tree,
                                  const std::vector<Measurement>& measurements) {
  ProblemLayout layout;
  layout.meas_by_part.resize(static_cast<size_t>(tree.num_parts()));
  layout.att_index.resize(measurements.size(), -1);
  for (size_t m = 0; m < measurements.size(); ++m) {
    int att = -1;
    for (size_t a = 0; a < tree.attachments.size(); ++a) {
      if (tree.attachments[a].id == measurements[m].keypoint) {
        att = static_cast<int>(a);
        break;
      }
    }
    if (att < 0) {
      throw BadAttachment("measurement references unknown keypoint id " +
                          std::to_string(measurements[m].keypoint));
    }
    layout.att_index[m] = att;
    layout.meas_by_part[static_cast<size_t>(tree.attachments[static_cast<size_t>(att)].body_part)]
        .push_back(static_cast<int>(m));
  }
  return layout;
}

/// Stacks every weighted term touching body part `part`: its measurements in
/// layout order, then pose prior, joint prior and (for the root) the shape
/// prior. Parts with no terms yield an empty block.
inline void assemble_block(const PartStateView& view, const KinematicTree& tree,
                           const ProblemLayout& layout, const MeasurementSet& measurements,
                           const ObjectiveConfig& config, int part, ResidualBlock& block,
                           SkipCounts& skips) {
  const int p = tree.num_shape_params;
  const auto& meas_idx = layout.meas_by_part[static_cast<size_t>(part)];

  Eigen::Index rows = 0;
  for (int m : meas_idx) {
    rows += measurements.items[static_cast<size_t>(m)].kind == MeasurementKind::Keypoint2D ? 2 : 3;
  }
  const auto& pose_prior = config.pose_prior(part);
  const auto& joint_prior = config.joint_prior(part);
  const bool has_pose_prior = pose_prior.has_value() && config.lambda_pose > 0.0;
  const bool has_joint_prior = joint_prior.has_value() && config.lambda_joint > 0.0;
  const bool has_shape_prior = part == 0 && config.lambda_shape > 0.0 && p > 0;
  if (has_pose_prior) rows += 6;
  if (has_joint_prior) rows += 3;
  if (has_shape_prior) rows += p;

  block.part = part;
  block.r.resize(rows);
  block.j1.resize(rows, 6 + p);
  block.j2.resize(rows, 3);
  if (rows == 0) return;
  block.r.setZero();
  block.j1.setZero();
  block.j2.setZero();

  Eigen::Index row = 0;
  for (int m : meas_idx) {
    const Measurement& meas = measurements.items[static_cast<size_t>(m)];
    const KeypointAttachment& att =
        tree.attachments[static_cast<size_t>(layout.att_index[static_cast<size_t>(m)])];
    switch (meas.kind) {
      case MeasurementKind::Keypoint2D: {
        const auto eval = residual_2d_eval(view, att, meas.value.head<2>(), measurements.camera);
        if (!eval) {
          ++skips.behind_camera;
          break;
        }
        const double s = std::sqrt(meas.weight);
        block.r.segment<2>(row) = s * eval->r;
        block.j1.block(row, 0, 2, 6) = s * eval->d_pose;
        block.j1.block(row, 6, 2, p) = s * eval->d_shape;
        row += 2;
        break;
      }
      case MeasurementKind::Keypoint3D: {
        const auto eval = residual_3d_eval(view, att, meas.value);
        const double s = std::sqrt(config.lambda_3d * meas.weight);
        block.r.segment<3>(row) = s * eval.r;
        block.j1.block(row, 0, 3, 6) = s * eval.d_pose;
        block.j1.block(row, 6, 3, p) = s * eval.d_shape;
        row += 3;
        break;
      }
      case MeasurementKind::Pof: {
        const auto eval = residual_pof_eval(view, att, meas.value);
        if (!eval) {
          ++skips.degenerate_bone;
          break;
        }
        const double s = std::sqrt(config.lambda_pof * meas.weight);
        block.r.segment<3>(row) = s * eval->r;
        block.j1.block(row, 0, 3, 6) = s * eval->d_pose;
        block.j1.block(row, 6, 3, p) = s * eval->d_shape;
        row += 3;
        break;
      }
    }
  }
  if (has_pose_prior) {
    const auto eval = residual_pose_prior_eval(view, *pose_prior, part);
    const double s = std::sqrt(config.lambda_pose);
    block.r.segment<6>(row) = s * eval.r;
    block.j1.block(row, 0, 6, 6) = s * eval.d_pose;
    row += 6;
  }
  if (has_joint_prior) {
    const Pose& t_par = view.part(tree.parent[static_cast<size_t>(part)]);
    const Eigen::Matrix3d omega = t_par.rotation.transpose() * view.part(part).rotation;
    const auto eval = residual_joint_prior_eval(omega, *joint_prior);
    const double s = std::sqrt(config.lambda_joint);
    block.r.segment<3>(row) = s * eval.r;
    block.j2.block(row, 0, 3, 3) = s * eval.d_joint;
    row += 3;
  }
  if (has_shape_prior) {
    const double s = std::sqrt(config.lambda_shape);
    block.r.segment(row, p) = s * view.beta;
    block.j1.block(row, 6, p, p) = s * Eigen::MatrixXd::Identity(p, p);
    row += p;
  }
  // Skipped measurements leave zero rows at the tail; trim them.
  if (row < rows) {
    block.r.conservativeResize(row);
    block.j1.conservativeResize(row, Eigen::NoChange);
    block.j2.conservativeResize(row, Eigen::NoChange);
  }
}

/// Assembles the blocks of all parts.
inline std::vector<ResidualBlock> assemble_all_blocks(const PartStateView& view,
                                                      const KinematicTree& tree,
                                                      const ProblemLayout& layout,
                                                      const MeasurementSet& measurements,
                                                      const ObjectiveConfig& config,
                                                      SkipCounts& skips) {
  std::vector<ResidualBlock> blocks(static_cast<size_t>(tree.num_parts()));
  for (int i = 0; i <= tree.num_joints; ++i) {
    assemble_block(view, tree, layout, measurements, config, i, blocks[static_cast<size_t>(i)],
                   skips);
  }
  return blocks;
}

/// Total objective 0.5 * sum ||r_i||^2 of assembled blocks.
inline double objective_value(const std::vector<ResidualBlock>& blocks) {
  double e = 0.0;
  for (const auto& b : blocks) e += 0.5 * b.r.squaredNorm();
  return e;
}

}  // namespace kinefit
