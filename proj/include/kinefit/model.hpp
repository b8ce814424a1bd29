// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// The articulated model: kinematic tree, shape-dependent link offsets,
// rigidly skinned keypoints and forward kinematics.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kinefit/geometry.hpp"

namespace kinefit {

/// Largest supported number of shape parameters (fixed workspace bound).
inline constexpr int kMaxShapeParams = 32;

/// Keypoint rigidly attached to one body part; its part-relative position
/// is V * beta + v0.
struct KeypointAttachment {
  int id = 0;
  int body_part = 0;
  Eigen::Matrix3Xd V;   // 3 x P
  Eigen::Vector3d v0 = Eigen::Vector3d::Zero();
};

/// Kinematic tree of K+1 body parts. Part i > 0 connects to parent[i]
/// through rotational joint i; the parent-relative joint offset is
/// shape_basis[i] * beta + offsets[i].
struct KinematicTree {
  int num_joints = 0;        // K
  int num_shape_params = 0;  // P
  std::vector<int> parent;   // size K+1, parent[0] = -1
  std::vector<Eigen::Matrix3Xd> shape_basis;  // size K+1, entry 0 unused; S_i is 3 x P
  std::vector<Eigen::Vector3d> offsets;       // size K+1, entry 0 unused; l_i
  std::vector<KeypointAttachment> attachments;

  int num_parts() const { return num_joints + 1; }
};

/// Rest-pose joint positions as an affine function of shape:
/// position of part i = regressor[i] * beta + offset[i].
struct JointRegressor {
  std::vector<Eigen::Matrix3Xd> regressor;  // size K+1, 3 x P each
  std::vector<Eigen::Vector3d> offset;      // size K+1
};

/// State of the unconstrained formulation: root pose, joint rotations,
/// shared shape vector.
struct ModelState {
  Pose root;
  std::vector<Eigen::Matrix3d> joints;  // size K, joints[i-1] is part i
  Eigen::VectorXd shape;                // size P

  const Eigen::Matrix3d& joint(int i) const { return joints.at(static_cast<size_t>(i - 1)); }
  Eigen::Matrix3d& joint(int i) { return joints.at(static_cast<size_t>(i - 1)); }
};

/// Per-part view of the constrained formulation: world pose of every part
/// plus the (shared) shape vector; forward_kinematics guarantees
/// beta_i = beta_parent and T_i = F_i(T_parent, beta, Omega_i) by construction.
struct PartStateView {
  std::vector<Pose> pose;  // size K+1
  Eigen::VectorXd beta;    // size P

  const Pose& part(int i) const { return pose[static_cast<size_t>(i)]; }
};

enum class TreeDefect {
  None,
  CycleDetected,
  NonTopologicalOrder,
  BadAttachment,
  DimensionMismatch,
};

struct TreeValidation {
  TreeDefect defect = TreeDefect::None;
  std::string detail;
  bool ok() const { return defect == TreeDefect::None; }
};

/// Checks every KinematicTree invariant and reports the first violation:
/// topological parent order (parent[i] < i), a single rooted tree,
/// consistent dimensions, valid attachments.
inline TreeValidation validate_tree(const KinematicTree& tree) {
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  if (k < 0 || p < 0 || p > kMaxShapeParams) {
    return {TreeDefect::DimensionMismatch, "num_joints/num_shape_params out of range"};
  }
  if (static_cast<int>(tree.parent.size()) != k + 1) {
    return {TreeDefect::DimensionMismatch, "parent array must have K+1 entries"};
  }
  if (tree.parent[0] >= 0) {
    return {TreeDefect::CycleDetected, "part 0 must be the root (parent[0] = none)"};
  }
  for (int i = 1; i <= k; ++i) {
    if (tree.parent[i] == i) {
      return {TreeDefect::CycleDetected, "parent[" + std::to_string(i) + "] = " + std::to_string(i)};
    }
    if (tree.parent[i] < 0 || tree.parent[i] >= i) {
      return {TreeDefect::NonTopologicalOrder,
              "parent[" + std::to_string(i) + "] = " + std::to_string(tree.parent[i])};
    }
  }
  // parent[i] < i for all i already implies reachability from 0 (no cycles).
  if (static_cast<int>(tree.shape_basis.size()) != k + 1 ||
      static_cast<int>(tree.offsets.size()) != k + 1) {
    return {TreeDefect::DimensionMismatch, "shape_basis/offsets must have K+1 entries"};
  }
  for (int i = 1; i <= k; ++i) {
    if (tree.shape_basis[i].cols() != p || tree.shape_basis[i].rows() != 3) {
      return {TreeDefect::DimensionMismatch,
              "shape_basis[" + std::to_string(i) + "] must be 3 x P"};
    }
  }
  for (const auto& att : tree.attachments) {
    if (att.body_part < 0 || att.body_part > k) {
      return {TreeDefect::BadAttachment, "keypoint " + std::to_string(att.id) +
                                             " references part " + std::to_string(att.body_part)};
    }
    if (att.V.cols() != p || att.V.rows() != 3) {
      return {TreeDefect::DimensionMismatch,
              "keypoint " + std::to_string(att.id) + " V must be 3 x P"};
    }
  }
  return {};
}

/// Children lists derived from the parent array.
inline std::vector<std::vector<int>> children_of(const std::vector<int>& parent) {
  std::vector<std::vector<int>> chd(parent.size());
  for (size_t i = 1; i < parent.size(); ++i) {
    chd[static_cast<size_t>(parent[i])].push_back(static_cast<int>(i));
  }
  return chd;
}

/// Differences of the joint regressor along tree edges:
/// S_i = J_i - J_parent(i), l_i = c_i - c_parent(i).
inline void extract_shape_basis(const JointRegressor& reg, const std::vector<int>& parent,
                                KinematicTree& tree) {
  const size_t n = parent.size();
  if (reg.regressor.size() != n || reg.offset.size() != n) {
    throw DimensionMismatch("regressor arrays must have K+1 entries");
  }
  const Eigen::Index p = reg.regressor[0].cols();
  for (const auto& j : reg.regressor) {
    if (j.cols() != p || j.rows() != 3) throw DimensionMismatch("regressor entries must be 3 x P");
  }
  tree.shape_basis.assign(n, Eigen::Matrix3Xd::Zero(3, p));
  tree.offsets.assign(n, Eigen::Vector3d::Zero());
  for (size_t i = 1; i < n; ++i) {
    const auto par = static_cast<size_t>(parent[i]);
    tree.shape_basis[i] = reg.regressor[i] - reg.regressor[par];
    tree.offsets[i] = reg.offset[i] - reg.offset[par];
  }
}

/// Parent-relative pose of part i: rotation Omega_i, translation S_i beta + l_i.
inline Pose relative_pose(const Eigen::Matrix3d& omega_i, const Eigen::VectorXd& beta,
                          const KinematicTree& tree, int i) {
  if (i < 1) throw Error("part 0 is the root and has no relative pose");
  return {omega_i, tree.shape_basis[static_cast<size_t>(i)] * beta +
                       tree.offsets[static_cast<size_t>(i)]};
}

/// Top-down pass computing every part pose from the root pose, joint
/// rotations and shape. The returned view satisfies the constrained
/// formulation's coupling exactly by construction.
inline PartStateView forward_kinematics(const ModelState& state, const KinematicTree& tree) {
  const int k = tree.num_joints;
  PartStateView view;
  view.pose.resize(static_cast<size_t>(k) + 1);
  view.pose[0] = state.root;
  view.beta = state.shape;
  for (int i = 1; i <= k; ++i) {
    view.pose[static_cast<size_t>(i)] =
        view.pose[static_cast<size_t>(tree.parent[static_cast<size_t>(i)])] *
        relative_pose(state.joint(i), state.shape, tree, i);
  }
  return view;
}

/// World position of a keypoint: R_i (V beta + v0) + t_i.
inline Eigen::Vector3d keypoint_position(const PartStateView& view, const KeypointAttachment& att,
                                         const Eigen::VectorXd& beta) {
  const Pose& t = view.part(att.body_part);
  return t.rotation * (att.V * beta + att.v0) + t.translation;
}

}  // namespace kinefit
