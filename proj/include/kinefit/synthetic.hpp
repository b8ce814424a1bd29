// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// Deterministic synthetic models and fitting problems for tests and
// benchmarks. Stands in for extracting per-joint regressors from mesh
// assets; only the affine rest-pose interface matters to the solvers.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kinefit/residuals.hpp"

namespace kinefit {

/// Seeded RNG with portable helper draws (identical output across standard
/// libraries, which keeps generated files byte-stable).
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : engine_(seed * 0x9E3779B97F4A7C15ull + stream * 0xBF58476D1CE4E5B9ull + 1ull) {}

  double uniform(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  double gaussian(double sigma) {
    // Box-Muller; two fresh uniforms per draw keeps the stream stateless.
    const double u1 = std::max(uniform(0.0, 1.0), 1e-300);
    const double u2 = uniform(0.0, 1.0);
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Eigen::Vector3d unit_vector() {
    while (true) {
      const Eigen::Vector3d v(gaussian(1.0), gaussian(1.0), gaussian(1.0));
      const double n = v.norm();
      if (n > 1e-6) return v / n;
    }
  }

  Eigen::Matrix3d rotation(double max_angle) {
    return so3_exp(uniform(0.0, max_angle) * unit_vector());
  }

 private:
  std::mt19937_64 engine_;
};

enum class Topology { SmplLike23, SmplhLike51, Chain, RandomTree };

inline const char* to_string(Topology t) {
  switch (t) {
    case Topology::SmplLike23: return "smpl_like_23";
    case Topology::SmplhLike51: return "smplh_like_51";
    case Topology::Chain: return "chain";
    case Topology::RandomTree: return "random_tree";
  }
  return "unknown";
}

inline Topology topology_from_string(const std::string& s) {
  if (s == "smpl_like_23") return Topology::SmplLike23;
  if (s == "smplh_like_51") return Topology::SmplhLike51;
  if (s == "chain") return Topology::Chain;
  if (s == "random_tree") return Topology::RandomTree;
  throw Error("unknown topology '" + s + "'");
}

struct SyntheticSpec {
  int num_joints = 23;
  int num_shape_params = 10;
  int num_measurements = 300;
  double noise_2d = 0.0;   // pixels
  double noise_3d = 0.0;   // length units
  double noise_pof = 0.0;  // radians
  uint64_t seed = 1;
  Topology topology = Topology::SmplLike23;
};

/// The 24-part SMPL parent table.
inline std::vector<int> smpl_parents() {
  return {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
}

/// The 52-part SMPL+H parent table: the SMPL body through the wrists plus
/// five three-joint fingers per hand.
inline std::vector<int> smplh_parents() {
  std::vector<int> par = {-1, 0, 0,  0,  1,  2,  3,  4,  5,  6, 7,
                          8,  9, 9,  9,  12, 13, 14, 16, 17, 18, 19};
  for (int wrist : {20, 21}) {
    for (int f = 0; f < 5; ++f) {
      const int base = static_cast<int>(par.size());
      par.push_back(wrist);
      par.push_back(base);
      par.push_back(base + 1);
    }
  }
  return par;
}

inline std::vector<int> topology_parents(const SyntheticSpec& spec, Rng& rng) {
  switch (spec.topology) {
    case Topology::SmplLike23:
      if (spec.num_joints != 23) throw Error("smpl_like_23 requires 23 joints");
      return smpl_parents();
    case Topology::SmplhLike51:
      if (spec.num_joints != 51) throw Error("smplh_like_51 requires 51 joints");
      return smplh_parents();
    case Topology::Chain: {
      std::vector<int> par(static_cast<size_t>(spec.num_joints) + 1);
      par[0] = -1;
      for (int i = 1; i <= spec.num_joints; ++i) par[static_cast<size_t>(i)] = i - 1;
      return par;
    }
    case Topology::RandomTree: {
      std::vector<int> par(static_cast<size_t>(spec.num_joints) + 1);
      par[0] = -1;
      for (int i = 1; i <= spec.num_joints; ++i) {
        par[static_cast<size_t>(i)] = static_cast<int>(rng.uniform(0.0, static_cast<double>(i)));
      }
      return par;
    }
  }
  throw Error("unknown topology");
}

struct GeneratedModel {
  KinematicTree tree;
  JointRegressor regressor;
};

/// Deterministic model from the spec: bone lengths in [0.05, 0.5], regressor
/// entries in [-0.05, 0.05], one keypoint per body part (id = part index)
/// offset 0.1-0.3 length units from the part origin.
inline GeneratedModel generate_model(const SyntheticSpec& spec) {
  Rng rng(spec.seed, /*stream=*/0);
  GeneratedModel out;
  KinematicTree& tree = out.tree;
  tree.num_joints = spec.num_joints;
  tree.num_shape_params = spec.num_shape_params;
  tree.parent = topology_parents(spec, rng);

  const int k = spec.num_joints;
  const int p = spec.num_shape_params;
  out.regressor.regressor.resize(static_cast<size_t>(k) + 1);
  out.regressor.offset.resize(static_cast<size_t>(k) + 1);
  out.regressor.regressor[0] = Eigen::Matrix3Xd::Zero(3, p);
  out.regressor.offset[0] = Eigen::Vector3d::Zero();
  for (int i = 1; i <= k; ++i) {
    const auto iu = static_cast<size_t>(i);
    Eigen::Matrix3Xd j(3, p);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < p; ++c) j(r, c) = rng.uniform(-0.05, 0.05);
    }
    out.regressor.regressor[iu] = j;
    const double bone = rng.uniform(0.05, 0.5);
    out.regressor.offset[iu] =
        out.regressor.offset[static_cast<size_t>(tree.parent[iu])] + bone * rng.unit_vector();
  }
  extract_shape_basis(out.regressor, tree.parent, tree);

  tree.attachments.resize(static_cast<size_t>(k) + 1);
  for (int i = 0; i <= k; ++i) {
    KeypointAttachment& att = tree.attachments[static_cast<size_t>(i)];
    att.id = i;
    att.body_part = i;
    att.V = Eigen::Matrix3Xd(3, p);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < p; ++c) att.V(r, c) = rng.uniform(-0.005, 0.005);
    }
    att.v0 = rng.uniform(0.1, 0.3) * rng.unit_vector();
  }
  return out;
}

inline const KeypointAttachment& find_attachment(const KinematicTree& tree, int keypoint_id) {
  for (const auto& att : tree.attachments) {
    if (att.id == keypoint_id) return att;
  }
  throw BadAttachment("unknown keypoint id " + std::to_string(keypoint_id));
}

/// Renders one measurement of the requested kind from the ground-truth view,
/// then corrupts it with the spec's noise level.
inline Measurement render_measurement(const PartStateView& truth, const KinematicTree& tree,
                                      const CameraIntrinsics& camera, MeasurementKind kind,
                                      int keypoint_id, const SyntheticSpec& spec, Rng& rng) {
  const KeypointAttachment& att = find_attachment(tree, keypoint_id);
  const Eigen::Vector3d v = keypoint_position(truth, att, truth.beta);
  Measurement m;
  m.kind = kind;
  m.keypoint = keypoint_id;
  m.weight = 1.0;
  switch (kind) {
    case MeasurementKind::Keypoint2D: {
      const Eigen::Vector2d px = camera.project(v);
      m.value << px.x() + rng.gaussian(spec.noise_2d), px.y() + rng.gaussian(spec.noise_2d), 0.0;
      break;
    }
    case MeasurementKind::Keypoint3D:
      m.value = v + Eigen::Vector3d(rng.gaussian(spec.noise_3d), rng.gaussian(spec.noise_3d),
                                    rng.gaussian(spec.noise_3d));
      break;
    case MeasurementKind::Pof: {
      const Eigen::Vector3d dir =
          (v - truth.part(att.body_part).translation).normalized();
      // Noise in radians: rotate the true direction about a random axis.
      m.value = so3_exp(rng.gaussian(spec.noise_pof) * rng.unit_vector()) * dir;
      break;
    }
  }
  return m;
}

struct SyntheticProblem {
  ModelState truth;
  MeasurementSet measurements;
  ObjectiveConfig objective;
};

// A short focal length keeps the 2D rows from dominating the spectrum of the
// normal equations; at f = 150 and 3 length units depth the generated
// problems stay well conditioned enough for tight cross-solver checks.
inline CameraIntrinsics default_camera() { return {150.0, 150.0, 128.0, 128.0}; }

/// Samples a ground-truth state (joint angles up to 1 rad, body centered
/// ~3 length units in front of the camera, zero shape so the zero-centered
/// shape prior is exact), renders N measurements round-robin over parts and
/// kinds, and centers all priors at the truth. With zero noise the truth has
/// objective exactly zero.
inline SyntheticProblem generate_problem(const KinematicTree& tree, const SyntheticSpec& spec) {
  Rng rng(spec.seed, /*stream=*/1);
  const int k = tree.num_joints;
  SyntheticProblem out;

  out.truth.root.rotation = rng.rotation(0.5);
  out.truth.root.translation =
      Eigen::Vector3d(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 3.0 + rng.uniform(-0.3, 0.3));
  out.truth.joints.resize(static_cast<size_t>(k));
  for (int i = 1; i <= k; ++i) out.truth.joint(i) = rng.rotation(1.0);
  out.truth.shape = Eigen::VectorXd::Zero(tree.num_shape_params);

  out.measurements.camera = default_camera();
  const PartStateView truth_view = forward_kinematics(out.truth, tree);
  out.measurements.items.reserve(static_cast<size_t>(spec.num_measurements));
  for (int n = 0; n < spec.num_measurements; ++n) {
    const int part = n % (k + 1);
    const auto kind = static_cast<MeasurementKind>((n / (k + 1)) % 3);
    out.measurements.items.push_back(
        render_measurement(truth_view, tree, out.measurements.camera, kind, part, spec, rng));
  }

  out.objective.pose_priors.assign(static_cast<size_t>(k) + 1, std::nullopt);
  out.objective.pose_priors[0] = out.truth.root;
  out.objective.joint_priors.assign(static_cast<size_t>(k) + 1, std::nullopt);
  for (int i = 1; i <= k; ++i) {
    out.objective.joint_priors[static_cast<size_t>(i)] =
        JointPriorSpec{out.truth.joint(i), Eigen::Matrix3d::Identity()};
  }
  return out;
}

/// Jitters every joint rotation by up to max_angle radians (used for
/// convergence studies; root and shape are left at their input values).
inline ModelState perturb_joints(const ModelState& state, double max_angle, Rng& rng) {
  ModelState out = state;
  for (auto& j : out.joints) j = rotation_retract(j, rng.uniform(0.0, max_angle) * rng.unit_vector());
  return out;
}

}  // namespace kinefit
