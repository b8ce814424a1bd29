// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// JSON file formats: model, measurements (with camera and priors), states,
// fit results and reports. Numbers round-trip losslessly.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinefit/optimizer.hpp"
#include "kinefit/residuals.hpp"

namespace kinefit {

using Json = nlohmann::json;

namespace detail {

inline Json matrix_rows(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_rows(const Json& j, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(j.size()) != rows) throw Error("matrix row count mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw Error("matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<size_t>(c)).get<double>();
  }
  return m;
}

inline Json flat9(const Eigen::Matrix3d& m) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  }
  return out;
}

inline Eigen::Matrix3d mat3_from_flat9(const Json& j) {
  if (j.size() != 9) throw Error("rotation must have 9 entries");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(static_cast<size_t>(3 * r + c)).get<double>();
  }
  return m;
}

inline Json vec(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Eigen::VectorXd vec_from(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<size_t>(i)).get<double>();
  return v;
}

}  // namespace detail

// --- model -------------------------------------------------------------------

inline Json model_to_json(const KinematicTree& tree) {
  Json j;
  j["num_joints"] = tree.num_joints;
  j["num_shape_params"] = tree.num_shape_params;
  Json parents = Json::array();
  parents.push_back(nullptr);
  for (int i = 1; i <= tree.num_joints; ++i) parents.push_back(tree.parent[static_cast<size_t>(i)]);
  j["parents"] = std::move(parents);
  Json basis = Json::array();
  Json offsets = Json::array();
  for (int i = 1; i <= tree.num_joints; ++i) {
    basis.push_back(detail::matrix_rows(tree.shape_basis[static_cast<size_t>(i)]));
    offsets.push_back(detail::vec(tree.offsets[static_cast<size_t>(i)]));
  }
  j["shape_basis"] = std::move(basis);
  j["offsets"] = std::move(offsets);
  Json kps = Json::array();
  for (const auto& att : tree.attachments) {
    Json kp;
    kp["id"] = att.id;
    kp["body_part"] = att.body_part;
    kp["V"] = detail::matrix_rows(att.V);
    kp["v0"] = detail::vec(att.v0);
    kps.push_back(std::move(kp));
  }
  j["keypoints"] = std::move(kps);
  return j;
}

inline KinematicTree model_from_json(const Json& j) {
  KinematicTree tree;
  tree.num_joints = j.at("num_joints").get<int>();
  tree.num_shape_params = j.at("num_shape_params").get<int>();
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  const auto& parents = j.at("parents");
  if (static_cast<int>(parents.size()) != k + 1) throw Error("parents must have K+1 entries");
  tree.parent.resize(static_cast<size_t>(k) + 1);
  tree.parent[0] = parents.at(0).is_null() ? -1 : parents.at(0).get<int>();
  for (int i = 1; i <= k; ++i) tree.parent[static_cast<size_t>(i)] = parents.at(static_cast<size_t>(i)).get<int>();
  tree.shape_basis.assign(static_cast<size_t>(k) + 1, Eigen::Matrix3Xd::Zero(3, p));
  tree.offsets.assign(static_cast<size_t>(k) + 1, Eigen::Vector3d::Zero());
  const auto& basis = j.at("shape_basis");
  const auto& offsets = j.at("offsets");
  if (static_cast<int>(basis.size()) != k || static_cast<int>(offsets.size()) != k) {
    throw Error("shape_basis/offsets must have K entries");
  }
  for (int i = 1; i <= k; ++i) {
    tree.shape_basis[static_cast<size_t>(i)] =
        detail::matrix_from_rows(basis.at(static_cast<size_t>(i - 1)), 3, p);
    tree.offsets[static_cast<size_t>(i)] =
        detail::vec_from(offsets.at(static_cast<size_t>(i - 1)));
  }
  for (const auto& kp : j.at("keypoints")) {
    KeypointAttachment att;
    att.id = kp.at("id").get<int>();
    att.body_part = kp.at("body_part").get<int>();
    att.V = detail::matrix_from_rows(kp.at("V"), 3, p);
    att.v0 = detail::vec_from(kp.at("v0"));
    tree.attachments.push_back(std::move(att));
  }
  return tree;
}

// --- measurements + priors ---------------------------------------------------

inline const char* to_string(MeasurementKind k) {
  switch (k) {
    case MeasurementKind::Keypoint2D: return "kp2d";
    case MeasurementKind::Keypoint3D: return "kp3d";
    case MeasurementKind::Pof: return "pof";
  }
  return "unknown";
}

inline MeasurementKind measurement_kind_from_string(const std::string& s) {
  if (s == "kp2d") return MeasurementKind::Keypoint2D;
  if (s == "kp3d") return MeasurementKind::Keypoint3D;
  if (s == "pof") return MeasurementKind::Pof;
  throw Error("unknown measurement kind '" + s + "'");
}

inline Json measurements_to_json(const MeasurementSet& set, const ObjectiveConfig& objective) {
  Json j;
  j["camera"] = {{"fx", set.camera.fx}, {"fy", set.camera.fy},
                 {"cx", set.camera.cx}, {"cy", set.camera.cy}};
  Json items = Json::array();
  for (const auto& m : set.items) {
    Json item;
    item["kind"] = to_string(m.kind);
    item["keypoint"] = m.keypoint;
    if (m.kind == MeasurementKind::Keypoint2D) {
      item["value"] = {m.value.x(), m.value.y()};
    } else {
      item["value"] = {m.value.x(), m.value.y(), m.value.z()};
    }
    item["weight"] = m.weight;
    items.push_back(std::move(item));
  }
  j["measurements"] = std::move(items);

  Json priors;
  priors["lambda_3d"] = objective.lambda_3d;
  priors["lambda_pof"] = objective.lambda_pof;
  priors["lambda_pose"] = objective.lambda_pose;
  priors["lambda_joint"] = objective.lambda_joint;
  priors["lambda_shape"] = objective.lambda_shape;
  Json pose = Json::array();
  for (size_t i = 0; i < objective.pose_priors.size(); ++i) {
    if (!objective.pose_priors[i]) continue;
    Json entry;
    entry["part"] = static_cast<int>(i);
    entry["rotation"] = detail::flat9(objective.pose_priors[i]->rotation);
    entry["translation"] = detail::vec(objective.pose_priors[i]->translation);
    pose.push_back(std::move(entry));
  }
  priors["pose"] = std::move(pose);
  Json joint = Json::array();
  for (size_t i = 0; i < objective.joint_priors.size(); ++i) {
    if (!objective.joint_priors[i]) continue;
    Json entry;
    entry["joint"] = static_cast<int>(i);
    entry["mean"] = detail::flat9(objective.joint_priors[i]->mean);
    entry["sqrt_weight"] = detail::flat9(objective.joint_priors[i]->sqrt_weight);
    joint.push_back(std::move(entry));
  }
  priors["joint"] = std::move(joint);
  j["priors"] = std::move(priors);
  return j;
}

struct MeasurementFile {
  MeasurementSet set;
  ObjectiveConfig objective;
};

inline MeasurementFile measurements_from_json(const Json& j, int num_parts) {
  MeasurementFile out;
  const auto& cam = j.at("camera");
  out.set.camera = {cam.at("fx").get<double>(), cam.at("fy").get<double>(),
                    cam.at("cx").get<double>(), cam.at("cy").get<double>()};
  for (const auto& item : j.at("measurements")) {
    Measurement m;
    m.kind = measurement_kind_from_string(item.at("kind").get<std::string>());
    m.keypoint = item.at("keypoint").get<int>();
    const auto& value = item.at("value");
    m.value.setZero();
    for (size_t c = 0; c < value.size() && c < 3; ++c) {
      m.value(static_cast<Eigen::Index>(c)) = value.at(c).get<double>();
    }
    m.weight = item.value("weight", 1.0);
    out.set.items.push_back(m);
  }
  if (j.contains("priors")) {
    const auto& priors = j.at("priors");
    out.objective.lambda_3d = priors.value("lambda_3d", out.objective.lambda_3d);
    out.objective.lambda_pof = priors.value("lambda_pof", out.objective.lambda_pof);
    out.objective.lambda_pose = priors.value("lambda_pose", out.objective.lambda_pose);
    out.objective.lambda_joint = priors.value("lambda_joint", out.objective.lambda_joint);
    out.objective.lambda_shape = priors.value("lambda_shape", out.objective.lambda_shape);
    out.objective.pose_priors.assign(static_cast<size_t>(num_parts), std::nullopt);
    out.objective.joint_priors.assign(static_cast<size_t>(num_parts), std::nullopt);
    if (priors.contains("pose")) {
      for (const auto& entry : priors.at("pose")) {
        const int part = entry.at("part").get<int>();
        out.objective.pose_priors.at(static_cast<size_t>(part)) =
            Pose{detail::mat3_from_flat9(entry.at("rotation")),
                 detail::vec_from(entry.at("translation"))};
      }
    }
    if (priors.contains("joint")) {
      for (const auto& entry : priors.at("joint")) {
        const int part = entry.at("joint").get<int>();
        out.objective.joint_priors.at(static_cast<size_t>(part)) =
            JointPriorSpec{detail::mat3_from_flat9(entry.at("mean")),
                           detail::mat3_from_flat9(entry.at("sqrt_weight"))};
      }
    }
  }
  return out;
}

// --- state, result, report ---------------------------------------------------

inline Json state_to_json(const ModelState& state) {
  Json j;
  j["root"] = {{"rotation", detail::flat9(state.root.rotation)},
               {"translation", detail::vec(state.root.translation)}};
  Json joints = Json::array();
  for (const auto& omega : state.joints) joints.push_back(detail::flat9(omega));
  j["joints"] = std::move(joints);
  j["shape"] = detail::vec(state.shape);
  return j;
}

inline ModelState state_from_json(const Json& j) {
  ModelState state;
  state.root.rotation = detail::mat3_from_flat9(j.at("root").at("rotation"));
  state.root.translation = detail::vec_from(j.at("root").at("translation"));
  for (const auto& omega : j.at("joints")) state.joints.push_back(detail::mat3_from_flat9(omega));
  state.shape = detail::vec_from(j.at("shape"));
  return state;
}

/// Fit output: the state plus the world positions of every keypoint.
inline Json result_to_json(const ModelState& state, const KinematicTree& tree) {
  Json j;
  j["state"] = state_to_json(state);
  const PartStateView view = forward_kinematics(state, tree);
  Json kps = Json::array();
  for (const auto& att : tree.attachments) {
    Json kp;
    kp["id"] = att.id;
    kp["position"] = detail::vec(keypoint_position(view, att, view.beta));
    kps.push_back(std::move(kp));
  }
  j["keypoints"] = std::move(kps);
  return j;
}

inline Json report_to_json(const SolveReport& report) {
  Json j;
  j["iterations"] = report.iterations;
  j["final_objective"] = report.final_objective;
  j["objective_trace"] = report.objective_trace;
  j["direction_time_us"] = report.direction_time_us;
  j["total_time_us"] = report.total_time_us;
  j["skipped"] = {{"behind_camera", report.skipped.behind_camera},
                  {"degenerate_bone", report.skipped.degenerate_bone}};
  j["termination"] = to_string(report.reason);
  return j;
}

// --- files -------------------------------------------------------------------

inline void write_json_file(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  Json j;
  in >> j;
  return j;
}

}  // namespace kinefit
