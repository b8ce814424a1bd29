// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "kinefit/kinefit.hpp"
#include "test_helpers.hpp"

using namespace kinefit;

TEST_CASE("generate_model is deterministic") {
  SyntheticSpec spec;
  spec.num_joints = 23;
  spec.num_shape_params = 10;
  spec.seed = 7;
  const auto a = generate_model(spec);
  const auto b = generate_model(spec);
  CHECK(model_to_json(a.tree).dump() == model_to_json(b.tree).dump());
}

TEST_CASE("chain topology builds the expected parent array") {
  SyntheticSpec spec;
  spec.topology = Topology::Chain;
  spec.num_joints = 3;
  spec.num_shape_params = 0;
  const auto model = generate_model(spec);
  CHECK(model.tree.parent == std::vector<int>{-1, 0, 1, 2});
}

TEST_CASE("every generated model validates") {
  for (const auto& [topology, k] :
       std::vector<std::pair<Topology, int>>{{Topology::SmplLike23, 23},
                                             {Topology::SmplhLike51, 51},
                                             {Topology::Chain, 7},
                                             {Topology::RandomTree, 12}}) {
    SyntheticSpec spec;
    spec.topology = topology;
    spec.num_joints = k;
    spec.num_shape_params = 6;
    spec.seed = 5;
    const auto model = generate_model(spec);
    const auto validation = validate_tree(model.tree);
    INFO(to_string(topology) << ": " << validation.detail);
    CHECK(validation.ok());
    CHECK(model.tree.num_joints == k);

    // Bone lengths and regressor entries stay inside the documented ranges.
    for (int i = 1; i <= k; ++i) {
      const double bone = model.tree.offsets[static_cast<size_t>(i)].norm();
      CHECK(bone >= 0.05);
      CHECK(bone <= 0.5);
      CHECK(model.regressor.regressor[static_cast<size_t>(i)].lpNorm<Eigen::Infinity>() <= 0.05);
    }
  }
}

TEST_CASE("smpl-like topologies have the documented joint counts") {
  CHECK(smpl_parents().size() == 24);
  CHECK(smplh_parents().size() == 52);
  for (size_t i = 1; i < smplh_parents().size(); ++i) {
    CHECK(smplh_parents()[i] < static_cast<int>(i));
  }
}

TEST_CASE("generate_problem renders an exact zero-objective ground truth") {
  SyntheticSpec spec;
  spec.num_joints = 23;
  spec.num_shape_params = 10;
  spec.num_measurements = 240;
  spec.seed = 11;
  const auto model = generate_model(spec);
  const auto problem = generate_problem(model.tree, spec);
  CHECK(problem.measurements.items.size() == 240);

  const PartStateView view = forward_kinematics(problem.truth, model.tree);
  const ProblemLayout layout = build_layout(model.tree, problem.measurements.items);
  SkipCounts skips;
  const auto blocks =
      assemble_all_blocks(view, model.tree, layout, problem.measurements, problem.objective, skips);
  CHECK(objective_value(blocks) < 1e-20);
  CHECK(skips.total() == 0);
}

TEST_CASE("measurements are spread round-robin over parts and kinds") {
  SyntheticSpec spec;
  spec.num_joints = 5;
  spec.num_shape_params = 2;
  spec.num_measurements = 40;
  spec.seed = 3;
  spec.topology = Topology::Chain;
  const auto model = generate_model(spec);
  const auto problem = generate_problem(model.tree, spec);
  REQUIRE(problem.measurements.items.size() == 40);

  std::map<int, int> per_part;
  std::map<MeasurementKind, int> per_kind;
  for (const auto& m : problem.measurements.items) {
    per_part[m.keypoint]++;
    per_kind[m.kind]++;
  }
  int lo_part = 1 << 30, hi_part = 0;
  for (const auto& [part, count] : per_part) {
    lo_part = std::min(lo_part, count);
    hi_part = std::max(hi_part, count);
  }
  CHECK(per_part.size() == 6);
  CHECK(hi_part - lo_part <= 1);
  int lo_kind = 1 << 30, hi_kind = 0;
  for (const auto& [kind, count] : per_kind) {
    lo_kind = std::min(lo_kind, count);
    hi_kind = std::max(hi_kind, count);
  }
  CHECK(per_kind.size() == 3);
  CHECK(hi_kind - lo_kind <= static_cast<int>(per_part.size()));
}

TEST_CASE("3D noise has the expected chi-square scale") {
  SyntheticSpec spec;
  spec.num_joints = 23;
  spec.num_shape_params = 0;
  spec.num_measurements = 3600;  // ~1200 of them 3D keypoints
  spec.noise_3d = 0.05;
  spec.seed = 13;
  const auto model = generate_model(spec);
  const auto problem = generate_problem(model.tree, spec);
  const PartStateView view = forward_kinematics(problem.truth, model.tree);

  double sum = 0.0;
  int count = 0;
  for (const auto& m : problem.measurements.items) {
    if (m.kind != MeasurementKind::Keypoint3D) continue;
    const Eigen::Vector3d truth =
        keypoint_position(view, find_attachment(model.tree, m.keypoint), view.beta);
    sum += (m.value - truth).squaredNorm();
    ++count;
  }
  REQUIRE(count >= 1000);
  const double mean = sum / count;
  const double expected = 3.0 * spec.noise_3d * spec.noise_3d;
  CHECK(mean > 0.8 * expected);
  CHECK(mean < 1.2 * expected);
}

TEST_CASE("pof noise keeps measurements on the unit sphere") {
  SyntheticSpec spec;
  spec.num_joints = 5;
  spec.num_shape_params = 0;
  spec.num_measurements = 90;
  spec.noise_pof = 0.1;
  spec.seed = 17;
  spec.topology = Topology::Chain;
  const auto model = generate_model(spec);
  const auto problem = generate_problem(model.tree, spec);
  for (const auto& m : problem.measurements.items) {
    if (m.kind == MeasurementKind::Pof) CHECK(std::abs(m.value.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("model JSON round trip is lossless") {
  SyntheticSpec spec;
  spec.num_joints = 23;
  spec.num_shape_params = 10;
  spec.seed = 23;
  const auto model = generate_model(spec);
  const Json j1 = model_to_json(model.tree);
  const KinematicTree restored = model_from_json(j1);
  const Json j2 = model_to_json(restored);
  CHECK(j1 == j2);
  CHECK(validate_tree(restored).ok());
}

TEST_CASE("measurement and state JSON round trips are lossless") {
  SyntheticSpec spec;
  spec.num_joints = 7;
  spec.num_shape_params = 3;
  spec.num_measurements = 33;
  spec.noise_2d = 1.0;
  spec.noise_3d = 0.01;
  spec.noise_pof = 0.05;
  spec.seed = 29;
  spec.topology = Topology::RandomTree;
  const auto model = generate_model(spec);
  const auto problem = generate_problem(model.tree, spec);

  const Json j1 = measurements_to_json(problem.measurements, problem.objective);
  const MeasurementFile restored = measurements_from_json(j1, model.tree.num_parts());
  const Json j2 = measurements_to_json(restored.set, restored.objective);
  CHECK(j1 == j2);

  const Json s1 = state_to_json(problem.truth);
  const Json s2 = state_to_json(state_from_json(s1));
  CHECK(s1 == s2);
}

TEST_CASE("bench rows have the documented grid structure") {
  // Structure only: repeats at the minimum so this stays quick.
  const auto records = run_experiment(1, 10);
  CHECK(records.size() == 20);  // 2 models x 5 N values x 2 backends
  int sparse_rows = 0, dense_rows = 0;
  for (const auto& r : records) {
    CHECK(r.experiment == 1);
    CHECK(r.num_shape_params == 0);
    CHECK(r.repeats >= 10);
    CHECK(r.time_us > 0.0);
    (r.backend == "sparse" ? sparse_rows : dense_rows)++;
  }
  CHECK(sparse_rows == 10);
  CHECK(dense_rows == 10);

  const std::string path = "/tmp/kinefit_test_bench.csv";
  write_bench_csv(records, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == std::string(kBenchCsvHeader));
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 20);
  std::remove(path.c_str());
}

TEST_CASE("experiment 3 assigns one triplet per joint") {
  const auto records = run_experiment(3, 10);
  CHECK(records.size() == 44);  // 2 models x 11 P values x 2 backends
  for (const auto& r : records) {
    CHECK(r.num_measurements == 3 * r.num_joints);
  }
}

#ifdef KINEFIT_CLI_PATH
namespace {
int run_cli(const std::string& args) {
  const std::string cmd = std::string(KINEFIT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}
}  // namespace

TEST_CASE("cli exit codes") {
  CHECK(run_cli("definitely-not-a-subcommand") == 1);
  CHECK(run_cli("fit") == 1);                       // missing required options
  CHECK(run_cli("fit --model /nonexistent.json --measurements /nonexistent.json") == 2);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("gen --joints 3 --topology chain --shape-params 2 --measurements 12 "
                "--out-model /tmp/kinefit_cli_m.json --out-meas /tmp/kinefit_cli_d.json "
                "--out-truth /tmp/kinefit_cli_t.json") == 0);
  CHECK(run_cli("fit --model /tmp/kinefit_cli_m.json --measurements /tmp/kinefit_cli_d.json "
                "--solver sparse --out /tmp/kinefit_cli_r.json --report /tmp/kinefit_cli_rep.json") == 0);
}
#endif
