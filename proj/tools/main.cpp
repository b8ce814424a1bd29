// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// Command line front end: generate synthetic problems, fit them with either
// backend, run the direction-time benchmarks.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kinefit/kinefit.hpp"

namespace {

struct GenArgs {
  int joints = 23;
  int shape_params = 10;
  int measurements = 300;
  double noise_2d = 0.0;
  double noise_3d = 0.0;
  double noise_pof = 0.0;
  std::string topology = "smpl_like_23";
  std::uint64_t seed = 1;
  std::string out_model = "model.json";
  std::string out_meas = "measurements.json";
  std::string out_truth = "truth.json";
};

int run_gen(const GenArgs& args) {
  kinefit::SyntheticSpec spec;
  spec.num_joints = args.joints;
  spec.num_shape_params = args.shape_params;
  spec.num_measurements = args.measurements;
  spec.noise_2d = args.noise_2d;
  spec.noise_3d = args.noise_3d;
  spec.noise_pof = args.noise_pof;
  spec.seed = args.seed;
  spec.topology = kinefit::topology_from_string(args.topology);

  const auto model = kinefit::generate_model(spec);
  const auto validation = kinefit::validate_tree(model.tree);
  if (!validation.ok()) throw kinefit::Error("generated tree invalid: " + validation.detail);
  const auto problem = kinefit::generate_problem(model.tree, spec);

  kinefit::write_json_file(kinefit::model_to_json(model.tree), args.out_model);
  kinefit::write_json_file(kinefit::measurements_to_json(problem.measurements, problem.objective),
                           args.out_meas);
  kinefit::write_json_file(kinefit::result_to_json(problem.truth, model.tree), args.out_truth);
  std::cout << "wrote " << args.out_model << ", " << args.out_meas << ", " << args.out_truth
            << "\n";
  return 0;
}

struct FitArgs {
  std::string model;
  std::string measurements;
  std::string solver = "sparse";
  int max_iters = 50;
  double tol = 1e-8;
  double damping = 1e-4;
  std::string out = "result.json";
  std::string report = "report.json";
  std::string init;  // optional initial state file
};

int run_fit(const FitArgs& args) {
  const kinefit::KinematicTree tree =
      kinefit::model_from_json(kinefit::read_json_file(args.model));
  const auto validation = kinefit::validate_tree(tree);
  if (!validation.ok()) throw kinefit::Error("model file invalid: " + validation.detail);
  const kinefit::MeasurementFile meas = kinefit::measurements_from_json(
      kinefit::read_json_file(args.measurements), tree.num_parts());

  kinefit::ModelState init;
  if (!args.init.empty()) {
    init = kinefit::state_from_json(kinefit::read_json_file(args.init).at("state"));
  } else {
    init.root.translation = Eigen::Vector3d(0.0, 0.0, 3.0);
    init.joints.assign(static_cast<size_t>(tree.num_joints), Eigen::Matrix3d::Identity());
    init.shape = Eigen::VectorXd::Zero(tree.num_shape_params);
  }

  kinefit::SolveConfig cfg;
  cfg.backend = args.solver == "dense" ? kinefit::Backend::Dense : kinefit::Backend::Sparse;
  cfg.max_iters = args.max_iters;
  cfg.gradient_tol = args.tol;
  cfg.initial_damping = args.damping;

  const auto fit = kinefit::optimize(tree, meas.set, init, cfg, meas.objective);
  kinefit::write_json_file(kinefit::result_to_json(fit.state, tree), args.out);
  kinefit::write_json_file(kinefit::report_to_json(fit.report), args.report);
  std::cout << "final objective " << fit.report.final_objective << " after "
            << fit.report.iterations << " iterations (" << to_string(fit.report.reason) << ")\n";
  return 0;
}

struct BenchArgs {
  int experiment = 1;
  int repeats = 10;
  std::string out = "results.csv";
};

int run_bench(const BenchArgs& args) {
  const auto records = kinefit::run_experiment(args.experiment, args.repeats, args.out);
  std::cout << "wrote " << records.size() << " rows to " << args.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"articulated kinematic-tree model fitting"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic model and measurements");
  gen_cmd->add_option("--joints", gen.joints, "number of joints K");
  gen_cmd->add_option("--shape-params", gen.shape_params, "number of shape parameters P");
  gen_cmd->add_option("--measurements", gen.measurements, "number of measurements N");
  gen_cmd->add_option("--noise-2d", gen.noise_2d, "2D keypoint noise (pixels)");
  gen_cmd->add_option("--noise-3d", gen.noise_3d, "3D keypoint noise (length units)");
  gen_cmd->add_option("--noise-pof", gen.noise_pof, "orientation noise (radians)");
  gen_cmd->add_option("--topology", gen.topology,
                      "smpl_like_23 | smplh_like_51 | chain | random_tree");
  gen_cmd->add_option("--seed", gen.seed, "random seed");
  gen_cmd->add_option("--out-model", gen.out_model, "model output path");
  gen_cmd->add_option("--out-meas", gen.out_meas, "measurement output path");
  gen_cmd->add_option("--out-truth", gen.out_truth, "ground-truth output path");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model to measurements");
  fit_cmd->add_option("--model", fit.model, "model file")->required();
  fit_cmd->add_option("--measurements", fit.measurements, "measurement file")->required();
  fit_cmd->add_option("--solver", fit.solver, "sparse | dense")
      ->check(CLI::IsMember({"sparse", "dense"}));
  fit_cmd->add_option("--max-iters", fit.max_iters, "iteration budget");
  fit_cmd->add_option("--tol", fit.tol, "gradient tolerance");
  fit_cmd->add_option("--damping", fit.damping, "initial damping");
  fit_cmd->add_option("--init", fit.init, "optional initial state file (result schema)");
  fit_cmd->add_option("--out", fit.out, "fitted result output path");
  fit_cmd->add_option("--report", fit.report, "solver report output path");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "run a direction-time experiment");
  bench_cmd->add_option("--experiment", bench.experiment, "experiment id (1, 2 or 3)")
      ->check(CLI::Range(1, 3));
  bench_cmd->add_option("--repeats", bench.repeats, "timing repeats per cell");
  bench_cmd->add_option("--out", bench.out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen);
    if (fit_cmd->parsed()) return run_fit(fit);
    if (bench_cmd->parsed()) return run_bench(bench);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
