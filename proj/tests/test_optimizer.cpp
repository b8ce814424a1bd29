// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT

#include <catch2/catch_amalgamated.hpp>

#include "kinefit/optimizer.hpp"
#include "kinefit/synthetic.hpp"
#include "test_helpers.hpp"

using namespace kinefit;
using kinefit::testing::TestRng;

namespace {

struct Problem {
  KinematicTree tree;
  SyntheticProblem synth;
};

Problem make_problem(int n, uint64_t seed, int k = 23, int p = 10,
                     Topology topology = Topology::SmplLike23) {
  SyntheticSpec spec;
  spec.topology = topology;
  spec.num_joints = k;
  spec.num_shape_params = p;
  spec.num_measurements = n;
  spec.seed = seed;
  Problem out;
  out.tree = generate_model(spec).tree;
  out.synth = generate_problem(out.tree, spec);
  return out;
}

double state_gap(const ModelState& a, const ModelState& b) {
  double gap = (a.root.matrix() - b.root.matrix()).lpNorm<Eigen::Infinity>();
  for (size_t i = 0; i < a.joints.size(); ++i) {
    gap = std::max(gap, (a.joints[i] - b.joints[i]).lpNorm<Eigen::Infinity>());
  }
  gap = std::max(gap, (a.shape - b.shape).lpNorm<Eigen::Infinity>());
  return gap;
}

}  // namespace

TEST_CASE("apply_direction") {
  TestRng rng(91);
  Problem prob = make_problem(60, 901);
  const ModelState state = kinefit::testing::random_state(prob.tree, rng);

  SECTION("zero direction leaves the state unchanged") {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6 + 3 * 23 + 10);
    const ModelState next = apply_unconstrained(state, zero);
    CHECK((next.shape - state.shape).norm() == 0.0);  // bitwise for beta
    CHECK((next.root.matrix() - state.root.matrix()).lpNorm<Eigen::Infinity>() < 1e-15);
    for (int i = 1; i <= 23; ++i) {
      CHECK((next.joint(i) - state.joint(i)).lpNorm<Eigen::Infinity>() < 1e-15);
    }
  }

  SECTION("pure shape step changes only the shape") {
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(6 + 3 * 23 + 10);
    dx.tail(10) = rng.uniform_vector(10, -0.5, 0.5);
    const ModelState next = apply_unconstrained(state, dx);
    CHECK((next.shape - (state.shape + dx.tail(10))).norm() == 0.0);
    CHECK((next.root.matrix() - state.root.matrix()).lpNorm<Eigen::Infinity>() < 1e-15);
    for (int i = 1; i <= 23; ++i) {
      CHECK((next.joint(i) - state.joint(i)).lpNorm<Eigen::Infinity>() == 0.0);
    }
  }

  SECTION("sparse and dense directions give the same successor state") {
    const PartStateView view = forward_kinematics(state, prob.tree);
    const ProblemLayout layout = build_layout(prob.tree, prob.synth.measurements.items);
    SparseSolver sparse(prob.tree);
    DenseSolver dense(prob.tree);
    const auto s = sparse.compute(view, layout, prob.synth.measurements, prob.synth.objective, 0.0);
    const auto d = dense.compute(view, layout, prob.synth.measurements, prob.synth.objective, 0.0);
    const ModelState next_s = apply_direction(state, s, prob.tree);
    const ModelState next_d = apply_direction(state, d, prob.tree);
    CHECK(state_gap(next_s, next_d) < 1e-8);
  }
}

TEST_CASE("optimize terminates immediately at the optimum") {
  Problem prob = make_problem(120, 902);
  SolveConfig cfg;
  const auto fit = optimize(prob.tree, prob.synth.measurements, prob.synth.truth, cfg,
                            prob.synth.objective);
  CHECK(fit.report.iterations <= 2);
  CHECK(fit.report.reason == TerminationReason::GradientTol);
  CHECK(fit.report.final_objective < 1e-18);
}

TEST_CASE("optimize recovers a noiseless synthetic problem from a jittered start") {
  Problem prob = make_problem(300, 903);
  Rng rng(903, 9);
  const ModelState init = perturb_joints(prob.synth.truth, 0.3, rng);

  SolveConfig cfg;
  cfg.backend = Backend::Sparse;
  const auto fit = optimize(prob.tree, prob.synth.measurements, init, cfg, prob.synth.objective);
  INFO("iterations = " << fit.report.iterations
                       << ", objective = " << fit.report.final_objective);
  CHECK(fit.report.final_objective <= 1e-10);
  CHECK(fit.report.iterations <= 50);
}

TEST_CASE("accepted steps strictly decrease the objective") {
  Problem prob = make_problem(200, 904);
  Rng rng(904, 9);
  const ModelState init = perturb_joints(prob.synth.truth, 0.25, rng);
  SolveConfig cfg;
  const auto fit = optimize(prob.tree, prob.synth.measurements, init, cfg, prob.synth.objective);
  REQUIRE(fit.report.objective_trace.size() >= 2);
  for (size_t i = 1; i < fit.report.objective_trace.size(); ++i) {
    CHECK(fit.report.objective_trace[i] < fit.report.objective_trace[i - 1]);
  }
  CHECK(fit.report.final_objective == fit.report.objective_trace.back());
}

TEST_CASE("dense and sparse backends walk the same trajectory at zero damping") {
  Problem prob = make_problem(240, 905);
  Rng rng(905, 9);
  const ModelState init = perturb_joints(prob.synth.truth, 0.2, rng);

  SolveConfig cfg;
  cfg.initial_damping = 0.0;
  cfg.max_iters = 12;
  cfg.backend = Backend::Sparse;
  const auto fit_s = optimize(prob.tree, prob.synth.measurements, init, cfg, prob.synth.objective);
  cfg.backend = Backend::Dense;
  const auto fit_d = optimize(prob.tree, prob.synth.measurements, init, cfg, prob.synth.objective);

  CHECK(fit_s.report.reason == fit_d.report.reason);
  REQUIRE(fit_s.report.objective_trace.size() == fit_d.report.objective_trace.size());
  for (size_t i = 0; i < fit_s.report.objective_trace.size(); ++i) {
    const double a = fit_s.report.objective_trace[i];
    const double b = fit_d.report.objective_trace[i];
    CHECK(std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(b)));
  }
  CHECK(state_gap(fit_s.state, fit_d.state) < 1e-6);
}

TEST_CASE("optimize is deterministic") {
  Problem prob = make_problem(150, 906);
  Rng rng(906, 9);
  const ModelState init = perturb_joints(prob.synth.truth, 0.3, rng);
  SolveConfig cfg;
  const auto fit_a = optimize(prob.tree, prob.synth.measurements, init, cfg, prob.synth.objective);
  const auto fit_b = optimize(prob.tree, prob.synth.measurements, init, cfg, prob.synth.objective);
  REQUIRE(fit_a.report.objective_trace.size() == fit_b.report.objective_trace.size());
  for (size_t i = 0; i < fit_a.report.objective_trace.size(); ++i) {
    CHECK(fit_a.report.objective_trace[i] == fit_b.report.objective_trace[i]);
  }
  CHECK(state_gap(fit_a.state, fit_b.state) == 0.0);
}

TEST_CASE("non-finite measurements are reported") {
  Problem prob = make_problem(60, 907);
  prob.synth.measurements.items[3].value(0) = std::numeric_limits<double>::quiet_NaN();
  SolveConfig cfg;
  CHECK_THROWS_AS(
      optimize(prob.tree, prob.synth.measurements, prob.synth.truth, cfg, prob.synth.objective),
      NonFiniteObjective);
}

TEST_CASE("solve report carries per-iteration timings and skip counts") {
  Problem prob = make_problem(90, 908);
  Rng rng(908, 9);
  const ModelState init = perturb_joints(prob.synth.truth, 0.2, rng);
  SolveConfig cfg;
  const auto fit = optimize(prob.tree, prob.synth.measurements, init, cfg, prob.synth.objective);
  CHECK(fit.report.direction_time_us.size() == static_cast<size_t>(fit.report.iterations));
  for (double t : fit.report.direction_time_us) CHECK(t > 0.0);
  CHECK(fit.report.total_time_us > 0.0);
  CHECK(fit.report.skipped.total() == 0);
}
