// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// Outer damped Gauss-Newton loop over either direction backend.

#pragma once

#include <chrono>
#include <cmath>
#include <vector>

#include "kinefit/solver_dense.hpp"
#include "kinefit/solver_sparse.hpp"

namespace kinefit {

enum class Backend { Sparse, Dense };

enum class TerminationReason { GradientTol, StepTol, MaxIters, Stalled };

inline const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::GradientTol: return "gradient_tol";
    case TerminationReason::StepTol: return "step_tol";
    case TerminationReason::MaxIters: return "max_iters";
    case TerminationReason::Stalled: return "stalled";
  }
  return "unknown";
}

struct SolveConfig {
  Backend backend = Backend::Sparse;
  int max_iters = 50;
  double gradient_tol = 1e-8;
  double step_tol = 1e-10;
  double initial_damping = 1e-4;
  double damping_increase = 10.0;
  double damping_decrease = 0.5;
  double damping_ceiling = 1e6;
  double accept_ratio = 1e-4;  // required actual/predicted decrease
};

struct SolveReport {
  int iterations = 0;
  double final_objective = 0.0;
  std::vector<double> objective_trace;    // objective at init and after each accepted step
  std::vector<double> direction_time_us;  // per outer iteration (all damping attempts)
  double total_time_us = 0.0;
  SkipCounts skipped;                     // at the final linearization
  TerminationReason reason = TerminationReason::MaxIters;
};

/// Retraction update of the unconstrained state from a direction in
/// [root twist; joint rotation deltas; shape delta] coordinates.
inline ModelState apply_unconstrained(const ModelState& state, const Eigen::VectorXd& dx) {
  const int k = static_cast<int>(state.joints.size());
  ModelState out = state;
  out.root = pose_retract(state.root, dx.head<6>());
  for (int i = 1; i <= k; ++i) {
    out.joint(i) = rotation_retract(state.joint(i), dx.segment<3>(6 + 3 * (i - 1)));
  }
  out.shape += dx.tail(state.shape.size());
  return out;
}

inline ModelState apply_direction(const ModelState& state, const SparseDirection& dir,
                                  const KinematicTree& tree) {
  return apply_unconstrained(state,
                             dir.to_unconstrained(tree.num_joints, tree.num_shape_params));
}

inline ModelState apply_direction(const ModelState& state, const DenseDirection& dir,
                                  const KinematicTree& /*tree*/) {
  return apply_unconstrained(state, dir.dx);
}

struct FitResult {
  ModelState state;
  SolveReport report;
};

/// Damped Gauss-Newton with step acceptance against the predicted decrease.
/// A step is accepted when the objective drops by at least
/// accept_ratio * |predicted decrease|; otherwise damping escalates and the
/// direction is recomputed at the same linearization point.
inline FitResult optimize(const KinematicTree& tree, const MeasurementSet& measurements,
                          const ModelState& init, const SolveConfig& cfg,
                          const ObjectiveConfig& objective) {
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  const int k = tree.num_joints;
  const int p = tree.num_shape_params;
  const ProblemLayout layout = build_layout(tree, measurements.items);

  FitResult result;
  result.state = init;
  SolveReport& report = result.report;

  auto evaluate = [&](const ModelState& s, SkipCounts& skips) {
    const PartStateView view = forward_kinematics(s, tree);
    return assemble_all_blocks(view, tree, layout, measurements, objective, skips);
  };

  SkipCounts skips;
  std::vector<ResidualBlock> blocks = evaluate(result.state, skips);
  double current_objective = objective_value(blocks);
  if (!std::isfinite(current_objective)) throw NonFiniteObjective();
  report.objective_trace.push_back(current_objective);
  report.skipped = skips;

  double damping = cfg.initial_damping;
  std::vector<ConstraintDerivatives> cds(static_cast<size_t>(k) + 1);
  bool done = false;

  while (!done && report.iterations < cfg.max_iters) {
    const PartStateView view = forward_kinematics(result.state, tree);
    for (int i = 1; i <= k; ++i) cds[static_cast<size_t>(i)] = constraint_derivatives(view, tree, i);
    const auto quads = build_node_quadratics(blocks, p);

    const Eigen::VectorXd grad = unconstrained_gradient(quads, cds, tree);
    if (grad.norm() <= cfg.gradient_tol) {
      report.reason = TerminationReason::GradientTol;
      break;
    }

    // System pieces that do not depend on damping stay fixed while the
    // damping escalates within this iteration.
    DenseSystem dense_sys;
    if (cfg.backend == Backend::Dense) {
      const auto sens = propagate_chain_rule(tree, cds);
      dense_sys = assemble_dense(blocks, sens, tree);
    }

    ++report.iterations;
    double direction_us = 0.0;
    bool first_attempt = true;
    while (true) {
      const auto t0 = Clock::now();
      Eigen::VectorXd dx;
      double predicted = 0.0;
      if (cfg.backend == Backend::Sparse) {
        auto sweep = backward_sweep(quads, cds, tree, damping);
        auto [dx0, decrease] = root_solve(sweep.root_mat, sweep.root_vec, sweep.children_decrease);
        const SparseDirection dir = forward_sweep(dx0, decrease, sweep.gains, cds, tree);
        dx = dir.to_unconstrained(k, p);
        predicted = dir.predicted_decrease;
      } else {
        const DenseDirection dir = solve_dense(dense_sys, damping);
        dx = dir.dx;
        predicted = dir.predicted_decrease;
      }
      direction_us += std::chrono::duration<double, std::micro>(Clock::now() - t0).count();

      if (first_attempt && dx.norm() <= cfg.step_tol) {
        report.reason = TerminationReason::StepTol;
        done = true;
        break;
      }
      first_attempt = false;

      const ModelState candidate = apply_unconstrained(result.state, dx);
      SkipCounts cand_skips;
      std::vector<ResidualBlock> cand_blocks = evaluate(candidate, cand_skips);
      const double cand_objective = objective_value(cand_blocks);
      const bool finite = std::isfinite(cand_objective);
      if (finite && current_objective - cand_objective >= cfg.accept_ratio * (-predicted)) {
        result.state = candidate;
        blocks = std::move(cand_blocks);
        current_objective = cand_objective;
        report.skipped = cand_skips;
        report.objective_trace.push_back(current_objective);
        damping *= cfg.damping_decrease;
        break;
      }
      damping = damping > 0.0 ? damping * cfg.damping_increase : 1e-8;
      if (damping > cfg.damping_ceiling) {
        report.reason = TerminationReason::Stalled;
        done = true;
        break;
      }
    }
    report.direction_time_us.push_back(direction_us);
  }

  report.final_objective = current_objective;
  report.total_time_us =
      std::chrono::duration<double, std::micro>(Clock::now() - t_start).count();
  return result;
}

}  // namespace kinefit
