// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// Direction-time benchmarks: how long one Gauss-Newton direction takes for
// each backend as joints, measurements and shape parameters vary.
//
// Methodology: every cell is warmed up, then samples are taken interleaved
// round-robin across all cells of an experiment so slow drifts in machine
// state (frequency scaling, cache pressure) hit every cell alike. Calls
// cheaper than ~200 us are timed in bursts to stay above timer noise. The
// reported statistic is the per-call median over >= 10 samples.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#ifdef __linux__
#include <sched.h>
#endif

#include "kinefit/optimizer.hpp"
#include "kinefit/synthetic.hpp"

namespace kinefit {

struct BenchRecord {
  int experiment = 0;
  std::string model;
  int num_joints = 0;
  int num_shape_params = 0;
  int num_measurements = 0;
  std::string backend;
  double time_us = 0.0;  // median over repeats (CSV column mean_us)
  double std_us = 0.0;
  int repeats = 0;
};

inline constexpr char kBenchCsvHeader[] = "experiment,model,K,P,N,backend,mean_us,std_us,repeats";

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double stddev(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

inline void pin_to_one_cpu() {
#ifdef __linux__
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(0, &set);
  sched_setaffinity(0, sizeof(set), &set);  // best effort; failures are fine
#endif
}

struct BenchProblem {
  KinematicTree tree;
  SyntheticProblem problem;
  PartStateView view;
  ProblemLayout layout;
};

inline BenchProblem make_bench_problem(Topology topology, int p, int n, uint64_t seed) {
  SyntheticSpec spec;
  spec.topology = topology;
  spec.num_joints = topology == Topology::SmplhLike51 ? 51 : 23;
  spec.num_shape_params = p;
  spec.num_measurements = n;
  spec.seed = seed;
  BenchProblem bp;
  bp.tree = generate_model(spec).tree;
  bp.problem = generate_problem(bp.tree, spec);
  // Linearize away from the optimum so the direction is nontrivial.
  Rng rng(seed, 2);
  const ModelState state = perturb_joints(bp.problem.truth, 0.2, rng);
  bp.view = forward_kinematics(state, bp.tree);
  bp.layout = build_layout(bp.tree, bp.problem.measurements.items);
  return bp;
}

/// Experiment 3 assigns one 2D keypoint, one 3D keypoint and one part
/// orientation field to every joint.
inline void assign_per_joint_triplets(BenchProblem& bp, uint64_t seed) {
  SyntheticSpec noiseless;  // zero noise levels; only used by render_measurement
  Rng rng(seed, 3);
  const PartStateView truth_view = forward_kinematics(bp.problem.truth, bp.tree);
  bp.problem.measurements.items.clear();
  for (int i = 1; i <= bp.tree.num_joints; ++i) {
    for (const auto kind :
         {MeasurementKind::Keypoint2D, MeasurementKind::Keypoint3D, MeasurementKind::Pof}) {
      bp.problem.measurements.items.push_back(render_measurement(
          truth_view, bp.tree, bp.problem.measurements.camera, kind, i, noiseless, rng));
    }
  }
  bp.layout = build_layout(bp.tree, bp.problem.measurements.items);
}

struct BenchCell {
  BenchProblem bp;
  Backend backend = Backend::Sparse;
  std::unique_ptr<SparseSolver> sparse;
  std::unique_ptr<DenseSolver> dense;
  BenchRecord record;
  int burst = 1;
  std::vector<double> samples;

  void run_once() {
    if (backend == Backend::Sparse) {
      sparse->compute(bp.view, bp.layout, bp.problem.measurements, bp.problem.objective, 0.0);
    } else {
      dense->compute(bp.view, bp.layout, bp.problem.measurements, bp.problem.objective, 0.0);
    }
  }
};

}  // namespace detail

/// Experiments 1 and 2: N from 120 to 600 at P = 0 / P = 10; Experiment 3:
/// P from 0 to 10 with one 2D+3D+POF triplet per joint. Both models, both
/// backends; each timed call runs alone on one thread.
inline std::vector<BenchRecord> run_experiment(int id, int repeats) {
  using Clock = std::chrono::steady_clock;
  if (id < 1 || id > 3) throw Error("experiment id must be 1, 2 or 3");
  repeats = std::max(repeats, 10);
  detail::pin_to_one_cpu();

  std::vector<std::unique_ptr<detail::BenchCell>> cells;
  const Topology models[] = {Topology::SmplLike23, Topology::SmplhLike51};
  const auto add_cell = [&](Topology model, int p, int n, Backend backend,
                            bool per_joint_triplets) {
    auto cell = std::make_unique<detail::BenchCell>();
    cell->bp = detail::make_bench_problem(model, p, per_joint_triplets ? 0 : n,
                                          42 + static_cast<uint64_t>(id));
    if (per_joint_triplets) detail::assign_per_joint_triplets(cell->bp, 42 + static_cast<uint64_t>(id));
    cell->backend = backend;
    if (backend == Backend::Sparse) {
      cell->sparse = std::make_unique<SparseSolver>(cell->bp.tree);
    } else {
      cell->dense = std::make_unique<DenseSolver>(cell->bp.tree);
    }
    cell->record.experiment = id;
    cell->record.model = to_string(model);
    cell->record.num_joints = cell->bp.tree.num_joints;
    cell->record.num_shape_params = p;
    cell->record.num_measurements = static_cast<int>(cell->bp.problem.measurements.items.size());
    cell->record.backend = backend == Backend::Sparse ? "sparse" : "dense";
    cell->record.repeats = repeats;
    cells.push_back(std::move(cell));
  };

  if (id == 1 || id == 2) {
    const int p = id == 1 ? 0 : 10;
    for (const Topology model : models) {
      for (const int n : {120, 240, 360, 480, 600}) {
        for (const Backend backend : {Backend::Sparse, Backend::Dense}) {
          add_cell(model, p, n, backend, false);
        }
      }
    }
  } else {
    for (const Topology model : models) {
      for (int p = 0; p <= 10; ++p) {
        for (const Backend backend : {Backend::Sparse, Backend::Dense}) {
          add_cell(model, p, 0, backend, true);
        }
      }
    }
  }

  // Warm-up and burst calibration per cell.
  for (auto& cell : cells) {
    for (int i = 0; i < 3; ++i) cell->run_once();
    const auto t0 = Clock::now();
    cell->run_once();
    const double probe_us =
        std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
    cell->burst = std::clamp(static_cast<int>(200.0 / std::max(probe_us, 1.0)), 1, 64);
    cell->samples.reserve(static_cast<size_t>(repeats));
  }

  // Interleaved sampling: one sample per cell per pass.
  for (int rep = 0; rep < repeats; ++rep) {
    for (auto& cell : cells) {
      const auto t0 = Clock::now();
      for (int b = 0; b < cell->burst; ++b) cell->run_once();
      cell->samples.push_back(
          std::chrono::duration<double, std::micro>(Clock::now() - t0).count() / cell->burst);
    }
  }

  std::vector<BenchRecord> records;
  records.reserve(cells.size());
  for (auto& cell : cells) {
    cell->record.time_us = detail::median(cell->samples);
    cell->record.std_us = detail::stddev(cell->samples);
    records.push_back(cell->record);
  }
  return records;
}

inline void write_bench_csv(const std::vector<BenchRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << kBenchCsvHeader << "\n";
  for (const auto& r : records) {
    out << r.experiment << ',' << r.model << ',' << r.num_joints << ',' << r.num_shape_params
        << ',' << r.num_measurements << ',' << r.backend << ',' << r.time_us << ',' << r.std_us
        << ',' << r.repeats << "\n";
  }
}

inline std::vector<BenchRecord> run_experiment(int id, int repeats, const std::string& out_path) {
  auto records = run_experiment(id, repeats);
  write_bench_csv(records, out_path);
  return records;
}

}  // namespace kinefit
