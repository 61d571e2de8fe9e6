// Copyright 2026 The sparsesfm Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sparsesfm/ba.hpp"
#include "sparsesfm/gp.hpp"
#include "sparsesfm/io.hpp"
#include "sparsesfm/lm.hpp"
#include "sparsesfm/synth.hpp"

namespace sparsesfm {

struct BenchConfig {
  std::vector<int> cameras = {25, 50};
  int points = 2000;
  double visibility = 1.0;
  std::vector<LinearSolverType> solvers = {LinearSolverType::kSchurPcg,
                                           LinearSolverType::kDense};
  double pixel_noise_sigma = 1.0;
  std::uint64_t seed = 0;
  // Any of "gp", "ba"; run in that order.
  std::vector<std::string> stages = {"gp", "ba"};
  LMConfig lm;
};

struct BenchRow {
  int cameras = 0;
  int points = 0;
  int observations = 0;
  LinearSolverType solver = LinearSolverType::kSchurPcg;
  std::string stage;
  int iterations = 0;
  std::int64_t wall_time_ns = 0;
  // Mean wall time of one LM iteration; 0 when no iteration ran.
  std::int64_t per_iteration_ns = 0;
  double final_cost = 0.0;
  std::string termination;
};

inline constexpr const char* kBenchCsvHeader =
    "cameras,points,observations,solver,stage,iterations,wall_time_ns,"
    "per_iteration_ns,final_cost,termination";

inline std::string FormatBenchRow(const BenchRow& r) {
  return std::to_string(r.cameras) + ',' + std::to_string(r.points) + ',' +
         std::to_string(r.observations) + ',' + std::string(LinearSolverName(r.solver)) + ',' +
         r.stage + ',' + std::to_string(r.iterations) + ',' + std::to_string(r.wall_time_ns) +
         ',' + std::to_string(r.per_iteration_ns) + ',' +
         io_internal::FormatDouble(r.final_cost) + ',' + r.termination;
}

inline std::string FormatBenchCsv(const std::vector<BenchRow>& rows) {
  std::string out = std::string(kBenchCsvHeader) + '\n';
  for (const auto& r : rows) out += FormatBenchRow(r) + '\n';
  return out;
}

/// The instances a bench cell runs on: GP starts from ground-truth rotations
/// and a random init, BA starts from a perturbed ground truth.
struct BenchInstance {
  SynthScene synth;
  Scene ba_init;
};

inline BenchInstance MakeBenchInstance(int cameras, int points, double visibility,
                                       double sigma, std::uint64_t seed) {
  SynthConfig sc;
  sc.num_cameras = cameras;
  sc.num_points = points;
  sc.visibility_fraction = visibility;
  sc.pixel_noise_sigma = sigma;
  sc.seed = seed;
  BenchInstance inst;
  inst.synth = Generate(sc);
  Perturbation p;
  p.rotation_deg = 2.0;
  p.center_fraction = 0.02;
  p.focal_fraction = 0.05;
  p.seed = seed + 1;
  inst.ba_init = Perturb(inst.synth.observed, p);
  return inst;
}

/// Runs every (size, solver, stage) cell; `on_row` sees each row as soon as it
/// is complete. Failures become rows whose termination names the error.
template <typename OnRow>
std::vector<BenchRow> RunBench(const BenchConfig& config, OnRow&& on_row) {
  std::vector<BenchRow> rows;
  for (int C : config.cameras) {
    const BenchInstance inst =
        MakeBenchInstance(C, config.points, config.visibility, config.pixel_noise_sigma,
                          config.seed);
    for (LinearSolverType solver : config.solvers) {
      LMConfig lm = config.lm;
      lm.solver = solver;
      SolverWorkspace workspace;
      for (const char* stage : {"gp", "ba"}) {
        if (std::find(config.stages.begin(), config.stages.end(), stage) ==
            config.stages.end()) {
          continue;
        }
        BenchRow row;
        row.cameras = C;
        row.points = config.points;
        row.observations = inst.synth.observed.num_observations();
        row.solver = solver;
        row.stage = stage;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          SolveReport report;
          if (row.stage == "gp") {
            GPOptions opt;
            opt.seed = config.seed;
            report = RunGP(inst.synth.observed, opt, lm, &workspace).report;
          } else {
            report = RunBA(inst.ba_init, RobustLoss::Trivial(), lm, {}, &workspace).report;
          }
          row.iterations = static_cast<int>(report.iterations.size());
          row.final_cost = report.final_cost;
          row.termination = std::string(TerminationName(report.termination));
          if (row.iterations > 0) row.per_iteration_ns = report.total_time_ns() / row.iterations;
        } catch (const Error& e) {
          row.final_cost = std::numeric_limits<double>::quiet_NaN();
          row.termination = "error:" + std::string(ErrorCodeName(e.code()));
        }
        row.wall_time_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
        on_row(row);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

inline std::vector<BenchRow> RunBench(const BenchConfig& config) {
  return RunBench(config, [](const BenchRow&) {});
}

/// Least-squares slope of log(y) against log(x).
inline double LogLogSlope(const std::vector<double>& x, const std::vector<double>& y) {
  SPARSESFM_CHECK(x.size() == y.size() && x.size() >= 2, ErrorCode::kInvalidArgument,
                  "slope needs at least two points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace sparsesfm
