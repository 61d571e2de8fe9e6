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
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sparsesfm/common.hpp"
#include "sparsesfm/linear_solver.hpp"
#include "sparsesfm/sparse_block.hpp"

namespace sparsesfm {

struct LMConfig {
  int max_iterations = 100;
  double lambda0 = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 2.0;
  double lambda_min = 1e-10;
  double lambda_max = 1e10;
  double rel_cost_tol = 1e-6;
  double grad_tol = 1e-10;
  // A rejected step this small relative to theta counts as converged.
  double param_tol = 1e-12;
  int cg_max_iters = 500;
  double cg_tol = 1e-8;
  LinearSolverType solver = LinearSolverType::kSchurPcg;
  int dense_max_params = 6000;
  int num_threads = DefaultNumThreads();

  LinearSolverOptions linear_options() const {
    LinearSolverOptions o;
    o.type = solver;
    o.cg_max_iters = cg_max_iters;
    o.cg_tol = cg_tol;
    o.dense_max_params = dense_max_params;
    o.num_threads = num_threads;
    return o;
  }
};

inline void ValidateConfig(const LMConfig& c) {
  SPARSESFM_CHECK(c.max_iterations >= 0, ErrorCode::kInvalidArgument,
                  "max_iterations must be non-negative");
  SPARSESFM_CHECK(c.lambda_min > 0.0 && c.lambda_min < c.lambda0 &&
                      c.lambda0 < c.lambda_max,
                  ErrorCode::kInvalidArgument,
                  "lambda bounds must satisfy 0 < lambda_min < lambda0 < lambda_max");
  SPARSESFM_CHECK(c.lambda_up > 1.0 && c.lambda_down > 1.0,
                  ErrorCode::kInvalidArgument, "lambda factors must exceed 1");
  SPARSESFM_CHECK(c.rel_cost_tol > 0.0 && c.grad_tol > 0.0 && c.cg_tol > 0.0 &&
                      c.param_tol > 0.0,
                  ErrorCode::kInvalidArgument, "tolerances must be positive");
  SPARSESFM_CHECK(c.cg_max_iters > 0 && c.num_threads > 0,
                  ErrorCode::kInvalidArgument,
                  "cg_max_iters and num_threads must be positive");
}

enum class Termination {
  kConvergedCost,
  kConvergedGrad,
  kMaxIter,
  kSolverFailure,
};

inline std::string_view TerminationName(Termination t) {
  switch (t) {
    case Termination::kConvergedCost: return "converged_cost";
    case Termination::kConvergedGrad: return "converged_grad";
    case Termination::kMaxIter: return "max_iter";
    case Termination::kSolverFailure: return "solver_failure";
  }
  return "unknown";
}

struct IterationRecord {
  int iteration = 0;
  double cost_before = 0.0;
  // Cost at the candidate; NaN when the linear solve failed.
  double cost_after = 0.0;
  double lambda = 0.0;
  bool step_accepted = false;
  int cg_iterations = 0;
  std::int64_t wall_time_ns = 0;
};

struct SolveReport {
  std::vector<IterationRecord> iterations;
  Termination termination = Termination::kMaxIter;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  // Diagnostic from the last linear-solver failure, if any.
  std::string message;

  int num_accepted() const {
    return static_cast<int>(std::count_if(
        iterations.begin(), iterations.end(),
        [](const IterationRecord& r) { return r.step_accepted; }));
  }
  bool converged() const {
    return termination == Termination::kConvergedCost ||
           termination == Termination::kConvergedGrad;
  }
  std::int64_t total_time_ns() const {
    std::int64_t total = 0;
    for (const auto& r : iterations) total += r.wall_time_ns;
    return total;
  }
};

/// A nonlinear least-squares problem on a block layout.
///
/// Evaluate returns 0.5 * sum of robustified squared residual norms. When
/// residuals / jacobian are non-null they receive the IRLS-weighted residual
/// vector and Jacobian at theta. PostStep maps a raw updated vector back onto
/// the feasible set (unit quaternions, scale floors, gauge).
template <typename P>
concept LeastSquaresProblem =
    requires(P& p, const P& cp, const VecX& theta, VecX* r,
             BlockSparseJacobian* j, VecX* mutable_theta) {
      { cp.layout() } -> std::convertible_to<std::shared_ptr<const BlockLayout>>;
      { cp.JacobianPattern() } -> std::same_as<std::vector<std::pair<int, int>>>;
      { cp.Evaluate(theta, r, j) } -> std::same_as<double>;
      { cp.PostStep(mutable_theta) };
    };

/// Scratch state shared by successive solves. Buffers keep their capacity
/// when the layout changes, so a GP solve followed by a BA solve of similar
/// size reuses the same memory.
class SolverWorkspace {
 public:
  void Prepare(const std::shared_ptr<const BlockLayout>& layout,
               const std::vector<std::pair<int, int>>& pattern) {
    if (layout != layout_) {
      layout_ = layout;
      jacobian_.Rebuild(layout, pattern);
      system_.Rebuild(jacobian_);
      ++rebuilds_;
    }
    residuals_.resize(layout->total_residuals());
    candidate_residuals_.resize(layout->total_residuals());
    gradient_.resize(layout->total_params());
  }

  BlockSparseJacobian& jacobian() { return jacobian_; }
  BlockNormalSystem& system() { return system_; }
  VecX& residuals() { return residuals_; }
  VecX& candidate_residuals() { return candidate_residuals_; }
  VecX& gradient() { return gradient_; }
  LinearSolver& linear_solver() { return linear_solver_; }

  /// Called after every successful linear solve with the damped system and
  /// its solution. Meant for diagnostics; empty by default.
  std::function<void(const BlockNormalSystem&, const VecX&)> on_solve;

  /// Number of times the sparse structures were rebuilt for a new layout.
  int rebuilds() const { return rebuilds_; }
  /// Bytes currently reserved by the sparse structures and solver scratch.
  std::size_t capacity_bytes() const {
    return jacobian_.capacity_bytes() + system_.capacity_bytes() +
           linear_solver_.capacity_bytes();
  }

 private:
  std::shared_ptr<const BlockLayout> layout_;
  BlockSparseJacobian jacobian_;
  BlockNormalSystem system_;
  VecX residuals_;
  VecX candidate_residuals_;
  VecX gradient_;
  LinearSolver linear_solver_;
  int rebuilds_ = 0;
};

/// Rescales every camera-pose quaternion segment to unit norm.
inline void Renormalize(VecX* theta, const BlockLayout& layout) {
  for (int b = 0; b < layout.num_parameter_blocks(); ++b) {
    const auto& pb = layout.parameter_block(b);
    if (pb.kind != BlockKind::kCameraPose) continue;
    auto q = theta->segment<4>(pb.offset);
    const double norm = q.norm();
    SPARSESFM_CHECK(norm >= 1e-12, ErrorCode::kZeroQuaternion,
                    "quaternion of block " + std::to_string(b) + " vanished");
    q /= norm;
  }
}

struct LMResult {
  VecX theta;
  SolveReport report;
};

namespace internal {

inline double InfNorm(const VecX& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

}  // namespace internal

/// Damped Gauss-Newton with gain-based step acceptance. Each iteration
/// solves (J^T J + lambda diag(J^T J)) dx = -J^T r; an improving step is
/// accepted and lambda shrinks, otherwise lambda grows and the iteration is
/// spent.
template <LeastSquaresProblem Problem>
LMResult LMSolve(const Problem& problem, VecX theta, const LMConfig& config,
                 SolverWorkspace* workspace = nullptr) {
  using Clock = std::chrono::steady_clock;
  ValidateConfig(config);
  SolverWorkspace local;
  SolverWorkspace& ws = workspace != nullptr ? *workspace : local;

  const auto layout = problem.layout();
  SPARSESFM_CHECK(theta.size() == layout->total_params(),
                  ErrorCode::kDimensionMismatch,
                  "parameter vector does not match the layout");
  SPARSESFM_CHECK(theta.allFinite(), ErrorCode::kInvalidArgument,
                  "initial parameters are not finite");
  ws.Prepare(layout, problem.JacobianPattern());
  const LinearSolverOptions linear = config.linear_options();

  LMResult result;
  SolveReport& report = result.report;

  auto linearize = [&](const VecX& at) {
    const double cost = problem.Evaluate(at, &ws.residuals(), &ws.jacobian());
    JtJInto(ws.jacobian(), &ws.system(), config.num_threads);
    JtRInto(ws.jacobian(), ws.residuals(), &ws.gradient(), config.num_threads);
    ws.system().gradient() = -ws.gradient();
    return cost;
  };

  double cost = linearize(theta);
  report.initial_cost = cost;
  report.final_cost = cost;
  double lambda = config.lambda0;

  if (internal::InfNorm(ws.gradient()) < config.grad_tol) {
    report.termination = Termination::kConvergedGrad;
    result.theta = std::move(theta);
    return result;
  }

  report.termination = Termination::kMaxIter;
  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    const auto start = Clock::now();
    IterationRecord record;
    record.iteration = iter;
    record.cost_before = cost;
    record.lambda = lambda;

    ApplyDampingInPlace(&ws.system(), lambda);
    VecX step;
    bool solved = true;
    try {
      LinearSolveInfo info;
      step = ws.linear_solver().Solve(ws.system(), linear, &info);
      record.cg_iterations = info.cg_iterations;
      if (ws.on_solve) ws.on_solve(ws.system(), step);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularBlock && e.code() != ErrorCode::kCGStall &&
          e.code() != ErrorCode::kSolverFailure) {
        throw;
      }
      solved = false;
      report.message = e.what();
    }

    if (!solved) {
      record.cost_after = std::numeric_limits<double>::quiet_NaN();
      record.wall_time_ns =
          std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start)
              .count();
      report.iterations.push_back(record);
      if (lambda >= config.lambda_max) {
        report.termination = Termination::kSolverFailure;
        break;
      }
      lambda = std::min(lambda * config.lambda_up, config.lambda_max);
      continue;
    }

    VecX candidate = theta + step;
    problem.PostStep(&candidate);
    const double new_cost =
        problem.Evaluate(candidate, &ws.candidate_residuals(), nullptr);
    record.cost_after = new_cost;

    bool stop = false;
    if (std::isfinite(new_cost) && new_cost < cost) {
      record.step_accepted = true;
      const double relative_decrease = (cost - new_cost) / cost;
      theta = std::move(candidate);
      lambda = std::max(lambda / config.lambda_down, config.lambda_min);
      cost = linearize(theta);
      if (relative_decrease < config.rel_cost_tol) {
        report.termination = Termination::kConvergedCost;
        stop = true;
      } else if (internal::InfNorm(ws.gradient()) < config.grad_tol) {
        report.termination = Termination::kConvergedGrad;
        stop = true;
      }
    } else {
      if (step.norm() <= config.param_tol * (theta.norm() + config.param_tol)) {
        report.termination = Termination::kConvergedCost;
        stop = true;
      }
      lambda = std::min(lambda * config.lambda_up, config.lambda_max);
    }
    record.wall_time_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start)
            .count();
    report.iterations.push_back(record);
    if (stop) break;
  }

  report.final_cost = cost;
  result.theta = std::move(theta);
  return result;
}

}  // namespace sparsesfm
