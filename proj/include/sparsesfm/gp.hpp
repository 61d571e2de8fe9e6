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
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sparsesfm/common.hpp"
#include "sparsesfm/lm.hpp"
#include "sparsesfm/parallel.hpp"
#include "sparsesfm/scene.hpp"
#include "sparsesfm/sparse_block.hpp"

namespace sparsesfm {

inline constexpr double kScaleFloor = 1e-6;

enum class GPInit {
  // Centers and points uniform in the unit cube, scales 1.
  kRandom,
  // Centers and points taken from the scene, scales 1.
  kFromScene,
};

struct GPOptions {
  bool depth_mode = false;
  RobustLoss loss = RobustLoss::Huber(0.1);
  GPInit init = GPInit::kRandom;
  std::uint64_t seed = 0;
  int num_threads = DefaultNumThreads();
};

/// Positions cameras and points from fixed rotations and unit pixel rays:
///
///   u_ij = v_ij - d_ij (X_j - t_i),
///
/// with one scale d_ij per observation, or d_ij = 1 / depth_ij when depths
/// are known (depth mode, which also fixes metric scale).
///
/// Parameter order: center blocks, point blocks, scale blocks. With the
/// gauge fixed, camera 0's center is a constant and has no block.
class GPProblem {
 public:
  GPProblem(const Scene& scene, GPOptions options)
      : options_(std::move(options)) {
    ValidateScene(scene);
    const int num_obs = scene.num_observations();
    num_cameras_ = scene.num_cameras();
    num_points_ = scene.num_points();
    rays_.resize(num_obs);
    camera_of_.resize(num_obs);
    point_of_.resize(num_obs);
    if (options_.depth_mode) inverse_depth_.resize(num_obs);
    for (int k = 0; k < num_obs; ++k) {
      const Observation& obs = scene.observations[k];
      const Camera& cam = scene.cameras[obs.camera_id];
      const Vec2 centered = obs.pixel - cam.principal_point;
      const Vec3 bearing(centered.x() / cam.focal, centered.y() / cam.focal, 1.0);
      rays_[k] = Rotate(cam.rotation.conjugate(), bearing).normalized();
      camera_of_[k] = obs.camera_id;
      point_of_[k] = obs.point_id;
      if (options_.depth_mode) {
        SPARSESFM_CHECK(obs.depth.has_value(), ErrorCode::kMissingDepth,
                        "observation " + std::to_string(k) + " has no depth");
        // Camera-frame z to distance along the ray.
        inverse_depth_[k] = 1.0 / (*obs.depth * bearing.norm());
      }
    }

    centers_.resize(num_cameras_);
    points_.resize(num_points_);
    if (options_.init == GPInit::kFromScene) {
      for (int c = 0; c < num_cameras_; ++c) centers_[c] = scene.cameras[c].center;
      for (int p = 0; p < num_points_; ++p) points_[p] = scene.points[p].position;
    } else {
      std::mt19937_64 rng(options_.seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      auto draw = [&] {
        const double x = unit(rng);
        const double y = unit(rng);
        const double z = unit(rng);
        return Vec3(x, y, z);
      };
      for (auto& c : centers_) c = draw();
      for (auto& p : points_) p = draw();
    }
    BuildLayout();
  }

  /// Marks camera 0's center constant; without depths, PostStep also keeps
  /// the mean scale at 1.
  GPProblem FixGauge() const {
    GPProblem fixed = *this;
    fixed.gauge_fixed_ = true;
    fixed.BuildLayout();
    return fixed;
  }

  bool gauge_fixed() const { return gauge_fixed_; }
  bool depth_mode() const { return options_.depth_mode; }
  const GPOptions& options() const { return options_; }
  std::shared_ptr<const BlockLayout> layout() const { return layout_; }
  int num_observations() const { return static_cast<int>(rays_.size()); }
  const Vec3& ray(int k) const { return rays_[k]; }
  /// 1 / depth along the ray (depth mode only).
  double inverse_depth(int k) const { return inverse_depth_[k]; }

  /// -1 for the gauge-fixed camera.
  int center_block(int camera) const {
    if (gauge_fixed_) return camera == 0 ? -1 : camera - 1;
    return camera;
  }
  int point_block(int point) const { return point_base_ + point; }
  /// -1 in depth mode.
  int scale_block(int obs) const {
    return options_.depth_mode ? -1 : scale_base_ + obs;
  }

  std::vector<std::pair<int, int>> JacobianPattern() const {
    std::vector<std::pair<int, int>> pattern;
    pattern.reserve(rays_.size() * 3);
    for (int k = 0; k < num_observations(); ++k) {
      const int cb = center_block(camera_of_[k]);
      if (cb >= 0) pattern.emplace_back(k, cb);
      pattern.emplace_back(k, point_block(point_of_[k]));
      if (!options_.depth_mode) pattern.emplace_back(k, scale_block(k));
    }
    return pattern;
  }

  /// Initial parameter vector (stored centers/points, unit scales).
  VecX InitialTheta() const {
    VecX theta(layout_->total_params());
    for (int c = 0; c < num_cameras_; ++c) {
      const int cb = center_block(c);
      if (cb >= 0) theta.segment<3>(layout_->parameter_block(cb).offset) = centers_[c];
    }
    for (int p = 0; p < num_points_; ++p) {
      theta.segment<3>(layout_->parameter_block(point_block(p)).offset) = points_[p];
    }
    if (!options_.depth_mode) {
      for (int k = 0; k < num_observations(); ++k) {
        theta[layout_->parameter_block(scale_block(k)).offset] = 1.0;
      }
    }
    return theta;
  }

  Vec3 Center(const VecX& theta, int camera) const {
    const int cb = center_block(camera);
    if (cb < 0) return centers_[camera];
    return theta.segment<3>(layout_->parameter_block(cb).offset);
  }
  Vec3 Point(const VecX& theta, int point) const {
    return theta.segment<3>(layout_->parameter_block(point_block(point)).offset);
  }
  double Scale(const VecX& theta, int obs) const {
    if (options_.depth_mode) return inverse_depth_[obs];
    return theta[layout_->parameter_block(scale_block(obs)).offset];
  }

  double Evaluate(const VecX& theta, VecX* residuals,
                  BlockSparseJacobian* jacobian) const {
    SPARSESFM_CHECK(theta.size() == layout_->total_params(),
                    ErrorCode::kDimensionMismatch,
                    "parameter vector does not match the GP layout");
    const int num_obs = num_observations();
    if (residuals != nullptr) residuals->resize(3 * num_obs);
    costs_.resize(num_obs);
    ParallelFor(0, num_obs, options_.num_threads, [&](int k) {
      const Vec3 diff = Point(theta, point_of_[k]) - Center(theta, camera_of_[k]);
      const double d = Scale(theta, k);
      const Vec3 u = rays_[k] - d * diff;
      const RobustValue rv = EvaluateRobust(options_.loss, u.squaredNorm());
      costs_[k] = rv.cost;
      const double w = std::sqrt(rv.weight);
      if (residuals != nullptr) residuals->segment<3>(3 * k) = w * u;
      if (jacobian != nullptr) {
        int e = jacobian->row_range(k).first;
        if (center_block(camera_of_[k]) >= 0) {
          jacobian->block(e++) = (w * d) * Mat3::Identity();
        }
        jacobian->block(e++) = (-w * d) * Mat3::Identity();
        if (!options_.depth_mode) jacobian->block(e) = -w * diff;
      }
    });
    double total = 0.0;
    for (double c : costs_) total += c;
    return 0.5 * total;
  }

  /// Clamps scales to the floor and, with the gauge fixed and no depths,
  /// rescales so the mean scale is 1 (positions scale about the fixed
  /// center, leaving the cost unchanged). Rescaling can push a scale back
  /// under the floor, so the two alternate until neither changes anything.
  void PostStep(VecX* theta) const {
    if (options_.depth_mode) return;
    const int n = num_observations();
    auto scale = [&](int k) -> double& {
      return (*theta)[layout_->parameter_block(scale_block(k)).offset];
    };
    auto clamp = [&] {
      bool clamped = false;
      for (int k = 0; k < n; ++k) {
        if (scale(k) < kScaleFloor) {
          scale(k) = kScaleFloor;
          clamped = true;
        }
      }
      return clamped;
    };
    clamp();
    if (!gauge_fixed_ || n == 0) return;
    double factor = 1.0;
    for (int pass = 0; pass < 16; ++pass) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k) sum += scale(k);
      const double mean = sum / n;
      for (int k = 0; k < n; ++k) scale(k) /= mean;
      factor *= mean;
      if (!clamp()) break;
    }
    const Vec3 anchor = centers_[0];
    for (int b = 0; b < scale_base_; ++b) {
      auto seg = theta->segment<3>(layout_->parameter_block(b).offset);
      seg = anchor + factor * (seg - anchor);
    }
  }

  /// Scene with centers and points from theta; rotations and intrinsics are
  /// copied from `scene`.
  Scene Decode(const VecX& theta, const Scene& scene) const {
    Scene out = scene;
    for (int c = 0; c < num_cameras_; ++c) out.cameras[c].center = Center(theta, c);
    for (int p = 0; p < num_points_; ++p) out.points[p].position = Point(theta, p);
    return out;
  }

 private:
  void BuildLayout() {
    auto layout = std::make_shared<BlockLayout>();
    const int first = gauge_fixed_ ? 1 : 0;
    for (int c = first; c < num_cameras_; ++c) {
      layout->AddParameterBlock(BlockKind::kGpCenter);
    }
    point_base_ = layout->num_parameter_blocks();
    for (int p = 0; p < num_points_; ++p) layout->AddParameterBlock(BlockKind::kGpPoint);
    scale_base_ = layout->num_parameter_blocks();
    if (!options_.depth_mode) {
      for (int k = 0; k < num_observations(); ++k) {
        layout->AddParameterBlock(BlockKind::kGpScale);
      }
    }
    for (int k = 0; k < num_observations(); ++k) layout->AddResidualBlock(3);
    layout_ = std::move(layout);
  }

  GPOptions options_;
  int num_cameras_ = 0;
  int num_points_ = 0;
  std::vector<Vec3> rays_;
  std::vector<int> camera_of_;
  std::vector<int> point_of_;
  std::vector<double> inverse_depth_;
  std::vector<Vec3> centers_;
  std::vector<Vec3> points_;
  bool gauge_fixed_ = false;
  int point_base_ = 0;
  int scale_base_ = 0;
  std::shared_ptr<const BlockLayout> layout_;
  mutable std::vector<double> costs_;
};

/// Builds the ray problem with the gauge still free.
inline GPProblem MakeRays(const Scene& scene, const GPOptions& options) {
  return GPProblem(scene, options);
}

inline GPProblem FixGauge(const GPProblem& problem) { return problem.FixGauge(); }

inline VecX GPResiduals(const GPProblem& problem, const VecX& theta) {
  VecX r;
  problem.Evaluate(theta, &r, nullptr);
  return r;
}

inline BlockSparseJacobian GPJacobian(const GPProblem& problem,
                                      const VecX& theta) {
  BlockSparseJacobian jac(problem.layout(), problem.JacobianPattern());
  VecX r;
  problem.Evaluate(theta, &r, &jac);
  return jac;
}

struct GPResult {
  Scene scene;
  SolveReport report;
};

inline GPResult RunGP(const Scene& scene, GPOptions options,
                      const LMConfig& config,
                      SolverWorkspace* workspace = nullptr) {
  options.num_threads = config.num_threads;
  const GPProblem problem = MakeRays(scene, options).FixGauge();
  VecX theta0 = problem.InitialTheta();
  problem.PostStep(&theta0);
  LMResult lm = LMSolve(problem, std::move(theta0), config, workspace);
  return {problem.Decode(lm.theta, scene), std::move(lm.report)};
}

}  // namespace sparsesfm
