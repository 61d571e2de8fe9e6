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

#include <cmath>
#include <memory>
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

struct BAOptions {
  bool optimize_focal = true;
  // One focal block for all cameras instead of one per camera.
  bool shared_focal = false;
  int num_threads = DefaultNumThreads();
};

/// Reprojection-error problem over camera poses (quaternion + center),
/// focals and points. Parameter order: all pose blocks, then focal blocks,
/// then point blocks.
class BAProblem {
 public:
  BAProblem(Scene scene, RobustLoss loss, BAOptions options = {})
      : scene_(std::move(scene)), loss_(loss), options_(options) {
    ValidateScene(scene_);
    auto layout = std::make_shared<BlockLayout>();
    const int num_cameras = scene_.num_cameras();
    for (int c = 0; c < num_cameras; ++c) {
      layout->AddParameterBlock(BlockKind::kCameraPose);
    }
    focal_base_ = layout->num_parameter_blocks();
    if (options_.optimize_focal) {
      const int count = options_.shared_focal ? (num_cameras > 0 ? 1 : 0) : num_cameras;
      for (int c = 0; c < count; ++c) {
        layout->AddParameterBlock(BlockKind::kFocal);
      }
    }
    point_base_ = layout->num_parameter_blocks();
    for (int p = 0; p < scene_.num_points(); ++p) {
      layout->AddParameterBlock(BlockKind::kPoint);
    }
    for (int k = 0; k < scene_.num_observations(); ++k) {
      layout->AddResidualBlock(2);
    }
    layout_ = std::move(layout);
  }

  const Scene& scene() const { return scene_; }
  const RobustLoss& loss() const { return loss_; }
  const BAOptions& options() const { return options_; }
  std::shared_ptr<const BlockLayout> layout() const { return layout_; }

  int pose_block(int camera) const { return camera; }
  /// -1 when focals are held constant.
  int focal_block(int camera) const {
    if (!options_.optimize_focal) return -1;
    return focal_base_ + (options_.shared_focal ? 0 : camera);
  }
  int point_block(int point) const { return point_base_ + point; }

  std::vector<std::pair<int, int>> JacobianPattern() const {
    std::vector<std::pair<int, int>> pattern;
    pattern.reserve(static_cast<std::size_t>(scene_.num_observations()) * 3);
    for (int k = 0; k < scene_.num_observations(); ++k) {
      const Observation& obs = scene_.observations[k];
      pattern.emplace_back(k, pose_block(obs.camera_id));
      if (options_.optimize_focal) {
        pattern.emplace_back(k, focal_block(obs.camera_id));
      }
      pattern.emplace_back(k, point_block(obs.point_id));
    }
    return pattern;
  }

  VecX Encode() const { return Encode(scene_); }

  /// Parameter vector for a scene with the same structure.
  VecX Encode(const Scene& scene) const {
    VecX theta(layout_->total_params());
    for (int c = 0; c < scene.num_cameras(); ++c) {
      const Camera& cam = scene.cameras[c];
      const int off = layout_->parameter_block(pose_block(c)).offset;
      theta.segment<4>(off) << cam.rotation.w(), cam.rotation.x(),
          cam.rotation.y(), cam.rotation.z();
      theta.segment<3>(off + 4) = cam.center;
      if (options_.optimize_focal) {
        theta[layout_->parameter_block(focal_block(c)).offset] = cam.focal;
      }
    }
    for (int p = 0; p < scene.num_points(); ++p) {
      theta.segment<3>(layout_->parameter_block(point_block(p)).offset) =
          scene.points[p].position;
    }
    return theta;
  }

  Camera DecodeCamera(const VecX& theta, int c) const {
    Camera cam = scene_.cameras[c];
    const int off = layout_->parameter_block(pose_block(c)).offset;
    cam.rotation = Quat(theta[off], theta[off + 1], theta[off + 2], theta[off + 3]);
    cam.center = theta.segment<3>(off + 4);
    if (options_.optimize_focal) {
      cam.focal = theta[layout_->parameter_block(focal_block(c)).offset];
    }
    return cam;
  }

  Vec3 DecodePoint(const VecX& theta, int p) const {
    return theta.segment<3>(layout_->parameter_block(point_block(p)).offset);
  }

  /// Scene with parameters from theta; quaternions are normalized.
  Scene Decode(const VecX& theta) const {
    Scene out = scene_;
    for (int c = 0; c < out.num_cameras(); ++c) {
      out.cameras[c] = DecodeCamera(theta, c);
      out.cameras[c].rotation.normalize();
    }
    for (int p = 0; p < out.num_points(); ++p) {
      out.points[p].position = DecodePoint(theta, p);
    }
    return out;
  }

  /// Residual block k = sqrt(w_k) (project - observed). Observations that
  /// cannot be projected get zero residual and zero Jacobian blocks.
  double Evaluate(const VecX& theta, VecX* residuals,
                  BlockSparseJacobian* jacobian) const {
    const int num_obs = scene_.num_observations();
    SPARSESFM_CHECK(theta.size() == layout_->total_params(),
                    ErrorCode::kDimensionMismatch,
                    "parameter vector does not match the BA layout");
    if (residuals != nullptr) {
      residuals->resize(2 * num_obs);
    }
    costs_.resize(num_obs);
    ParallelFor(0, num_obs, options_.num_threads, [&](int k) {
      const Observation& obs = scene_.observations[k];
      const Camera cam = DecodeCamera(theta, obs.camera_id);
      const Vec3 X = DecodePoint(theta, obs.point_id);
      Vec2 pixel;
      ProjectionDerivatives d;
      const bool ok =
          ProjectWithDerivatives(cam, X, &pixel, jacobian != nullptr ? &d : nullptr);
      if (!ok) {
        costs_[k] = 0.0;
        if (residuals != nullptr) residuals->segment<2>(2 * k).setZero();
        if (jacobian != nullptr) ZeroRow(jacobian, k);
        return;
      }
      const Vec2 error = pixel - obs.pixel;
      const RobustValue rv = EvaluateRobust(loss_, error.squaredNorm());
      costs_[k] = rv.cost;
      const double scale = std::sqrt(rv.weight);
      if (residuals != nullptr) residuals->segment<2>(2 * k) = scale * error;
      if (jacobian != nullptr) {
        int e = jacobian->row_range(k).first;
        BlockRef pose = jacobian->block(e++);
        pose.leftCols<4>() = scale * d.d_quaternion;
        pose.rightCols<3>() = scale * d.d_center;
        if (options_.optimize_focal) {
          jacobian->block(e++) = scale * d.d_focal;
        }
        jacobian->block(e) = scale * d.d_point;
      }
    });
    double total = 0.0;
    for (double c : costs_) total += c;
    return 0.5 * total;
  }

  void PostStep(VecX* theta) const { Renormalize(theta, *layout_); }

 private:
  void ZeroRow(BlockSparseJacobian* jacobian, int k) const {
    const auto [begin, end] = jacobian->row_range(k);
    for (int e = begin; e < end; ++e) jacobian->block(e).setZero();
  }

  Scene scene_;
  RobustLoss loss_;
  BAOptions options_;
  std::shared_ptr<const BlockLayout> layout_;
  int focal_base_ = 0;
  int point_base_ = 0;
  // Per-observation robust costs, summed in order for a deterministic total.
  mutable std::vector<double> costs_;
};

inline VecX BAResiduals(const BAProblem& problem, const VecX& theta) {
  VecX r;
  problem.Evaluate(theta, &r, nullptr);
  return r;
}

inline BlockSparseJacobian BAJacobian(const BAProblem& problem,
                                      const VecX& theta) {
  BlockSparseJacobian jac(problem.layout(), problem.JacobianPattern());
  VecX r;
  problem.Evaluate(theta, &r, &jac);
  return jac;
}

// ---------------------------------------------------------------------------
// Pruning

struct PruneResult {
  Scene scene;
  // old index -> new index, -1 when removed.
  std::vector<int> camera_map;
  std::vector<int> point_map;
  std::vector<int> observation_map;
};

/// Repeatedly drops points seen by fewer than two cameras and cameras with
/// no observations until nothing changes.
inline PruneResult Prune(const Scene& scene) {
  const int num_cameras = scene.num_cameras();
  const int num_points = scene.num_points();
  std::vector<char> keep_camera(num_cameras, 1);
  std::vector<char> keep_point(num_points, 1);
  std::vector<char> keep_obs(scene.num_observations(), 1);

  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<int> point_count(num_points, 0);
    std::vector<int> camera_count(num_cameras, 0);
    for (int k = 0; k < scene.num_observations(); ++k) {
      if (!keep_obs[k]) continue;
      ++point_count[scene.observations[k].point_id];
      ++camera_count[scene.observations[k].camera_id];
    }
    for (int p = 0; p < num_points; ++p) {
      if (keep_point[p] && point_count[p] < 2) {
        keep_point[p] = 0;
        changed = true;
      }
    }
    for (int c = 0; c < num_cameras; ++c) {
      if (keep_camera[c] && camera_count[c] == 0) {
        keep_camera[c] = 0;
        changed = true;
      }
    }
    for (int k = 0; k < scene.num_observations(); ++k) {
      const Observation& obs = scene.observations[k];
      if (keep_obs[k] && (!keep_point[obs.point_id] || !keep_camera[obs.camera_id])) {
        keep_obs[k] = 0;
        changed = true;
      }
    }
  }

  PruneResult result;
  result.camera_map.assign(num_cameras, -1);
  result.point_map.assign(num_points, -1);
  result.observation_map.assign(scene.num_observations(), -1);
  for (int c = 0; c < num_cameras; ++c) {
    if (!keep_camera[c]) continue;
    result.camera_map[c] = result.scene.num_cameras();
    result.scene.cameras.push_back(scene.cameras[c]);
  }
  for (int p = 0; p < num_points; ++p) {
    if (!keep_point[p]) continue;
    result.point_map[p] = result.scene.num_points();
    result.scene.points.push_back(scene.points[p]);
  }
  for (int k = 0; k < scene.num_observations(); ++k) {
    if (!keep_obs[k]) continue;
    Observation obs = scene.observations[k];
    obs.camera_id = result.camera_map[obs.camera_id];
    obs.point_id = result.point_map[obs.point_id];
    result.observation_map[k] = result.scene.num_observations();
    result.scene.observations.push_back(obs);
  }
  SPARSESFM_CHECK(result.scene.num_observations() > 0, ErrorCode::kEmptyProblem,
                  "no observations survive pruning");
  return result;
}

struct BAResult {
  Scene scene;
  SolveReport report;
};

inline BAResult RunBA(const Scene& scene, const RobustLoss& loss,
                      const LMConfig& config, BAOptions options = {},
                      SolverWorkspace* workspace = nullptr) {
  options.num_threads = config.num_threads;
  BAProblem problem(scene, loss, options);
  LMResult lm = LMSolve(problem, problem.Encode(), config, workspace);
  return {problem.Decode(lm.theta), std::move(lm.report)};
}

}  // namespace sparsesfm
