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
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sparsesfm/common.hpp"
#include "sparsesfm/rotation.hpp"

namespace sparsesfm {

enum class CameraModel {
  kPinhole,
  // BAL convention: camera looks down -z, projected coordinates are negated
  // and scaled by the radial polynomial 1 + k1 r^2 + k2 r^4.
  kBalRadial,
};

/// Pose is stored in center form: a world point X maps to the camera frame as
/// R(rotation) * (X - center).
struct Camera {
  Quat rotation = Quat::Identity();
  Vec3 center = Vec3::Zero();
  double focal = 1.0;
  // Fixed, never optimized.
  Vec2 principal_point = Vec2::Zero();
  CameraModel model = CameraModel::kPinhole;
  // (k1, k2); only read under kBalRadial.
  Vec2 distortion = Vec2::Zero();
};

struct Point3D {
  Vec3 position = Vec3::Zero();
};

struct Observation {
  int camera_id = 0;
  int point_id = 0;
  Vec2 pixel = Vec2::Zero();
  std::optional<double> depth;
};

struct Scene {
  std::vector<Camera> cameras;
  std::vector<Point3D> points;
  std::vector<Observation> observations;

  int num_cameras() const { return static_cast<int>(cameras.size()); }
  int num_points() const { return static_cast<int>(points.size()); }
  int num_observations() const {
    return static_cast<int>(observations.size());
  }
};

/// Checks index ranges, uniqueness of (camera, point) pairs, focal > 0 and
/// depth > 0. Throws on the first violation.
inline void ValidateScene(const Scene& scene) {
  for (int c = 0; c < scene.num_cameras(); ++c) {
    const Camera& cam = scene.cameras[c];
    SPARSESFM_CHECK(std::isfinite(cam.focal) && cam.focal > 0.0,
                    ErrorCode::kInvalidArgument,
                    "camera " + std::to_string(c) + " has non-positive focal");
    SPARSESFM_CHECK(cam.rotation.norm() > 1e-12, ErrorCode::kZeroQuaternion,
                    "camera " + std::to_string(c) + " has zero quaternion");
  }
  for (int p = 0; p < scene.num_points(); ++p) {
    SPARSESFM_CHECK(scene.points[p].position.allFinite(),
                    ErrorCode::kInvalidArgument,
                    "point " + std::to_string(p) + " is not finite");
  }
  std::set<std::pair<int, int>> seen;
  for (int k = 0; k < scene.num_observations(); ++k) {
    const Observation& obs = scene.observations[k];
    SPARSESFM_CHECK(obs.camera_id >= 0 && obs.camera_id < scene.num_cameras(),
                    ErrorCode::kInvalidArgument,
                    "observation " + std::to_string(k) +
                        " references missing camera");
    SPARSESFM_CHECK(obs.point_id >= 0 && obs.point_id < scene.num_points(),
                    ErrorCode::kInvalidArgument,
                    "observation " + std::to_string(k) +
                        " references missing point");
    SPARSESFM_CHECK(seen.emplace(obs.camera_id, obs.point_id).second,
                    ErrorCode::kDuplicateObservation,
                    "camera " + std::to_string(obs.camera_id) + " observes point " +
                        std::to_string(obs.point_id) + " twice");
    if (obs.depth) {
      SPARSESFM_CHECK(*obs.depth > 0.0 && std::isfinite(*obs.depth),
                      ErrorCode::kInvalidArgument,
                      "observation " + std::to_string(k) +
                          " has non-positive depth");
    }
  }
}

// ---------------------------------------------------------------------------
// Projection

inline constexpr double kMinProjectionDepth = 1e-12;

/// World point expressed in the camera frame.
inline Vec3 ToCameraFrame(const Camera& cam, const Vec3& X) {
  return Rotate(cam.rotation, X - cam.center);
}

/// Camera-frame point to pixel. Does not check depth.
inline Vec2 ProjectCameraFrame(const Camera& cam, const Vec3& p) {
  if (cam.model == CameraModel::kPinhole) {
    return cam.focal * Vec2(p.x() / p.z(), p.y() / p.z()) + cam.principal_point;
  }
  const Vec2 n(-p.x() / p.z(), -p.y() / p.z());
  const double r2 = n.squaredNorm();
  const double radial =
      1.0 + cam.distortion[0] * r2 + cam.distortion[1] * r2 * r2;
  return cam.focal * radial * n + cam.principal_point;
}

/// True when the point can be projected and lies on the visible side of the
/// camera (z > 0 for pinhole; BAL has no visible side, only z != 0).
inline bool IsProjectable(const Camera& cam, const Vec3& p_cam) {
  if (cam.model == CameraModel::kPinhole) {
    return p_cam.z() >= kMinProjectionDepth;
  }
  return std::abs(p_cam.z()) >= kMinProjectionDepth;
}

inline Vec2 Project(const Camera& cam, const Vec3& X) {
  const Vec3 p = ToCameraFrame(cam, X);
  SPARSESFM_CHECK(std::abs(p.z()) >= kMinProjectionDepth,
                  ErrorCode::kDegenerateProjection,
                  "camera-frame depth is zero");
  return ProjectCameraFrame(cam, p);
}

inline Vec2 Project(const Camera& cam, const Point3D& point) {
  return Project(cam, point.position);
}

/// Derivatives of the projected pixel with respect to the camera parameters
/// and the point.
struct ProjectionDerivatives {
  Eigen::Matrix<double, 2, 4> d_quaternion;
  Eigen::Matrix<double, 2, 3> d_center;
  Eigen::Matrix<double, 2, 3> d_point;
  Vec2 d_focal;
};

/// Returns false (and leaves the outputs untouched) when the point is not
/// projectable; otherwise pixel equals ProjectCameraFrame(cam, p) exactly.
inline bool ProjectWithDerivatives(const Camera& cam, const Vec3& X,
                                   Vec2* pixel,
                                   ProjectionDerivatives* derivs) {
  const Vec3 diff = X - cam.center;
  const Vec3 p = Rotate(cam.rotation, diff);
  if (!IsProjectable(cam, p)) {
    return false;
  }
  *pixel = ProjectCameraFrame(cam, p);
  if (derivs == nullptr) {
    return true;
  }

  const double inv_z = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> d_pixel_d_p;
  if (cam.model == CameraModel::kPinhole) {
    const Vec2 n(p.x() * inv_z, p.y() * inv_z);
    d_pixel_d_p << inv_z, 0.0, -n.x() * inv_z,
                   0.0, inv_z, -n.y() * inv_z;
    d_pixel_d_p *= cam.focal;
    derivs->d_focal = n;
  } else {
    const Vec2 n(-p.x() * inv_z, -p.y() * inv_z);
    Eigen::Matrix<double, 2, 3> dn_dp;
    dn_dp << -inv_z, 0.0, -n.x() * inv_z,
             0.0, -inv_z, -n.y() * inv_z;
    const double k1 = cam.distortion[0];
    const double k2 = cam.distortion[1];
    const double r2 = n.squaredNorm();
    const double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
    const Vec2 d_radial_dn = 2.0 * (k1 + 2.0 * k2 * r2) * n;
    const Eigen::Matrix2d d_pixel_dn =
        cam.focal * (radial * Eigen::Matrix2d::Identity() +
                     n * d_radial_dn.transpose());
    d_pixel_d_p = d_pixel_dn * dn_dp;
    derivs->d_focal = radial * n;
  }

  const Mat3 R = RotationMatrix(cam.rotation);
  derivs->d_quaternion =
      d_pixel_d_p * RotateJacobianWrtQuaternion(cam.rotation, diff);
  derivs->d_point = d_pixel_d_p * R;
  derivs->d_center = -derivs->d_point;
  return true;
}

// ---------------------------------------------------------------------------
// Robust loss

struct RobustLoss {
  enum class Kind { kTrivial, kHuber };

  Kind kind = Kind::kTrivial;
  // Threshold in residual units; only read for kHuber.
  double delta = 1.0;

  static RobustLoss Trivial() { return {Kind::kTrivial, 1.0}; }
  static RobustLoss Huber(double delta) {
    SPARSESFM_CHECK(delta > 0.0, ErrorCode::kInvalidArgument,
                    "huber delta must be positive");
    return {Kind::kHuber, delta};
  }
};

struct RobustValue {
  // rho(s): the robustified squared norm.
  double cost = 0.0;
  // rho'(s): the IRLS weight. Residual and Jacobian rows get sqrt(weight).
  double weight = 1.0;
};

inline RobustValue EvaluateRobust(const RobustLoss& loss, double squared_norm) {
  if (loss.kind == RobustLoss::Kind::kTrivial) {
    return {squared_norm, 1.0};
  }
  const double delta = loss.delta;
  if (squared_norm <= delta * delta) {
    return {squared_norm, 1.0};
  }
  const double norm = std::sqrt(squared_norm);
  return {2.0 * delta * norm - delta * delta, delta / norm};
}

}  // namespace sparsesfm
