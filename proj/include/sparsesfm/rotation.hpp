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

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "sparsesfm/common.hpp"

namespace sparsesfm {

using Quat = Eigen::Quaterniond;

/// Returns R(q) v for the rotation represented by q. The quaternion is
/// normalized first, so any non-zero q is accepted.
inline Vec3 Rotate(const Quat& q, const Vec3& v) {
  return q.normalized() * v;
}

inline Mat3 RotationMatrix(const Quat& q) {
  return q.normalized().toRotationMatrix();
}

/// Derivative of Rotate(q, v) with respect to the four ambient quaternion
/// coefficients in (w, x, y, z) order. Because Rotate normalizes, the
/// derivative along q itself is zero.
inline Eigen::Matrix<double, 3, 4> RotateJacobianWrtQuaternion(const Quat& q,
                                                               const Vec3& v) {
  const double norm = q.norm();
  const Vec4 qn = Vec4(q.w(), q.x(), q.y(), q.z()) / norm;
  const double w = qn[0];
  const Vec3 u = qn.tail<3>();

  Eigen::Matrix<double, 3, 4> d_unit;
  d_unit.col(0) = 2.0 * u.cross(v);
  Mat3 v_hat;
  v_hat << 0.0, -v.z(), v.y(),
           v.z(), 0.0, -v.x(),
           -v.y(), v.x(), 0.0;
  d_unit.rightCols<3>() = -2.0 * w * v_hat +
                          2.0 * (u * v.transpose() +
                                 u.dot(v) * Mat3::Identity() -
                                 2.0 * v * u.transpose());

  const Eigen::Matrix4d projector =
      (Eigen::Matrix4d::Identity() - qn * qn.transpose()) / norm;
  return d_unit * projector;
}

/// BAL stores rotations as angle-axis vectors.
inline Quat AngleAxisToQuaternion(const Vec3& angle_axis) {
  const double angle = angle_axis.norm();
  if (angle < 1e-300) {
    return Quat::Identity();
  }
  return Quat(Eigen::AngleAxisd(angle, angle_axis / angle));
}

inline Vec3 QuaternionToAngleAxis(const Quat& q) {
  const Eigen::AngleAxisd aa(q.normalized());
  return aa.angle() * aa.axis();
}

/// Geodesic angle (radians) of a rotation given as a quaternion.
inline double RotationAngle(const Quat& q) {
  const Quat n = q.normalized();
  return 2.0 * std::atan2(n.vec().norm(), std::abs(n.w()));
}

/// Angle (radians) of a * b^-1.
inline double RelativeRotationAngle(const Quat& a, const Quat& b) {
  return RotationAngle(a.normalized() * b.normalized().conjugate());
}

inline Quat QuaternionFromAxisAngle(const Vec3& axis, double angle) {
  return Quat(Eigen::AngleAxisd(angle, axis.normalized()));
}

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double DegToRad(double deg) { return deg * kPi / 180.0; }
inline constexpr double RadToDeg(double rad) { return rad * 180.0 / kPi; }

}  // namespace sparsesfm
