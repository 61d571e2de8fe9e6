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
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "sparsesfm/common.hpp"
#include "sparsesfm/rotation.hpp"
#include "sparsesfm/scene.hpp"

namespace sparsesfm {

enum class AlignmentKind { kSim3, kSe3 };

/// Maps estimate coordinates to truth coordinates: X' = scale * R * X + t.
struct Alignment {
  AlignmentKind kind = AlignmentKind::kSim3;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 Apply(const Vec3& X) const { return scale * (rotation * X) + translation; }
};

inline Scene ApplyAlignment(const Alignment& a, const Scene& scene) {
  Scene out = scene;
  const Quat qa(a.rotation);
  for (auto& cam : out.cameras) {
    cam.center = a.Apply(cam.center);
    // Camera frame coordinates scale uniformly, so projections are unchanged.
    cam.rotation = (cam.rotation * qa.conjugate()).normalized();
  }
  for (auto& p : out.points) p.position = a.Apply(p.position);
  for (auto& obs : out.observations) {
    if (obs.depth) *obs.depth *= a.scale;
  }
  return out;
}

struct AlignResult {
  Alignment alignment;
  Scene aligned;
};

inline AlignResult Align(const Scene& estimate, const Scene& truth, AlignmentKind kind) {
  const int n = estimate.num_cameras();
  SPARSESFM_CHECK(n == truth.num_cameras(), ErrorCode::kDimensionMismatch,
                  "camera count mismatch");
  SPARSESFM_CHECK(n >= (kind == AlignmentKind::kSim3 ? 3 : 2),
                  ErrorCode::kInsufficientCameras, "too few cameras to align");
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (int i = 0; i < n; ++i) {
    src.col(i) = estimate.cameras[i].center;
    dst.col(i) = truth.cameras[i].center;
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, kind == AlignmentKind::kSim3);
  Alignment a;
  a.kind = kind;
  const Mat3 sR = T.topLeftCorner<3, 3>();
  a.scale = kind == AlignmentKind::kSim3 ? std::cbrt(sR.determinant()) : 1.0;
  a.rotation = sR / a.scale;
  a.translation = T.topRightCorner<3, 1>();
  return {a, ApplyAlignment(a, estimate)};
}

inline double CenterRmse(const Scene& a, const Scene& b) {
  SPARSESFM_CHECK(a.num_cameras() == b.num_cameras(), ErrorCode::kDimensionMismatch,
                  "camera count mismatch");
  SPARSESFM_CHECK(a.num_cameras() > 0, ErrorCode::kEmptyProblem, "no cameras");
  double sum = 0.0;
  for (int i = 0; i < a.num_cameras(); ++i) {
    sum += (a.cameras[i].center - b.cameras[i].center).squaredNorm();
  }
  return std::sqrt(sum / a.num_cameras());
}

/// Per-camera absolute rotation error in degrees.
inline std::vector<double> RotationErrorsDeg(const Scene& estimate, const Scene& truth) {
  SPARSESFM_CHECK(estimate.num_cameras() == truth.num_cameras(),
                  ErrorCode::kDimensionMismatch, "camera count mismatch");
  std::vector<double> out;
  out.reserve(estimate.num_cameras());
  for (int i = 0; i < estimate.num_cameras(); ++i) {
    out.push_back(RadToDeg(
        RelativeRotationAngle(estimate.cameras[i].rotation, truth.cameras[i].rotation)));
  }
  return out;
}

inline double MeanRotationErrorDeg(const Scene& estimate, const Scene& truth) {
  const std::vector<double> e = RotationErrorsDeg(estimate, truth);
  if (e.empty()) return 0.0;
  double sum = 0.0;
  for (double v : e) sum += v;
  return sum / static_cast<double>(e.size());
}

/// Pairwise relative rotation errors in degrees, pairs (i < j) in row order.
inline std::vector<double> PairwiseRotationErrorsDeg(const Scene& estimate,
                                                     const Scene& truth) {
  SPARSESFM_CHECK(estimate.num_cameras() == truth.num_cameras(),
                  ErrorCode::kDimensionMismatch, "camera count mismatch");
  const int n = estimate.num_cameras();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Quat rel_est = estimate.cameras[j].rotation * estimate.cameras[i].rotation.conjugate();
      const Quat rel_true = truth.cameras[j].rotation * truth.cameras[i].rotation.conjugate();
      out.push_back(RadToDeg(RelativeRotationAngle(rel_est, rel_true)));
    }
  }
  return out;
}

inline double AucFromErrors(const std::vector<double>& errors_deg, double threshold_deg) {
  if (errors_deg.empty()) return 0.0;
  double sum = 0.0;
  for (double e : errors_deg) sum += std::max(0.0, 1.0 - e / threshold_deg);
  return 100.0 * sum / static_cast<double>(errors_deg.size());
}

/// AUC on a 0..100 scale per threshold.
inline std::vector<double> RotationAuc(const Scene& estimate, const Scene& truth,
                                       const std::vector<double>& thresholds_deg) {
  SPARSESFM_CHECK(estimate.num_cameras() >= 2, ErrorCode::kInsufficientCameras,
                  "rotation AUC needs at least 2 cameras");
  for (double t : thresholds_deg) {
    SPARSESFM_CHECK(t > 0.0, ErrorCode::kInvalidArgument, "threshold must be positive");
  }
  const std::vector<double> errors = PairwiseRotationErrorsDeg(estimate, truth);
  std::vector<double> out;
  out.reserve(thresholds_deg.size());
  for (double t : thresholds_deg) out.push_back(AucFromErrors(errors, t));
  return out;
}

/// Unweighted RMS reprojection error over the observations where `mask` is
/// nonzero (all observations when `mask` is empty).
inline double ReprojRmse(const Scene& scene, const std::vector<char>& mask = {}) {
  SPARSESFM_CHECK(mask.empty() || static_cast<int>(mask.size()) == scene.num_observations(),
                  ErrorCode::kDimensionMismatch, "mask length mismatch");
  double sum = 0.0;
  long count = 0;
  for (int k = 0; k < scene.num_observations(); ++k) {
    if (!mask.empty() && !mask[k]) continue;
    const Observation& obs = scene.observations[k];
    const Vec2 e = Project(scene.cameras[obs.camera_id], scene.points[obs.point_id].position) -
                   obs.pixel;
    sum += e.squaredNorm();
    ++count;
  }
  SPARSESFM_CHECK(count > 0, ErrorCode::kEmptyProblem, "no observations");
  return std::sqrt(sum / static_cast<double>(count));
}

/// Largest angle in radians between an observation's viewing ray and the
/// direction from its camera center to its point.
inline double MaxRayAngle(const Scene& scene) {
  double worst = 0.0;
  for (const Observation& obs : scene.observations) {
    const Camera& cam = scene.cameras[obs.camera_id];
    const Vec3 local((obs.pixel.x() - cam.principal_point.x()) / cam.focal,
                     (obs.pixel.y() - cam.principal_point.y()) / cam.focal, 1.0);
    const Vec3 ray = Rotate(cam.rotation.conjugate(), local);
    const Vec3 dir = scene.points[obs.point_id].position - cam.center;
    const double angle = std::atan2(ray.cross(dir).norm(), ray.dot(dir));
    worst = std::max(worst, angle);
  }
  return worst;
}

}  // namespace sparsesfm
