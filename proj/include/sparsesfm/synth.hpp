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
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "sparsesfm/common.hpp"
#include "sparsesfm/rotation.hpp"
#include "sparsesfm/scene.hpp"

namespace sparsesfm {

enum class Rig {
  kRing,    // cameras on a horizontal circle
  kSphere,  // cameras on a Fibonacci sphere
};

struct SynthConfig {
  int num_cameras = 10;
  int num_points = 100;
  Rig rig = Rig::kRing;
  double radius = 10.0;
  double focal = 500.0;
  double pixel_noise_sigma = 0.0;
  double visibility_fraction = 1.0;
  double outlier_fraction = 0.0;
  std::uint64_t seed = 0;
  // Nominal image window (centered on the principal point) for outliers.
  double image_width = 640.0;
  double image_height = 480.0;
};

struct SynthScene {
  Scene truth;     // exact projections
  Scene observed;  // noisy/outlier pixels; same parameters as truth
  // Per observation: replaced by a uniform random pixel.
  std::vector<char> outlier;
};

inline void ValidateSynthConfig(const SynthConfig& c) {
  SPARSESFM_CHECK(c.num_cameras >= 2, ErrorCode::kDegenerateConfig,
                  "need at least 2 cameras");
  SPARSESFM_CHECK(c.num_points >= 3, ErrorCode::kDegenerateConfig,
                  "need at least 3 points");
  SPARSESFM_CHECK(c.radius > 0.0 && c.focal > 0.0, ErrorCode::kDegenerateConfig,
                  "radius and focal must be positive");
  SPARSESFM_CHECK(c.pixel_noise_sigma >= 0.0, ErrorCode::kDegenerateConfig,
                  "noise sigma must be non-negative");
  SPARSESFM_CHECK(c.visibility_fraction > 0.0 && c.visibility_fraction <= 1.0,
                  ErrorCode::kDegenerateConfig, "visibility must be in (0, 1]");
  SPARSESFM_CHECK(c.outlier_fraction >= 0.0 && c.outlier_fraction < 1.0,
                  ErrorCode::kDegenerateConfig, "outlier fraction must be in [0, 1)");
  SPARSESFM_CHECK(c.image_width > 0.0 && c.image_height > 0.0,
                  ErrorCode::kDegenerateConfig, "image window must be positive");
}

/// World-to-camera rotation for a camera at `center` looking at the origin.
inline Quat LookAtOrigin(const Vec3& center) {
  const Vec3 forward = (-center).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(forward.dot(up)) > 0.99) up = Vec3::UnitY();
  const Vec3 x = forward.cross(up).normalized();
  const Vec3 y = forward.cross(x);
  Mat3 R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = forward.transpose();
  return Quat(R).normalized();
}

inline SynthScene Generate(const SynthConfig& config) {
  ValidateSynthConfig(config);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);

  SynthScene out;
  Scene& truth = out.truth;

  const int C = config.num_cameras;
  for (int i = 0; i < C; ++i) {
    Vec3 center;
    if (config.rig == Rig::kRing) {
      const double angle = 2.0 * kPi * i / C;
      center = config.radius * Vec3(std::cos(angle), std::sin(angle), 0.0);
    } else {
      const double golden = kPi * (3.0 - std::sqrt(5.0));
      const double z = 1.0 - 2.0 * (i + 0.5) / C;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      center = config.radius * Vec3(r * std::cos(golden * i), r * std::sin(golden * i), z);
    }
    Camera cam;
    cam.center = center;
    cam.rotation = LookAtOrigin(center);
    cam.focal = config.focal;
    truth.cameras.push_back(cam);
  }

  const double ball = 0.5 * config.radius;
  for (int j = 0; j < config.num_points; ++j) {
    Vec3 p;
    do {
      p = Vec3(sym(rng), sym(rng), sym(rng));
    } while (p.squaredNorm() > 1.0);
    truth.points.push_back({ball * p});
  }

  // Visibility: Bernoulli per (camera, point), topped up to two views.
  std::vector<std::vector<char>> visible(config.num_points, std::vector<char>(C, 0));
  for (int j = 0; j < config.num_points; ++j) {
    int count = 0;
    for (int i = 0; i < C; ++i) {
      if (config.visibility_fraction >= 1.0 || unit(rng) < config.visibility_fraction) {
        visible[j][i] = 1;
        ++count;
      }
    }
    while (count < 2) {
      const int i = static_cast<int>(rng() % static_cast<std::uint64_t>(C));
      if (!visible[j][i]) {
        visible[j][i] = 1;
        ++count;
      }
    }
  }
  for (int i = 0; i < C; ++i) {
    for (int j = 0; j < config.num_points; ++j) {
      if (!visible[j][i]) continue;
      const Camera& cam = truth.cameras[i];
      const Vec3& X = truth.points[j].position;
      Observation obs;
      obs.camera_id = i;
      obs.point_id = j;
      obs.pixel = Project(cam, X);
      obs.depth = ToCameraFrame(cam, X).z();
      truth.observations.push_back(obs);
    }
  }

  out.observed = truth;
  const int num_obs = truth.num_observations();
  if (config.pixel_noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config.pixel_noise_sigma);
    for (auto& obs : out.observed.observations) {
      const double du = noise(rng);
      const double dv = noise(rng);
      obs.pixel += Vec2(du, dv);
    }
  }
  out.outlier.assign(num_obs, 0);
  const int num_outliers =
      static_cast<int>(std::lround(config.outlier_fraction * num_obs));
  if (num_outliers > 0) {
    std::vector<int> order(num_obs);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates with our own draws so the result does not depend
    // on the standard library's shuffle.
    for (int k = 0; k < num_outliers; ++k) {
      const int pick =
          k + static_cast<int>(rng() % static_cast<std::uint64_t>(num_obs - k));
      std::swap(order[k], order[pick]);
      const int idx = order[k];
      out.outlier[idx] = 1;
      const double u = (unit(rng) - 0.5) * config.image_width;
      const double v = (unit(rng) - 0.5) * config.image_height;
      out.observed.observations[idx].pixel = Vec2(u, v);
    }
  }
  return out;
}

/// Bounding-box diagonal of camera centers and points.
inline double SceneDiameter(const Scene& scene) {
  if (scene.cameras.empty() && scene.points.empty()) return 0.0;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& c : scene.cameras) {
    lo = lo.cwiseMin(c.center);
    hi = hi.cwiseMax(c.center);
  }
  for (const auto& p : scene.points) {
    lo = lo.cwiseMin(p.position);
    hi = hi.cwiseMax(p.position);
  }
  return (hi - lo).norm();
}

inline Vec3 RandomUnitVector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    const double x = n(rng);
    const double y = n(rng);
    const double z = n(rng);
    v = Vec3(x, y, z);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

struct Perturbation {
  double rotation_deg = 0.0;
  double center_fraction = 0.0;  // of the scene diameter
  double focal_fraction = 0.0;
  double point_fraction = 0.0;   // of the scene diameter
  std::uint64_t seed = 0;
};

/// Rotations get a random-axis rotation of exactly rotation_deg; centers and
/// points move by exactly the given fraction of the scene diameter in a
/// random direction; focals are scaled by 1 +/- focal_fraction.
inline Scene Perturb(const Scene& scene, const Perturbation& p) {
  Scene out = scene;
  std::mt19937_64 rng(p.seed);
  const double diameter = SceneDiameter(scene);
  const double angle = DegToRad(p.rotation_deg);
  for (auto& cam : out.cameras) {
    const Vec3 axis = RandomUnitVector(rng);
    const Vec3 dir = RandomUnitVector(rng);
    const bool grow = (rng() & 1u) != 0;
    if (p.rotation_deg != 0.0) {
      cam.rotation = (QuaternionFromAxisAngle(axis, angle) * cam.rotation).normalized();
    }
    if (p.center_fraction != 0.0) {
      cam.center += (p.center_fraction * diameter) * dir;
    }
    if (p.focal_fraction != 0.0) {
      cam.focal *= grow ? 1.0 + p.focal_fraction : 1.0 - p.focal_fraction;
    }
  }
  if (p.point_fraction != 0.0) {
    for (auto& point : out.points) {
      point.position += (p.point_fraction * diameter) * RandomUnitVector(rng);
    }
  }
  return out;
}

}  // namespace sparsesfm
