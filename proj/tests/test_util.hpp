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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "sparsesfm.hpp"

namespace sparsesfm::testing {

/// Dense copy of a block-sparse Jacobian, built entry by entry from the
/// layout offsets.
inline MatX DenseJacobian(const BlockSparseJacobian& jac) {
  const BlockLayout& layout = jac.layout();
  MatX out = MatX::Zero(layout.total_residuals(), layout.total_params());
  for (int k = 0; k < jac.num_entries(); ++k) {
    const auto& e = jac.entry(k);
    const auto& rb = layout.residual_block(e.residual_block);
    const auto& pb = layout.parameter_block(e.param_block);
    for (int i = 0; i < rb.height; ++i) {
      for (int j = 0; j < pb.width; ++j) {
        out(rb.offset + i, pb.offset + j) = jac.block(k)(i, j);
      }
    }
  }
  return out;
}

/// Central differences of a vector function, step h * max(1, |theta_k|).
inline MatX NumericJacobian(const std::function<VecX(const VecX&)>& f, const VecX& theta,
                            double h) {
  const VecX f0 = f(theta);
  MatX out(f0.size(), theta.size());
  for (int k = 0; k < theta.size(); ++k) {
    const double step = h * std::max(1.0, std::abs(theta[k]));
    VecX plus = theta, minus = theta;
    plus[k] += step;
    minus[k] -= step;
    out.col(k) = (f(plus) - f(minus)) / (2.0 * step);
  }
  return out;
}

inline double RelativeError(const MatX& a, const MatX& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

/// Small synthetic BA scene with randomized size, visibility and a mild
/// perturbation so residuals and Jacobians are generic.
inline Scene RandomBAScene(std::uint64_t seed, int max_cameras = 6, int max_points = 30) {
  std::mt19937_64 rng(seed);
  SynthConfig c;
  c.num_cameras = 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_cameras - 1));
  c.num_points = 3 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_points - 2));
  c.visibility_fraction = 0.6 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng);
  c.pixel_noise_sigma = 0.5;
  c.seed = rng();
  c.rig = (rng() & 1u) ? Rig::kRing : Rig::kSphere;
  Perturbation p;
  p.rotation_deg = 1.0;
  p.center_fraction = 0.01;
  p.focal_fraction = 0.02;
  p.point_fraction = 0.01;
  p.seed = rng();
  Scene scene = Perturb(Generate(c).observed, p);
  for (auto& cam : scene.cameras) {
    cam.principal_point = Vec2(std::uniform_real_distribution<double>(-5, 5)(rng),
                               std::uniform_real_distribution<double>(-5, 5)(rng));
  }
  return scene;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("sparsesfm_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string Slurp(const std::filesystem::path& path) {
  return io_internal::ReadFile(path);
}

}  // namespace sparsesfm::testing
