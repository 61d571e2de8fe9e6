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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace sparsesfm {
namespace {

Camera PinholeCamera(double focal) {
  Camera cam;
  cam.focal = focal;
  return cam;
}

// Quaternion to matrix written out from the standard formula.
Mat3 MatrixFromQuaternion(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n, x /= n, y /= n, z /= n;
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

TEST(Project, OpticalAxisMapsToPrincipalPoint) {
  const Vec2 px = Project(PinholeCamera(1.0), Vec3(0, 0, 1));
  EXPECT_EQ(px, Vec2(0, 0));
}

TEST(Project, PinholeArithmetic) {
  const Vec2 px = Project(PinholeCamera(500.0), Vec3(0.1, -0.2, 2.0));
  EXPECT_NEAR(px.x(), 25.0, 1e-12);
  EXPECT_NEAR(px.y(), -50.0, 1e-12);
}

TEST(Project, HalfTurnAboutZ) {
  Camera cam = PinholeCamera(1.0);
  cam.rotation = QuaternionFromAxisAngle(Vec3::UnitZ(), kPi);
  const Vec2 px = Project(cam, Vec3(0.3, 0.4, 1.0));
  EXPECT_NEAR(px.x(), -0.3, 1e-12);
  EXPECT_NEAR(px.y(), -0.4, 1e-12);
}

TEST(Project, PrincipalPointOffset) {
  Camera cam = PinholeCamera(2.0);
  cam.principal_point = Vec2(10, 20);
  const Vec2 px = Project(cam, Vec3(1, 1, 2));
  EXPECT_NEAR(px.x(), 11.0, 1e-12);
  EXPECT_NEAR(px.y(), 21.0, 1e-12);
}

TEST(Project, DegenerateDepthThrows) {
  try {
    Project(PinholeCamera(1.0), Vec3(1, 1, 0));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateProjection);
  }
}

TEST(Project, BalRadialMatchesHandFormula) {
  Camera cam = PinholeCamera(400.0);
  cam.model = CameraModel::kBalRadial;
  cam.distortion = Vec2(0.1, -0.05);
  // Identity pose: the camera frame equals the world frame.
  const Vec3 X(0.2, -0.4, -2.0);
  const double nx = -0.2 / -2.0, ny = 0.4 / -2.0;
  const double r2 = nx * nx + ny * ny;
  const double r = 1.0 + 0.1 * r2 - 0.05 * r2 * r2;
  const Vec2 px = Project(cam, X);
  EXPECT_NEAR(px.x(), 400.0 * r * nx, 1e-12);
  EXPECT_NEAR(px.y(), 400.0 * r * ny, 1e-12);
}

TEST(Project, InvariantUnderRigidTransformOfPoseAndPoint) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Camera cam = PinholeCamera(300.0 + 100.0 * std::abs(n(rng)));
    cam.rotation = Quat(n(rng), n(rng), n(rng), n(rng)).normalized();
    cam.center = Vec3(n(rng), n(rng), n(rng));
    Vec3 X = cam.center + Rotate(cam.rotation.conjugate(), Vec3(n(rng), n(rng), 4.0 + n(rng)));
    const Quat q0 = Quat(n(rng), n(rng), n(rng), n(rng)).normalized();
    const Vec3 t0(n(rng), n(rng), n(rng));
    Camera moved = cam;
    moved.rotation = cam.rotation * q0.conjugate();
    moved.center = Rotate(q0, cam.center) + t0;
    const Vec3 X_moved = Rotate(q0, X) + t0;
    EXPECT_LT((Project(cam, X) - Project(moved, X_moved)).norm(), 1e-9);
  }
}

TEST(Rotate, Identity) {
  EXPECT_EQ(Rotate(Quat::Identity(), Vec3(1, 2, 3)), Vec3(1, 2, 3));
}

TEST(Rotate, QuarterTurnAboutZ) {
  const Vec3 v = Rotate(QuaternionFromAxisAngle(Vec3::UnitZ(), kPi / 2), Vec3(1, 0, 0));
  EXPECT_NEAR(v.x(), 0.0, 1e-15);
  EXPECT_NEAR(v.y(), 1.0, 1e-15);
  EXPECT_NEAR(v.z(), 0.0, 1e-15);
}

TEST(Rotate, MatchesExplicitMatrixAndPreservesGeometry) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
    const Quat q = Quat(w, x, y, z).normalized();
    const Vec3 a(n(rng), n(rng), n(rng)), b(n(rng), n(rng), n(rng));
    const Vec3 ra = Rotate(q, a), rb = Rotate(q, b);
    EXPECT_LT((ra - MatrixFromQuaternion(w, x, y, z) * a).norm(), 1e-12);
    EXPECT_NEAR(ra.norm(), a.norm(), 1e-12 * (1 + a.norm()));
    EXPECT_NEAR(ra.dot(rb), a.dot(b), 1e-12 * (1 + a.norm() * b.norm()));
  }
}

TEST(Rotate, NormalizesNonUnitQuaternion) {
  const Quat q(2.0, 0.0, 0.0, 2.0);
  const Vec3 v = Rotate(q, Vec3(1, 0, 0));
  EXPECT_NEAR(v.y(), 1.0, 1e-15);
  EXPECT_NEAR(v.norm(), 1.0, 1e-15);
}

TEST(Rotate, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    // Deliberately non-unit: the Jacobian is of the normalizing map.
    const Vec4 q(1.5 * n(rng), n(rng), n(rng), n(rng));
    const Vec3 v(n(rng), n(rng), n(rng));
    auto f = [&](const VecX& p) -> VecX {
      return Rotate(Quat(p[0], p[1], p[2], p[3]), v);
    };
    const MatX numeric = testing::NumericJacobian(f, q, 1e-6);
    const MatX analytic = RotateJacobianWrtQuaternion(Quat(q[0], q[1], q[2], q[3]), v);
    EXPECT_LT(testing::RelativeError(analytic, numeric), 1e-7);
  }
}

TEST(AngleAxis, RoundTrip) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    // Angles below pi so the representation is unique.
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
    const Vec3 aa = axis * (3.1 * std::abs(std::tanh(n(rng))));
    const Vec3 back = QuaternionToAngleAxis(AngleAxisToQuaternion(aa));
    EXPECT_LT((aa - back).norm(), 1e-12);
  }
  EXPECT_EQ(QuaternionToAngleAxis(AngleAxisToQuaternion(Vec3::Zero())), Vec3::Zero());
}

TEST(RotationAngle, RelativeAngleOfKnownRotation) {
  const Quat a = QuaternionFromAxisAngle(Vec3(1, 2, 3).normalized(), 0.7);
  const Quat b = QuaternionFromAxisAngle(Vec3(-1, 0, 1).normalized(), 0.3);
  const Quat delta = QuaternionFromAxisAngle(Vec3(0, 1, 0), DegToRad(2.0));
  EXPECT_NEAR(RadToDeg(RelativeRotationAngle(delta * a, a)), 2.0, 1e-9);
  EXPECT_NEAR(RelativeRotationAngle(b, b), 0.0, 1e-12);
  // q and -q are the same rotation.
  const Quat neg(-a.w(), -a.x(), -a.y(), -a.z());
  EXPECT_NEAR(RelativeRotationAngle(a, neg), 0.0, 1e-12);
}

TEST(RobustLoss, HuberInlierBranch) {
  const RobustValue v = EvaluateRobust(RobustLoss::Huber(1.0), 0.25);
  EXPECT_EQ(v.cost, 0.25);
  EXPECT_EQ(v.weight, 1.0);
}

TEST(RobustLoss, HuberOutlierBranch) {
  const RobustValue v = EvaluateRobust(RobustLoss::Huber(1.0), 4.0);
  EXPECT_DOUBLE_EQ(v.cost, 3.0);
  EXPECT_DOUBLE_EQ(v.weight, 0.5);
}

TEST(RobustLoss, Trivial) {
  const RobustValue v = EvaluateRobust(RobustLoss::Trivial(), 7.0);
  EXPECT_EQ(v.cost, 7.0);
  EXPECT_EQ(v.weight, 1.0);
}

TEST(RobustLoss, HuberIsContinuouslyDifferentiableAtThreshold) {
  for (double delta : {0.1, 1.0, 3.0}) {
    const RobustLoss loss = RobustLoss::Huber(delta);
    const double s = delta * delta;
    const double h = 1e-8;
    const double below = EvaluateRobust(loss, s - h).cost;
    const double at = EvaluateRobust(loss, s).cost;
    const double above = EvaluateRobust(loss, s + h).cost;
    EXPECT_NEAR(below, at, 2 * h);
    EXPECT_NEAR(above, at, 2 * h);
    // d cost / d s is 1 on both sides of the threshold.
    EXPECT_NEAR((above - at) / h, 1.0, 1e-6);
    EXPECT_NEAR((at - below) / h, 1.0, 1e-6);
  }
}

TEST(ValidateScene, RejectsDuplicatePair) {
  Scene s;
  s.cameras.resize(1);
  s.points.resize(1);
  Observation o;
  s.observations = {o, o};
  try {
    ValidateScene(s);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateObservation);
  }
}

TEST(ValidateScene, RejectsBadIndicesFocalAndDepth) {
  Scene s;
  s.cameras.resize(1);
  s.points.resize(1);
  Observation o;
  o.point_id = 3;
  s.observations = {o};
  EXPECT_THROW(ValidateScene(s), Error);
  s.observations[0].point_id = 0;
  s.observations[0].depth = -1.0;
  EXPECT_THROW(ValidateScene(s), Error);
  s.observations[0].depth = 1.0;
  EXPECT_NO_THROW(ValidateScene(s));
  s.cameras[0].focal = 0.0;
  EXPECT_THROW(ValidateScene(s), Error);
}

}  // namespace
}  // namespace sparsesfm
