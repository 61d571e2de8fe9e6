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

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace sparsesfm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

enum class ErrorCode {
  kDegenerateProjection,
  kLayoutMismatch,
  kDimensionMismatch,
  kSolverFailure,
  kSingularBlock,
  kCGStall,
  kZeroQuaternion,
  kEmptyProblem,
  kMissingDepth,
  kParseError,
  kCountMismatch,
  kDuplicateObservation,
  kUnsupportedModel,
  kIOError,
  kDegenerateConfig,
  kInsufficientCameras,
  kInvalidArgument,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateProjection: return "DegenerateProjection";
    case ErrorCode::kLayoutMismatch: return "LayoutMismatch";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kSolverFailure: return "SolverFailure";
    case ErrorCode::kSingularBlock: return "SingularBlock";
    case ErrorCode::kCGStall: return "CGStall";
    case ErrorCode::kZeroQuaternion: return "ZeroQuaternion";
    case ErrorCode::kEmptyProblem: return "EmptyProblem";
    case ErrorCode::kMissingDepth: return "MissingDepth";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kCountMismatch: return "CountMismatch";
    case ErrorCode::kDuplicateObservation: return "DuplicateObservation";
    case ErrorCode::kUnsupportedModel: return "UnsupportedModel";
    case ErrorCode::kIOError: return "IOError";
    case ErrorCode::kDegenerateConfig: return "DegenerateConfig";
    case ErrorCode::kInsufficientCameras: return "InsufficientCameras";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define SPARSESFM_CHECK(cond, code, msg)            \
  do {                                              \
    if (!(cond)) {                                  \
      throw ::sparsesfm::Error((code), (msg));      \
    }                                               \
  } while (0)

}  // namespace sparsesfm
