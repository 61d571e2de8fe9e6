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
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sparsesfm/common.hpp"
#include "sparsesfm/rotation.hpp"
#include "sparsesfm/scene.hpp"

namespace sparsesfm {

namespace io_internal {

inline std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  SPARSESFM_CHECK(in.good(), ErrorCode::kIOError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  SPARSESFM_CHECK(!in.bad(), ErrorCode::kIOError, "cannot read " + path.string());
  return ss.str();
}

inline void WriteFile(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  SPARSESFM_CHECK(out.good(), ErrorCode::kIOError, "cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  SPARSESFM_CHECK(out.good(), ErrorCode::kIOError, "cannot write " + path.string());
}

inline bool ParseNumber(std::string_view tok, double* out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), *out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size() && std::isfinite(*out);
}

inline bool ParseNumber(std::string_view tok, long long* out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), *out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

inline bool IsSpace(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

/// Whitespace tokenizer that remembers the line of each token.
class TokenStream {
 public:
  TokenStream(std::string_view text, std::string source)
      : text_(text), source_(std::move(source)) {}

  bool Next(std::string_view* tok) {
    while (pos_ < text_.size() && IsSpace(text_[pos_])) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
    if (pos_ >= text_.size()) return false;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !IsSpace(text_[pos_])) ++pos_;
    *tok = text_.substr(start, pos_ - start);
    token_line_ = line_;
    return true;
  }

  template <typename T>
  T Read(std::string_view what) {
    std::string_view tok;
    if (!Next(&tok)) Fail(line_, "unexpected end of file, expected " + std::string(what));
    T value{};
    if (!ParseNumber(tok, &value)) {
      Fail(token_line_, "invalid " + std::string(what) + " '" + std::string(tok) + "'");
    }
    return value;
  }

  [[noreturn]] void Fail(int line, const std::string& reason) const {
    throw Error(ErrorCode::kParseError, source_ + ":" + std::to_string(line) + ": " + reason);
  }

  int token_line() const { return token_line_; }

 private:
  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int token_line_ = 1;
};

inline std::string FormatDouble(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

}  // namespace io_internal

// ---------------------------------------------------------------------------
// BAL

/// Parses a BAL problem from text. `source` names the input in error messages.
inline Scene ParseBal(std::string_view text, const std::string& source = "<bal>") {
  io_internal::TokenStream ts(text, source);
  const long long C = ts.Read<long long>("camera count");
  const long long P = ts.Read<long long>("point count");
  const long long N = ts.Read<long long>("observation count");
  if (C < 0 || P < 0 || N < 0) ts.Fail(1, "negative count in header");

  Scene scene;
  scene.cameras.resize(static_cast<std::size_t>(C));
  scene.points.resize(static_cast<std::size_t>(P));
  scene.observations.reserve(static_cast<std::size_t>(N));
  for (long long k = 0; k < N; ++k) {
    Observation obs;
    const long long c = ts.Read<long long>("camera index");
    const int line = ts.token_line();
    const long long p = ts.Read<long long>("point index");
    obs.pixel.x() = ts.Read<double>("u");
    obs.pixel.y() = ts.Read<double>("v");
    if (c < 0 || c >= C || p < 0 || p >= P) {
      throw Error(ErrorCode::kCountMismatch,
                  source + ":" + std::to_string(line) +
                      ": observation references an index beyond the header counts");
    }
    obs.camera_id = static_cast<int>(c);
    obs.point_id = static_cast<int>(p);
    scene.observations.push_back(obs);
  }
  for (auto& cam : scene.cameras) {
    Vec3 aa, T;
    for (int i = 0; i < 3; ++i) aa[i] = ts.Read<double>("camera rotation");
    for (int i = 0; i < 3; ++i) T[i] = ts.Read<double>("camera translation");
    cam.focal = ts.Read<double>("focal");
    const int line = ts.token_line();
    cam.distortion.x() = ts.Read<double>("k1");
    cam.distortion.y() = ts.Read<double>("k2");
    if (!(cam.focal > 0.0)) ts.Fail(line, "focal must be positive");
    cam.model = CameraModel::kBalRadial;
    cam.rotation = AngleAxisToQuaternion(aa);
    cam.center = -(RotationMatrix(cam.rotation).transpose() * T);
  }
  for (auto& point : scene.points) {
    for (int i = 0; i < 3; ++i) point.position[i] = ts.Read<double>("point coordinate");
  }
  std::string_view extra;
  if (ts.Next(&extra)) {
    throw Error(ErrorCode::kCountMismatch,
                source + ":" + std::to_string(ts.token_line()) +
                    ": trailing data after the declared records");
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& obs : scene.observations) {
    SPARSESFM_CHECK(seen.emplace(obs.camera_id, obs.point_id).second,
                    ErrorCode::kDuplicateObservation,
                    source + ": camera " + std::to_string(obs.camera_id) + " observes point " +
                        std::to_string(obs.point_id) + " twice");
  }
  return scene;
}

inline Scene ReadBal(const std::filesystem::path& path) {
  return ParseBal(io_internal::ReadFile(path), path.string());
}

// ---------------------------------------------------------------------------
// Tracks
//
//   C P N
//   id qw qx qy qz tx ty tz f cx cy [k1 k2]   (C lines; t is the camera center,
//                                              k1 k2 select the BAL model)
//   id x y z                                   (P lines)
//   camera_id point_id u v [depth]             (N lines)
//
// '#' starts a comment that runs to the end of the line.

inline std::string FormatTracks(const Scene& scene) {
  using io_internal::FormatDouble;
  const bool has_depth =
      !scene.observations.empty() && scene.observations.front().depth.has_value();
  for (const auto& obs : scene.observations) {
    SPARSESFM_CHECK(obs.depth.has_value() == has_depth, ErrorCode::kInvalidArgument,
                    "depth must be present on all observations or none");
  }
  std::string out;
  out += "# sparsesfm tracks\n";
  out += std::to_string(scene.num_cameras()) + " " + std::to_string(scene.num_points()) + " " +
         std::to_string(scene.num_observations()) + "\n";
  out += "# camera: id qw qx qy qz tx ty tz f cx cy [k1 k2]\n";
  for (int i = 0; i < scene.num_cameras(); ++i) {
    const Camera& c = scene.cameras[i];
    out += std::to_string(i);
    for (double v : {c.rotation.w(), c.rotation.x(), c.rotation.y(), c.rotation.z(),
                     c.center.x(), c.center.y(), c.center.z(), c.focal,
                     c.principal_point.x(), c.principal_point.y()}) {
      out += ' ';
      out += FormatDouble(v);
    }
    if (c.model == CameraModel::kBalRadial) {
      out += ' ' + FormatDouble(c.distortion.x()) + ' ' + FormatDouble(c.distortion.y());
    }
    out += '\n';
  }
  out += "# point: id x y z\n";
  for (int j = 0; j < scene.num_points(); ++j) {
    const Vec3& p = scene.points[j].position;
    out += std::to_string(j) + ' ' + FormatDouble(p.x()) + ' ' + FormatDouble(p.y()) + ' ' +
           FormatDouble(p.z()) + '\n';
  }
  out += has_depth ? "# observation: camera_id point_id u v depth\n"
                   : "# observation: camera_id point_id u v\n";
  for (const auto& obs : scene.observations) {
    out += std::to_string(obs.camera_id) + ' ' + std::to_string(obs.point_id) + ' ' +
           FormatDouble(obs.pixel.x()) + ' ' + FormatDouble(obs.pixel.y());
    if (has_depth) out += ' ' + FormatDouble(*obs.depth);
    out += '\n';
  }
  return out;
}

inline Scene ParseTracks(std::string_view text, const std::string& source = "<tracks>") {
  // Collect non-empty, comment-stripped lines with their numbers.
  std::vector<std::pair<int, std::vector<std::string_view>>> lines;
  {
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      ++line_no;
      std::string_view line = text.substr(pos, end - pos);
      if (const auto hash = line.find('#'); hash != std::string_view::npos) {
        line = line.substr(0, hash);
      }
      std::vector<std::string_view> toks;
      std::size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && io_internal::IsSpace(line[i])) ++i;
        const std::size_t start = i;
        while (i < line.size() && !io_internal::IsSpace(line[i])) ++i;
        if (i > start) toks.push_back(line.substr(start, i - start));
      }
      if (!toks.empty()) lines.emplace_back(line_no, std::move(toks));
      if (end == text.size()) break;
      pos = end + 1;
    }
  }
  auto fail = [&](int line, const std::string& reason) -> void {
    throw Error(ErrorCode::kParseError, source + ":" + std::to_string(line) + ": " + reason);
  };
  auto num = [&](int line, std::string_view tok, const char* what) {
    double v = 0.0;
    if (!io_internal::ParseNumber(tok, &v)) {
      fail(line, std::string("invalid ") + what + " '" + std::string(tok) + "'");
    }
    return v;
  };
  auto index = [&](int line, std::string_view tok, long long limit, const char* what) {
    long long v = 0;
    if (!io_internal::ParseNumber(tok, &v)) {
      fail(line, std::string("invalid ") + what + " '" + std::string(tok) + "'");
    }
    if (v < 0 || v >= limit) fail(line, std::string(what) + " out of range");
    return static_cast<int>(v);
  };

  if (lines.empty()) fail(1, "missing header");
  const auto& [header_line, header] = lines.front();
  if (header.size() != 3) fail(header_line, "header must be 'C P N'");
  long long counts[3];
  for (int i = 0; i < 3; ++i) {
    if (!io_internal::ParseNumber(header[i], &counts[i]) || counts[i] < 0) {
      fail(header_line, "invalid count '" + std::string(header[i]) + "'");
    }
  }
  const long long C = counts[0], P = counts[1], N = counts[2];
  const long long expected = 1 + C + P + N;
  if (static_cast<long long>(lines.size()) != expected) {
    const int at = static_cast<long long>(lines.size()) < expected ? lines.back().first
                                                                    : lines[expected].first;
    throw Error(ErrorCode::kCountMismatch,
                source + ":" + std::to_string(at) + ": expected " + std::to_string(C) +
                    " cameras, " + std::to_string(P) + " points and " + std::to_string(N) +
                    " observations, found " + std::to_string(lines.size() - 1) +
                    " records");
  }

  Scene scene;
  scene.cameras.resize(static_cast<std::size_t>(C));
  scene.points.resize(static_cast<std::size_t>(P));
  std::vector<char> seen_camera(static_cast<std::size_t>(C), 0);
  std::vector<char> seen_point(static_cast<std::size_t>(P), 0);
  std::size_t row = 1;
  for (long long i = 0; i < C; ++i, ++row) {
    const auto& [line, t] = lines[row];
    if (t.size() != 11 && t.size() != 13) fail(line, "camera record needs 11 or 13 fields");
    const int id = index(line, t[0], C, "camera id");
    if (seen_camera[id]) fail(line, "duplicate camera id");
    seen_camera[id] = 1;
    Camera& cam = scene.cameras[id];
    cam.rotation = Quat(num(line, t[1], "qw"), num(line, t[2], "qx"), num(line, t[3], "qy"),
                        num(line, t[4], "qz"));
    if (!(cam.rotation.norm() > 1e-12)) fail(line, "zero quaternion");
    cam.center = Vec3(num(line, t[5], "tx"), num(line, t[6], "ty"), num(line, t[7], "tz"));
    cam.focal = num(line, t[8], "focal");
    if (!(cam.focal > 0.0)) fail(line, "focal must be positive");
    cam.principal_point = Vec2(num(line, t[9], "cx"), num(line, t[10], "cy"));
    if (t.size() == 13) {
      cam.model = CameraModel::kBalRadial;
      cam.distortion = Vec2(num(line, t[11], "k1"), num(line, t[12], "k2"));
    }
  }
  for (long long j = 0; j < P; ++j, ++row) {
    const auto& [line, t] = lines[row];
    if (t.size() != 4) fail(line, "point record needs 4 fields");
    const int id = index(line, t[0], P, "point id");
    if (seen_point[id]) fail(line, "duplicate point id");
    seen_point[id] = 1;
    scene.points[id].position =
        Vec3(num(line, t[1], "x"), num(line, t[2], "y"), num(line, t[3], "z"));
  }
  scene.observations.reserve(static_cast<std::size_t>(N));
  std::set<std::pair<int, int>> pairs;
  std::optional<bool> has_depth;
  for (long long k = 0; k < N; ++k, ++row) {
    const auto& [line, t] = lines[row];
    if (t.size() != 4 && t.size() != 5) fail(line, "observation record needs 4 or 5 fields");
    const bool depth_here = t.size() == 5;
    if (!has_depth) has_depth = depth_here;
    if (*has_depth != depth_here) {
      fail(line, "depth column must be present on all observations or none");
    }
    Observation obs;
    obs.camera_id = index(line, t[0], C, "camera id");
    obs.point_id = index(line, t[1], P, "point id");
    obs.pixel = Vec2(num(line, t[2], "u"), num(line, t[3], "v"));
    if (depth_here) {
      obs.depth = num(line, t[4], "depth");
      if (!(*obs.depth > 0.0)) fail(line, "depth must be positive");
    }
    if (!pairs.emplace(obs.camera_id, obs.point_id).second) {
      throw Error(ErrorCode::kDuplicateObservation,
                  source + ":" + std::to_string(line) + ": camera " +
                      std::to_string(obs.camera_id) + " observes point " +
                      std::to_string(obs.point_id) + " twice");
    }
    scene.observations.push_back(obs);
  }
  return scene;
}

inline Scene ReadTracks(const std::filesystem::path& path) {
  return ParseTracks(io_internal::ReadFile(path), path.string());
}

inline void WriteTracks(const Scene& scene, const std::filesystem::path& path) {
  io_internal::WriteFile(path, FormatTracks(scene));
}

// ---------------------------------------------------------------------------
// COLMAP text export

/// Writes cameras.txt, images.txt and points3D.txt into `dir` (created if
/// needed). Pixel coordinates are shifted so that each principal point sits at
/// the center of an image that contains all of that camera's observations.
inline void WriteColmapText(const Scene& scene, const std::filesystem::path& dir) {
  using io_internal::FormatDouble;
  for (const auto& cam : scene.cameras) {
    SPARSESFM_CHECK(cam.model == CameraModel::kPinhole, ErrorCode::kUnsupportedModel,
                    "COLMAP export supports pinhole cameras only");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  SPARSESFM_CHECK(!ec, ErrorCode::kIOError, "cannot create " + dir.string());

  const int C = scene.num_cameras();
  std::vector<Vec2> half_extent(C, Vec2::Ones());
  std::vector<std::vector<int>> per_camera(C);
  std::vector<std::vector<std::pair<int, int>>> tracks(scene.num_points());
  for (int k = 0; k < scene.num_observations(); ++k) {
    const Observation& obs = scene.observations[k];
    const Camera& cam = scene.cameras[obs.camera_id];
    const Vec2 d = (obs.pixel - cam.principal_point).cwiseAbs();
    half_extent[obs.camera_id] = half_extent[obs.camera_id].cwiseMax(d);
    tracks[obs.point_id].emplace_back(obs.camera_id,
                                      static_cast<int>(per_camera[obs.camera_id].size()));
    per_camera[obs.camera_id].push_back(k);
  }
  std::vector<Vec2> shift(C);
  std::vector<std::pair<long long, long long>> size(C);

  std::string cameras = "# Camera list with one line of data per camera:\n"
                        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
                        "# Number of cameras: " + std::to_string(C) + "\n";
  for (int i = 0; i < C; ++i) {
    const Camera& cam = scene.cameras[i];
    const long long w = 2 * static_cast<long long>(std::ceil(half_extent[i].x())) + 2;
    const long long h = 2 * static_cast<long long>(std::ceil(half_extent[i].y())) + 2;
    size[i] = {w, h};
    shift[i] = Vec2(0.5 * static_cast<double>(w), 0.5 * static_cast<double>(h)) - cam.principal_point;
    cameras += std::to_string(i + 1) + " SIMPLE_PINHOLE " + std::to_string(w) + ' ' +
               std::to_string(h) + ' ' + FormatDouble(cam.focal) + ' ' +
               FormatDouble(0.5 * static_cast<double>(w)) + ' ' +
               FormatDouble(0.5 * static_cast<double>(h)) + '\n';
  }

  std::string images = "# Image list with two lines of data per image:\n"
                       "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
                       "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
                       "# Number of images: " + std::to_string(C) + "\n";
  for (int i = 0; i < C; ++i) {
    const Camera& cam = scene.cameras[i];
    const Quat q = cam.rotation.normalized();
    const Vec3 T = -(RotationMatrix(q) * cam.center);
    char name[32];
    std::snprintf(name, sizeof(name), "image_%06d.jpg", i + 1);
    images += std::to_string(i + 1);
    for (double v : {q.w(), q.x(), q.y(), q.z(), T.x(), T.y(), T.z()}) {
      images += ' ' + FormatDouble(v == 0.0 ? 0.0 : v);
    }
    images += ' ' + std::to_string(i + 1) + ' ' + name + '\n';
    bool first = true;
    for (int k : per_camera[i]) {
      const Observation& obs = scene.observations[k];
      const Vec2 px = obs.pixel + shift[i];
      if (!first) images += ' ';
      first = false;
      images += FormatDouble(px.x()) + ' ' + FormatDouble(px.y()) + ' ' +
                std::to_string(obs.point_id + 1);
    }
    images += '\n';
  }

  std::string points = "# 3D point list with one line of data per point:\n"
                       "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
                       "# Number of points: " + std::to_string(scene.num_points()) + "\n";
  std::vector<double> err_sum(scene.num_points(), 0.0);
  for (const auto& obs : scene.observations) {
    const Camera& cam = scene.cameras[obs.camera_id];
    const Vec3 p = ToCameraFrame(cam, scene.points[obs.point_id].position);
    if (IsProjectable(cam, p)) err_sum[obs.point_id] += (ProjectCameraFrame(cam, p) - obs.pixel).norm();
  }
  for (int j = 0; j < scene.num_points(); ++j) {
    const Vec3& X = scene.points[j].position;
    const double err = tracks[j].empty() ? 0.0 : err_sum[j] / static_cast<double>(tracks[j].size());
    points += std::to_string(j + 1) + ' ' + FormatDouble(X.x()) + ' ' + FormatDouble(X.y()) +
              ' ' + FormatDouble(X.z()) + " 128 128 128 " + FormatDouble(err);
    for (const auto& [cam, idx] : tracks[j]) {
      points += ' ' + std::to_string(cam + 1) + ' ' + std::to_string(idx);
    }
    points += '\n';
  }
  io_internal::WriteFile(dir / "cameras.txt", cameras);
  io_internal::WriteFile(dir / "images.txt", images);
  io_internal::WriteFile(dir / "points3D.txt", points);
}

// ---------------------------------------------------------------------------
// PLY

using Rgb = std::array<std::uint8_t, 3>;

inline std::string FormatPly(const std::vector<Vec3>& points, const std::vector<Rgb>* colors = nullptr) {
  SPARSESFM_CHECK(colors == nullptr || colors->size() == points.size(),
                  ErrorCode::kDimensionMismatch, "color count must match point count");
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                    std::to_string(points.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n";
  if (colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  const std::size_t stride = 12 + (colors ? 3 : 0);
  const std::size_t header = out.size();
  out.resize(header + stride * points.size());
  char* dst = out.data() + header;
  for (std::size_t i = 0; i < points.size(); ++i) {
    SPARSESFM_CHECK(points[i].allFinite(), ErrorCode::kInvalidArgument,
                    "point " + std::to_string(i) + " is not finite");
    for (int a = 0; a < 3; ++a) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(points[i][a]));
      if constexpr (std::endian::native == std::endian::big) {
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) |
               (bits >> 24);
      }
      std::memcpy(dst, &bits, 4);
      dst += 4;
    }
    if (colors) {
      std::memcpy(dst, (*colors)[i].data(), 3);
      dst += 3;
    }
  }
  return out;
}

inline void WritePly(const std::vector<Vec3>& points, const std::filesystem::path& path,
                     const std::vector<Rgb>* colors = nullptr) {
  io_internal::WriteFile(path, FormatPly(points, colors));
}

inline std::vector<Vec3> ScenePoints(const Scene& scene) {
  std::vector<Vec3> out;
  out.reserve(scene.points.size());
  for (const auto& p : scene.points) out.push_back(p.position);
  return out;
}

}  // namespace sparsesfm
