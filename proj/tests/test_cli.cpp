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

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include <json.hpp>

#include "test_util.hpp"

#ifdef SPARSESFM_CLI_PATH

namespace sparsesfm {
namespace {

using json = nlohmann::json;
using testing::Slurp;
using testing::TempDir;

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult RunCli(const TempDir& dir, const std::string& args) {
  const auto log = dir / "cli.log";
  const std::string cmd = std::string("'") + SPARSESFM_CLI_PATH + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::string output = std::filesystem::exists(log) ? Slurp(log) : "";
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, output};
}

std::string Q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

json Manifest(const std::filesystem::path& dir) {
  return json::parse(Slurp(dir / "manifest.json"));
}

TEST(Cli, SynthCountsAndDeterminism) {
  TempDir dir("cli_synth");
  const std::string args = "synth --cameras 4 --points 10 --sigma 0.5 --seed 3 -o ";
  ASSERT_EQ(RunCli(dir, args + Q(dir / "a")).exit_code, 0);
  ASSERT_EQ(RunCli(dir, args + Q(dir / "b")).exit_code, 0);
  const Scene truth = ReadTracks(dir / "a" / "truth.tracks");
  EXPECT_EQ(truth.num_cameras(), 4);
  EXPECT_EQ(truth.num_points(), 10);
  EXPECT_EQ(truth.num_observations(), 40);
  for (const char* f : {"truth.tracks", "observed.tracks"}) {
    EXPECT_EQ(Slurp(dir / "a" / f), Slurp(dir / "b" / f)) << f;
  }
  EXPECT_EQ(Manifest(dir / "a")["command"], "synth");
}

TEST(Cli, BaOnExactSceneAcceptsNothing) {
  TempDir dir("cli_exact");
  ASSERT_EQ(RunCli(dir, "synth --cameras 4 --points 20 -o " + Q(dir / "s")).exit_code, 0);
  const RunResult r =
      RunCli(dir, "ba -i " + Q(dir / "s" / "truth.tracks") + " -o " + Q(dir / "out"));
  EXPECT_EQ(r.exit_code, 0) << r.output;
  const json m = Manifest(dir / "out");
  EXPECT_EQ(m["stages"][0]["accepted_steps"], 0);
  EXPECT_EQ(m["stages"][0]["final_cost"], 0.0);
  for (const char* f : {"result.tracks", "points.ply", "report.csv", "colmap/cameras.txt",
                        "colmap/images.txt", "colmap/points3D.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
  }
  EXPECT_EQ(Slurp(dir / "out" / "report.csv")
                .rfind("stage,iteration,cost_before,cost_after,lambda,accepted,cg_iterations\n", 0),
            0u);
}

TEST(Cli, BaRecoversPerturbedNoiselessScene) {
  TempDir dir("cli_ba");
  ASSERT_EQ(RunCli(dir, "synth --cameras 5 --points 40 --perturb-rotation 1 -o " + Q(dir / "s"))
                .exit_code,
            0);
  const RunResult r = RunCli(dir, "ba --loss trivial -i " + Q(dir / "s" / "observed.tracks") +
                                   " --truth " + Q(dir / "s" / "truth.tracks") + " -o " +
                                   Q(dir / "out"));
  EXPECT_EQ(r.exit_code, 0) << r.output;
  const json m = Manifest(dir / "out");
  EXPECT_LT(m["stages"][0]["final_cost"].get<double>(), 1e-12);
  EXPECT_LT(m["metrics"]["mean_rotation_error_deg"].get<double>(), 1e-6);
}

TEST(Cli, PipelineDepthModeKeepsMetricScale) {
  TempDir dir("cli_depth");
  ASSERT_EQ(RunCli(dir, "synth --cameras 6 --points 60 --sigma 0.5 -o " + Q(dir / "s")).exit_code,
            0);
  const RunResult r =
      RunCli(dir, "pipeline --depth-mode -i " + Q(dir / "s" / "observed.tracks") + " --truth " +
                   Q(dir / "s" / "truth.tracks") + " -o " + Q(dir / "out"));
  EXPECT_EQ(r.exit_code, 0) << r.output;
  const json m = Manifest(dir / "out");
  EXPECT_NEAR(m["metrics"]["scale_ratio"].get<double>(), 1.0, 0.01);
  EXPECT_EQ(m["stages"].size(), 2u);
}

TEST(Cli, MaxIterExitCode) {
  TempDir dir("cli_maxiter");
  ASSERT_EQ(RunCli(dir, "synth --cameras 4 --points 30 --sigma 1 --perturb-rotation 2 -o " +
                         Q(dir / "s"))
                .exit_code,
            0);
  const RunResult r =
      RunCli(dir, "ba --max-iters 1 -i " + Q(dir / "s" / "observed.tracks") + " -o " +
                   Q(dir / "out"));
  EXPECT_EQ(r.exit_code, 2) << r.output;
}

TEST(Cli, MissingInputFailsWithoutOutputs) {
  TempDir dir("cli_missing");
  const RunResult r = RunCli(dir, "ba -i " + Q(dir / "nope.tracks") + " -o " + Q(dir / "out"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.output.rfind("error: IOError: ", 0), 0u) << r.output;
  EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1);
  EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Cli, MalformedInputNamesLine) {
  TempDir dir("cli_bad");
  io_internal::WriteFile(dir / "bad.tracks", "1 1 1\n0 1 0 0 0 0 0 0 100 0 0\n0 0 0 x\n0 0 1 1\n");
  const RunResult r = RunCli(dir, "gp -i " + Q(dir / "bad.tracks") + " -o " + Q(dir / "out"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("bad.tracks:3: "), std::string::npos) << r.output;
  EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Cli, UsageErrors) {
  TempDir dir("cli_usage");
  EXPECT_EQ(RunCli(dir, "").exit_code, 1);
  EXPECT_EQ(RunCli(dir, "ba").exit_code, 1);
  EXPECT_EQ(RunCli(dir, "ba -i x --solver magic").exit_code, 1);
  EXPECT_EQ(RunCli(dir, "--help").exit_code, 0);
}

TEST(Cli, BenchWritesOneRowPerCell) {
  TempDir dir("cli_bench");
  const RunResult r = RunCli(dir, "bench --cameras 3,4 --points 30 --max-iters 3 -o " +
                                   Q(dir / "bench.csv"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  std::istringstream csv(Slurp(dir / "bench.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, kBenchCsvHeader);
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  // Two sizes, two solvers, two stages.
  EXPECT_EQ(rows, 8);
  EXPECT_TRUE(std::filesystem::exists(dir / "bench.manifest.json"));
}

}  // namespace
}  // namespace sparsesfm

#endif  // SPARSESFM_CLI_PATH
