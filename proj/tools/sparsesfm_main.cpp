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

// sparsesfm command-line tool: synthetic scenes, global positioning, bundle
// adjustment, the GP+BA pipeline and the scaling benchmark.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sparsesfm.hpp"

#ifndef SPARSESFM_VERSION
#define SPARSESFM_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace sparsesfm;

namespace {

constexpr int kExitConverged = 0;
constexpr int kExitUsage = 1;
constexpr int kExitMaxIter = 2;
constexpr int kExitSolverFailure = 3;

struct SolveFlags {
  std::string input;
  std::string truth;
  std::string out_dir = "out";
  std::string loss = "huber";
  std::optional<double> huber_delta;
  bool depth_mode = false;
  std::string solver = "schur_pcg";
  int max_iters = 100;
  std::uint64_t seed = 0;
  std::string gp_init = "random";
  bool fix_focal = false;
  bool shared_focal = false;
  std::optional<int> threads;
};

void AddSolveFlags(CLI::App* cmd, SolveFlags* f) {
  cmd->add_option("-i,--input", f->input, "Input problem (.bal or .tracks)")->required();
  cmd->add_option("--truth", f->truth, "Ground-truth tracks file for accuracy metrics");
  cmd->add_option("-o,--out-dir", f->out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--loss", f->loss, "Robust loss")
      ->check(CLI::IsMember({"huber", "trivial"}))
      ->capture_default_str();
  cmd->add_option("--huber-delta", f->huber_delta,
                  "Huber threshold (default 0.1 for GP, 1.0 px for BA)");
  cmd->add_flag("--depth-mode", f->depth_mode, "Use per-observation depths in GP");
  cmd->add_option("--solver", f->solver, "Linear solver")
      ->check(CLI::IsMember({"schur_pcg", "dense"}))
      ->capture_default_str();
  cmd->add_option("--max-iters", f->max_iters, "LM iterations per stage")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--seed", f->seed, "Seed for GP random initialization")
      ->capture_default_str();
  cmd->add_option("--gp-init", f->gp_init, "GP initialization")
      ->check(CLI::IsMember({"random", "scene"}))
      ->capture_default_str();
  cmd->add_flag("--fix-focal", f->fix_focal, "Hold focal lengths constant in BA");
  cmd->add_flag("--shared-focal", f->shared_focal, "One focal for all cameras in BA");
  cmd->add_option("--threads", f->threads,
                  std::string("Worker threads (default: $") + kNumThreadsEnv +
                      " or hardware concurrency)")
      ->check(CLI::PositiveNumber);
}

RobustLoss MakeLoss(const SolveFlags& f, double default_delta) {
  if (f.loss == "trivial") return RobustLoss::Trivial();
  return RobustLoss::Huber(f.huber_delta.value_or(default_delta));
}

LMConfig MakeLMConfig(const SolveFlags& f) {
  LMConfig c;
  c.max_iterations = f.max_iters;
  c.solver = ParseLinearSolver(f.solver);
  if (f.threads) c.num_threads = *f.threads;
  ValidateConfig(c);
  return c;
}

json LossJson(const RobustLoss& loss) {
  json j;
  j["kind"] = loss.kind == RobustLoss::Kind::kHuber ? "huber" : "trivial";
  if (loss.kind == RobustLoss::Kind::kHuber) j["delta"] = loss.delta;
  return j;
}

json LMConfigJson(const LMConfig& c) {
  return json{{"max_iterations", c.max_iterations},
              {"lambda0", c.lambda0},
              {"lambda_up", c.lambda_up},
              {"lambda_down", c.lambda_down},
              {"lambda_min", c.lambda_min},
              {"lambda_max", c.lambda_max},
              {"rel_cost_tol", c.rel_cost_tol},
              {"grad_tol", c.grad_tol},
              {"param_tol", c.param_tol},
              {"cg_max_iters", c.cg_max_iters},
              {"cg_tol", c.cg_tol},
              {"solver", LinearSolverName(c.solver)},
              {"dense_max_params", c.dense_max_params},
              {"num_threads", c.num_threads}};
}

Scene ReadScene(const std::string& path) {
  SPARSESFM_CHECK(fs::is_regular_file(path), ErrorCode::kIOError,
                  "input file not found: " + path);
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".bal" || ext == ".txt") return ReadBal(path);
  Scene scene = ReadTracks(path);
  ValidateScene(scene);
  return scene;
}

struct StageOutcome {
  std::string stage;
  SolveReport report;
  std::int64_t wall_time_ns = 0;
};

int ExitCodeFor(const std::vector<StageOutcome>& stages) {
  int code = kExitConverged;
  for (const auto& s : stages) {
    if (s.report.termination == Termination::kSolverFailure) return kExitSolverFailure;
    if (s.report.termination == Termination::kMaxIter) code = kExitMaxIter;
  }
  return code;
}

std::string FormatReportCsv(const std::vector<StageOutcome>& stages) {
  std::string out = "stage,iteration,cost_before,cost_after,lambda,accepted,cg_iterations\n";
  for (const auto& s : stages) {
    for (const auto& r : s.report.iterations) {
      out += s.stage + ',' + std::to_string(r.iteration) + ',' +
             io_internal::FormatDouble(r.cost_before) + ',' +
             io_internal::FormatDouble(r.cost_after) + ',' +
             io_internal::FormatDouble(r.lambda) + ',' + (r.step_accepted ? "1" : "0") + ',' +
             std::to_string(r.cg_iterations) + '\n';
    }
  }
  return out;
}

void WriteText(const fs::path& path, const std::string& text) {
  io_internal::WriteFile(path, text);
}

/// Copies optimized cameras and points of a pruned scene back into the full one.
Scene Unprune(const Scene& full, const PruneResult& pruned, const Scene& optimized) {
  Scene out = full;
  for (int c = 0; c < full.num_cameras(); ++c) {
    if (pruned.camera_map[c] >= 0) out.cameras[c] = optimized.cameras[pruned.camera_map[c]];
  }
  for (int p = 0; p < full.num_points(); ++p) {
    if (pruned.point_map[p] >= 0) out.points[p] = optimized.points[pruned.point_map[p]];
  }
  return out;
}

json MetricsJson(const Scene& estimate, const Scene& truth, bool metric_scale) {
  json m;
  SPARSESFM_CHECK(estimate.num_cameras() == truth.num_cameras(), ErrorCode::kCountMismatch,
                  "truth has a different camera count");
  const double diameter = SceneDiameter(truth);
  const AlignResult sim3 = Align(estimate, truth, AlignmentKind::kSim3);
  m["scene_diameter"] = diameter;
  m["sim3_center_rmse"] = CenterRmse(sim3.aligned, truth);
  m["sim3_scale"] = sim3.alignment.scale;
  // Scale of the estimate relative to the truth.
  m["scale_ratio"] = 1.0 / sim3.alignment.scale;
  if (metric_scale) {
    const AlignResult se3 = Align(estimate, truth, AlignmentKind::kSe3);
    m["se3_center_rmse"] = CenterRmse(se3.aligned, truth);
  }
  m["mean_rotation_error_deg"] = MeanRotationErrorDeg(sim3.aligned, truth);
  const std::vector<double> thresholds = {1.0, 3.0, 5.0, 10.0};
  const std::vector<double> auc = RotationAuc(estimate, truth, thresholds);
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    m["rotation_auc@" + std::to_string(static_cast<int>(thresholds[i]))] = auc[i];
  }
  return m;
}

int RunSolve(const std::string& command, const SolveFlags& f,
             const std::vector<std::string>& argv) {
  const Scene input = ReadScene(f.input);
  std::optional<Scene> truth;
  if (!f.truth.empty()) truth = ReadScene(f.truth);
  const LMConfig lm = MakeLMConfig(f);
  const PruneResult pruned = Prune(input);

  json manifest;
  manifest["command"] = command;
  manifest["argv"] = argv;
  manifest["version"] = SPARSESFM_VERSION;
  manifest["inputs"] = {{"problem", f.input}};
  if (truth) manifest["inputs"]["truth"] = f.truth;
  manifest["seed"] = f.seed;
  manifest["config"]["lm"] = LMConfigJson(lm);
  manifest["config"]["depth_mode"] = f.depth_mode;
  manifest["config"]["gp_init"] = f.gp_init;
  manifest["config"]["fix_focal"] = f.fix_focal;
  manifest["config"]["shared_focal"] = f.shared_focal;
  manifest["problem"] = {{"cameras", input.num_cameras()},
                         {"points", input.num_points()},
                         {"observations", input.num_observations()},
                         {"pruned_cameras", pruned.scene.num_cameras()},
                         {"pruned_points", pruned.scene.num_points()},
                         {"pruned_observations", pruned.scene.num_observations()}};

  SolverWorkspace workspace;
  std::vector<StageOutcome> stages;
  Scene current = pruned.scene;
  if (command == "gp" || command == "pipeline") {
    GPOptions opt;
    opt.depth_mode = f.depth_mode;
    opt.loss = MakeLoss(f, 0.1);
    opt.init = f.gp_init == "scene" ? GPInit::kFromScene : GPInit::kRandom;
    opt.seed = f.seed;
    manifest["config"]["gp_loss"] = LossJson(opt.loss);
    const auto t0 = std::chrono::steady_clock::now();
    GPResult r = RunGP(current, opt, lm, &workspace);
    const auto t1 = std::chrono::steady_clock::now();
    current = std::move(r.scene);
    stages.push_back({"gp", std::move(r.report),
                      std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()});
  }
  if (command == "ba" || command == "pipeline") {
    BAOptions opt;
    opt.optimize_focal = !f.fix_focal;
    opt.shared_focal = f.shared_focal;
    const RobustLoss loss = MakeLoss(f, 1.0);
    manifest["config"]["ba_loss"] = LossJson(loss);
    const auto t0 = std::chrono::steady_clock::now();
    BAResult r = RunBA(current, loss, lm, opt, &workspace);
    const auto t1 = std::chrono::steady_clock::now();
    current = std::move(r.scene);
    stages.push_back({"ba", std::move(r.report),
                      std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()});
  }
  const Scene result = Unprune(input, pruned, current);

  const fs::path out(f.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  SPARSESFM_CHECK(!ec, ErrorCode::kIOError, "cannot create " + out.string());
  WriteTracks(result, out / "result.tracks");
  WritePly(ScenePoints(result), out / "points.ply");
  bool pinhole = true;
  for (const auto& cam : result.cameras) pinhole &= cam.model == CameraModel::kPinhole;
  if (pinhole) {
    WriteColmapText(result, out / "colmap");
  }
  manifest["outputs"] = {{"tracks", "result.tracks"},
                         {"ply", "points.ply"},
                         {"report", "report.csv"},
                         {"colmap", pinhole ? json("colmap") : json(nullptr)}};
  WriteText(out / "report.csv", FormatReportCsv(stages));

  json stage_json = json::array();
  for (const auto& s : stages) {
    stage_json.push_back({{"stage", s.stage},
                          {"termination", TerminationName(s.report.termination)},
                          {"iterations", s.report.iterations.size()},
                          {"accepted_steps", s.report.num_accepted()},
                          {"initial_cost", s.report.initial_cost},
                          {"final_cost", s.report.final_cost},
                          {"wall_time_ns", s.wall_time_ns},
                          {"message", s.report.message}});
  }
  manifest["stages"] = stage_json;
  if (truth) manifest["metrics"] = MetricsJson(result, *truth, f.depth_mode);
  WriteText(out / "manifest.json", manifest.dump(2) + "\n");

  for (const auto& s : stages) {
    std::cout << s.stage << ": " << TerminationName(s.report.termination) << " after "
              << s.report.iterations.size() << " iterations, cost "
              << s.report.initial_cost << " -> " << s.report.final_cost << "\n";
  }
  return ExitCodeFor(stages);
}

struct SynthFlags {
  SynthConfig config;
  std::string rig = "ring";
  Perturbation perturb;
  std::string out_dir = "synth";
};

int RunSynth(const SynthFlags& f, const std::vector<std::string>& argv) {
  SynthConfig config = f.config;
  config.rig = f.rig == "sphere" ? Rig::kSphere : Rig::kRing;
  const SynthScene s = Generate(config);
  Scene observed = Perturb(s.observed, f.perturb);

  const fs::path out(f.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  SPARSESFM_CHECK(!ec, ErrorCode::kIOError, "cannot create " + out.string());
  WriteTracks(s.truth, out / "truth.tracks");
  WriteTracks(observed, out / "observed.tracks");

  json outliers = json::array();
  for (int k = 0; k < static_cast<int>(s.outlier.size()); ++k) {
    if (s.outlier[k]) outliers.push_back(k);
  }
  json manifest;
  manifest["command"] = "synth";
  manifest["argv"] = argv;
  manifest["version"] = SPARSESFM_VERSION;
  manifest["seed"] = config.seed;
  manifest["config"] = {{"cameras", config.num_cameras},
                        {"points", config.num_points},
                        {"rig", f.rig},
                        {"radius", config.radius},
                        {"focal", config.focal},
                        {"sigma", config.pixel_noise_sigma},
                        {"visibility", config.visibility_fraction},
                        {"outliers", config.outlier_fraction},
                        {"perturb_rotation_deg", f.perturb.rotation_deg},
                        {"perturb_center", f.perturb.center_fraction},
                        {"perturb_focal", f.perturb.focal_fraction},
                        {"perturb_point", f.perturb.point_fraction},
                        {"perturb_seed", f.perturb.seed}};
  manifest["outputs"] = {{"truth", "truth.tracks"}, {"observed", "observed.tracks"}};
  manifest["observations"] = s.observed.num_observations();
  manifest["outlier_observations"] = outliers;
  WriteText(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << s.observed.num_observations() << " observations to "
            << (out / "observed.tracks").string() << "\n";
  return kExitConverged;
}

struct BenchFlags {
  std::vector<int> cameras = {25, 50};
  int points = 2000;
  double visibility = 1.0;
  std::vector<std::string> solvers = {"schur_pcg", "dense"};
  std::vector<std::string> stages = {"gp", "ba"};
  int max_iters = 10;
  double sigma = 1.0;
  std::uint64_t seed = 0;
  std::string out = "bench.csv";
  std::optional<int> threads;
};

int RunBenchCommand(const BenchFlags& f, const std::vector<std::string>& argv) {
  BenchConfig config;
  config.cameras = f.cameras;
  config.points = f.points;
  config.visibility = f.visibility;
  config.pixel_noise_sigma = f.sigma;
  config.seed = f.seed;
  config.stages = f.stages;
  config.solvers.clear();
  for (const auto& s : f.solvers) config.solvers.push_back(ParseLinearSolver(s));
  config.lm.max_iterations = f.max_iters;
  if (f.threads) config.lm.num_threads = *f.threads;
  ValidateConfig(config.lm);

  const fs::path out(f.out);
  if (out.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
    SPARSESFM_CHECK(!ec, ErrorCode::kIOError, "cannot create " + out.parent_path().string());
  }
  std::ofstream csv(out, std::ios::binary | std::ios::trunc);
  SPARSESFM_CHECK(csv.good(), ErrorCode::kIOError, "cannot open " + out.string());
  csv << kBenchCsvHeader << '\n';
  std::cout << kBenchCsvHeader << '\n';
  RunBench(config, [&](const BenchRow& row) {
    const std::string line = FormatBenchRow(row);
    csv << line << '\n' << std::flush;
    std::cout << line << std::endl;
  });
  SPARSESFM_CHECK(csv.good(), ErrorCode::kIOError, "cannot write " + out.string());

  json manifest;
  manifest["command"] = "bench";
  manifest["argv"] = argv;
  manifest["version"] = SPARSESFM_VERSION;
  manifest["seed"] = f.seed;
  manifest["config"] = {{"cameras", f.cameras},       {"points", f.points},
                        {"visibility", f.visibility}, {"solvers", f.solvers},
                        {"stages", f.stages},         {"sigma", f.sigma},
                        {"lm", LMConfigJson(config.lm)}};
  fs::path manifest_path = out;
  manifest_path.replace_extension(".manifest.json");
  WriteText(manifest_path, manifest.dump(2) + "\n");
  return kExitConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse global SfM optimization: GP, BA, synthetic scenes, benchmarks"};
  app.set_version_flag("--version", SPARSESFM_VERSION);
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);

  SynthFlags synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene");
  synth_cmd->add_option("--cameras", synth.config.num_cameras)->capture_default_str();
  synth_cmd->add_option("--points", synth.config.num_points)->capture_default_str();
  synth_cmd->add_option("--rig", synth.rig)
      ->check(CLI::IsMember({"ring", "sphere"}))
      ->capture_default_str();
  synth_cmd->add_option("--radius", synth.config.radius)->capture_default_str();
  synth_cmd->add_option("--focal", synth.config.focal)->capture_default_str();
  synth_cmd->add_option("--sigma", synth.config.pixel_noise_sigma, "Pixel noise per axis")
      ->capture_default_str();
  synth_cmd->add_option("--visibility", synth.config.visibility_fraction)
      ->capture_default_str();
  synth_cmd->add_option("--outliers", synth.config.outlier_fraction)->capture_default_str();
  synth_cmd->add_option("--seed", synth.config.seed)->capture_default_str();
  synth_cmd->add_option("--perturb-rotation", synth.perturb.rotation_deg, "Degrees")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--perturb-center", synth.perturb.center_fraction,
                        "Fraction of the scene diameter")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--perturb-focal", synth.perturb.focal_fraction)
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--perturb-point", synth.perturb.point_fraction,
                        "Fraction of the scene diameter")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--perturb-seed", synth.perturb.seed);
  synth_cmd->add_option("-o,--out-dir", synth.out_dir)->capture_default_str();

  SolveFlags gp_flags, ba_flags, pipeline_flags;
  CLI::App* gp_cmd = app.add_subcommand("gp", "Global positioning");
  AddSolveFlags(gp_cmd, &gp_flags);
  CLI::App* ba_cmd = app.add_subcommand("ba", "Bundle adjustment");
  AddSolveFlags(ba_cmd, &ba_flags);
  CLI::App* pipeline_cmd =
      app.add_subcommand("pipeline", "Global positioning followed by bundle adjustment");
  AddSolveFlags(pipeline_cmd, &pipeline_flags);

  BenchFlags bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Scaling benchmark");
  bench_cmd->add_option("--cameras", bench.cameras, "Camera ladder")
      ->delimiter(',')
      ->capture_default_str();
  bench_cmd->add_option("--points", bench.points)->capture_default_str();
  bench_cmd->add_option("--visibility", bench.visibility)->capture_default_str();
  bench_cmd->add_option("--solvers", bench.solvers)
      ->delimiter(',')
      ->check(CLI::IsMember({"schur_pcg", "dense"}))
      ->capture_default_str();
  bench_cmd->add_option("--stages", bench.stages)
      ->delimiter(',')
      ->check(CLI::IsMember({"gp", "ba"}))
      ->capture_default_str();
  bench_cmd->add_option("--max-iters", bench.max_iters)->capture_default_str();
  bench_cmd->add_option("--sigma", bench.sigma)->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed)->capture_default_str();
  bench_cmd->add_option("-o,--out", bench.out, "CSV path")->capture_default_str();
  bench_cmd->add_option("--threads", bench.threads)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth_cmd) return RunSynth(synth, args);
    if (*gp_cmd) return RunSolve("gp", gp_flags, args);
    if (*ba_cmd) return RunSolve("ba", ba_flags, args);
    if (*pipeline_cmd) return RunSolve("pipeline", pipeline_flags, args);
    if (*bench_cmd) return RunBenchCommand(bench, args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
