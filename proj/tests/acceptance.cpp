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

// Acceptance checks. Usage: sparsesfm_acceptance [criterion ...]
// Prints one "PASS criterion N: ..." or "FAIL criterion N: ..." line per
// criterion and exits nonzero if any failed.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sparsesfm.hpp"

namespace fs = std::filesystem;
using namespace sparsesfm;

namespace {

struct Outcome {
  bool pass = true;
  std::string details;

  void Check(bool ok, const std::string& what) {
    if (!details.empty()) details += "; ";
    details += what + (ok ? "" : " [failed]");
    pass = pass && ok;
  }
};

std::string Fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// Dense copy of a block-sparse Jacobian.
MatX Dense(const BlockSparseJacobian& jac) {
  const BlockLayout& layout = jac.layout();
  MatX out = MatX::Zero(layout.total_residuals(), layout.total_params());
  for (int k = 0; k < jac.num_entries(); ++k) {
    const auto& rb = layout.residual_block(jac.entry(k).residual_block);
    const auto& pb = layout.parameter_block(jac.entry(k).param_block);
    out.block(rb.offset, pb.offset, rb.height, pb.width) = jac.block(k);
  }
  return out;
}

MatX CentralDifferences(const std::function<VecX(const VecX&)>& f, const VecX& theta,
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

double Rel(const MatX& a, const MatX& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

Scene RandomBAScene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SynthConfig c;
  c.num_cameras = 2 + static_cast<int>(rng() % 5);
  c.num_points = 3 + static_cast<int>(rng() % 28);
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
  return Perturb(Generate(c).observed, p);
}

bool AcceptedCostsDecrease(const SolveReport& report) {
  double last = report.initial_cost;
  for (const auto& it : report.iterations) {
    if (!it.step_accepted) continue;
    if (!(it.cost_after < last)) return false;
    last = it.cost_after;
  }
  return true;
}

// ---------------------------------------------------------------------------

Outcome Criterion1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_jtj = 0.0, worst_jtr = 0.0, worst_damp = 0.0;
  std::mt19937_64 rng(101);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = RandomBAScene(seed);
    const BAProblem p(s, seed % 2 ? RobustLoss::Huber(1.0) : RobustLoss::Trivial());
    BlockSparseJacobian jac(p.layout(), p.JacobianPattern());
    VecX r;
    p.Evaluate(p.Encode(), &r, &jac);
    const MatX J = Dense(jac);
    const MatX A = J.transpose() * J;
    const BlockNormalSystem sys = JtJ(jac);
    worst_jtj = std::max(worst_jtj, Rel(sys.ToDense(), A));
    const VecX g = J.transpose() * r;
    worst_jtr = std::max(worst_jtr, (JtR(jac, r) - g).lpNorm<Eigen::Infinity>() /
                                        std::max(g.lpNorm<Eigen::Infinity>(), 1e-300));
    const double lambda = std::uniform_real_distribution<double>(1e-6, 10.0)(rng);
    MatX damped = A;
    damped.diagonal() *= 1.0 + lambda;
    worst_damp = std::max(worst_damp, Rel(ApplyDamping(sys, lambda).ToDense(), damped));
  }
  const double secs = Seconds(t0);
  o.Check(worst_jtj <= 1e-10, "max JtJ rel err " + Fmt("%.2e", worst_jtj));
  o.Check(worst_jtr <= 1e-10, "max Jtr rel err " + Fmt("%.2e", worst_jtr));
  o.Check(worst_damp <= 1e-10, "max damping rel err " + Fmt("%.2e", worst_damp));
  o.Check(secs < 10.0, "100 instances in " + Fmt("%.2f", secs) + " s");
  return o;
}

Outcome Criterion2() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_ba = 0.0, worst_gp = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Scene s = RandomBAScene(1000 + seed);
    const BAProblem ba(s, RobustLoss::Trivial());
    const VecX theta = ba.Encode();
    worst_ba = std::max(
        worst_ba, Rel(Dense(BAJacobian(ba, theta)),
                      CentralDifferences([&](const VecX& t) { return BAResiduals(ba, t); },
                                         theta, 1e-6)));

    for (auto& obs : s.observations) obs.depth = 1.0 + 0.05 * obs.point_id;
    GPOptions opt;
    opt.loss = RobustLoss::Trivial();
    opt.depth_mode = seed % 2 == 1;
    opt.seed = seed;
    const GPProblem gp = MakeRays(s, opt).FixGauge();
    VecX gtheta = gp.InitialTheta();
    std::mt19937_64 rng(seed);
    if (!opt.depth_mode) {
      for (int k = 0; k < gp.num_observations(); ++k) {
        gtheta[gp.layout()->parameter_block(gp.scale_block(k)).offset] =
            std::uniform_real_distribution<double>(0.5, 1.5)(rng);
      }
    }
    worst_gp = std::max(
        worst_gp, Rel(Dense(GPJacobian(gp, gtheta)),
                      CentralDifferences([&](const VecX& t) { return GPResiduals(gp, t); },
                                         gtheta, 1e-6)));
  }
  const double secs = Seconds(t0);
  o.Check(worst_ba <= 1e-5, "BA max rel err " + Fmt("%.2e", worst_ba));
  o.Check(worst_gp <= 1e-6, "GP max rel err " + Fmt("%.2e", worst_gp));
  o.Check(secs < 30.0, "40 instances in " + Fmt("%.2f", secs) + " s");
  return o;
}

Outcome Criterion3() {
  Outcome o;
  int solves = 0, residual_violations = 0, compared = 0, cost_mismatches = 0;
  double worst_cost = 0.0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Scene s = RandomBAScene(2000 + seed);
    const bool use_gp = seed % 2 == 1;
    double costs[2] = {0.0, 0.0};
    double initial = 0.0;
    int params = 0;
    for (int which = 0; which < 2; ++which) {
      LMConfig c;
      c.solver = which == 0 ? LinearSolverType::kSchurPcg : LinearSolverType::kDense;
      c.max_iterations = 50;
      SolverWorkspace ws;
      const double tol = which == 0 ? c.cg_tol : 1e-10;
      ws.on_solve = [&](const BlockNormalSystem& sys, const VecX& step) {
        ++solves;
        const double g = sys.gradient().norm();
        if ((sys.Multiply(step) - sys.gradient()).norm() > tol * g) ++residual_violations;
      };
      if (use_gp) {
        GPOptions opt;
        opt.seed = seed;
        const GPResult r = RunGP(s, opt, c, &ws);
        costs[which] = r.report.final_cost;
        initial = r.report.initial_cost;
        params = MakeRays(s, opt).FixGauge().layout()->total_params();
      } else {
        const BAResult r = RunBA(s, RobustLoss::Huber(1.0), c, {}, &ws);
        costs[which] = r.report.final_cost;
        initial = r.report.initial_cost;
        params = BAProblem(s, RobustLoss::Trivial()).layout()->total_params();
      }
    }
    if (params <= 200) {
      ++compared;
      // Exactly solvable instances end at rounding-level costs; those are
      // measured against the initial cost.
      const double scale = std::max(std::max(costs[0], costs[1]), 1e-12 * initial);
      const double err = std::abs(costs[0] - costs[1]) / std::max(scale, 1e-300);
      worst_cost = std::max(worst_cost, err);
      if (err > 1e-6) ++cost_mismatches;
    }
  }
  o.Check(residual_violations == 0, std::to_string(residual_violations) + " of " +
                                        std::to_string(solves) + " solves above tolerance");
  o.Check(compared >= 20 && cost_mismatches == 0,
          std::to_string(compared) + " schur/dense cost pairs, max rel diff " +
              Fmt("%.2e", worst_cost));
  return o;
}

Outcome Criterion4() {
  Outcome o;
  SynthConfig c;
  c.num_cameras = 20;
  c.num_points = 1000;
  c.pixel_noise_sigma = 1.0;
  c.seed = 4;
  const SynthScene s = Generate(c);
  Perturbation p;
  p.rotation_deg = 2.0;
  p.center_fraction = 0.02;
  p.focal_fraction = 0.05;
  p.seed = 5;
  const auto t0 = std::chrono::steady_clock::now();
  const BAResult r = RunBA(Perturb(s.observed, p), RobustLoss::Trivial(), LMConfig{});
  const double secs = Seconds(t0);
  const double rmse = ReprojRmse(r.scene);
  const AlignResult a = Align(r.scene, s.truth, AlignmentKind::kSim3);
  const double rot = MeanRotationErrorDeg(a.aligned, s.truth);
  const double auc3 = RotationAuc(r.scene, s.truth, {3.0})[0];
  o.Check(AcceptedCostsDecrease(r.report),
          "accepted costs strictly decreasing over " +
              std::to_string(r.report.num_accepted()) + " steps (" +
              std::string(TerminationName(r.report.termination)) + ")");
  // With per-axis noise sigma the expected RMSE of the 2D error norm is
  // about sqrt(2) * sigma, which is above this bound.
  o.Check(rmse <= 1.2, "reprojection RMSE " + Fmt("%.4f", rmse) + " px (per-axis " +
                           Fmt("%.4f", rmse / std::sqrt(2.0)) + " px, bound 1.2)");
  o.Check(rot < 0.1, "mean rotation error " + Fmt("%.4f", rot) + " deg");
  o.Check(auc3 > 95.0, "AUC@3 " + Fmt("%.2f", auc3));
  o.Check(secs < 60.0, "BA " + Fmt("%.2f", secs) + " s");
  return o;
}

SynthConfig GPInstance() {
  SynthConfig c;
  c.num_cameras = 10;
  c.num_points = 500;
  c.seed = 5;
  return c;
}

Outcome Criterion5() {
  Outcome o;
  const Scene truth = Generate(GPInstance()).truth;
  LMConfig lm;
  lm.max_iterations = 500;
  GPOptions opt;
  opt.seed = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const GPResult r = RunGP(truth, opt, lm);
  const double secs = Seconds(t0);
  const double diam = SceneDiameter(truth);
  const double rmse = CenterRmse(Align(r.scene, truth, AlignmentKind::kSim3).aligned, truth);
  const double angle = MaxRayAngle(r.scene);
  o.Check(rmse < 1e-3 * diam, "center RMSE / diameter " + Fmt("%.2e", rmse / diam) + " after " +
                                  std::to_string(r.report.iterations.size()) +
                                  " iterations (" +
                                  std::string(TerminationName(r.report.termination)) + ")");
  o.Check(angle < 1e-4, "max ray angle " + Fmt("%.2e", angle) + " rad");
  o.Check(secs < 30.0, "GP " + Fmt("%.2f", secs) + " s");
  return o;
}

Outcome Criterion6() {
  Outcome o;
  const Scene truth = Generate(GPInstance()).truth;
  GPOptions opt;
  opt.depth_mode = true;
  opt.seed = 1;
  const GPResult r = RunGP(truth, opt, LMConfig{});
  const double diam = SceneDiameter(truth);
  const double se3 = CenterRmse(Align(r.scene, truth, AlignmentKind::kSe3).aligned, truth);
  const double ratio = 1.0 / Align(r.scene, truth, AlignmentKind::kSim3).alignment.scale;
  o.Check(se3 < 1e-3 * diam, "SE(3) center RMSE / diameter " + Fmt("%.2e", se3 / diam));
  o.Check(std::abs(ratio - 1.0) < 0.01, "scale ratio " + Fmt("%.6f", ratio));

  Scene doubled = truth;
  for (auto& obs : doubled.observations) *obs.depth *= 2.0;
  const GPResult r2 = RunGP(doubled, opt, LMConfig{});
  const double growth = 1.0 / Align(r2.scene, r.scene, AlignmentKind::kSim3).alignment.scale;
  o.Check(std::abs(growth / 2.0 - 1.0) < 0.01, "depths x2 scale solution by " +
                                                  Fmt("%.6f", growth));
  return o;
}

Outcome Criterion7() {
  Outcome o;
  int wins = 0;
  std::string runs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // The BA convergence instance with outliers added.
    SynthConfig c;
    c.num_cameras = 20;
    c.num_points = 1000;
    c.pixel_noise_sigma = 1.0;
    c.outlier_fraction = 0.1;
    c.seed = 700 + seed;
    const SynthScene s = Generate(c);
    Perturbation p;
    p.rotation_deg = 2.0;
    p.center_fraction = 0.02;
    p.focal_fraction = 0.05;
    p.seed = 800 + seed;
    const Scene init = Perturb(s.observed, p);
    std::vector<char> inlier(s.outlier.size());
    for (std::size_t k = 0; k < inlier.size(); ++k) inlier[k] = !s.outlier[k];
    const double huber = ReprojRmse(RunBA(init, RobustLoss::Huber(1.0), LMConfig{}).scene, inlier);
    const double trivial = ReprojRmse(RunBA(init, RobustLoss::Trivial(), LMConfig{}).scene, inlier);
    if (huber <= 1.5 && trivial > 1.5) ++wins;
    if (!runs.empty()) runs += ' ';
    runs += Fmt("%.2f", huber) + "/" + Fmt("%.2f", trivial);
  }
  o.Check(wins >= 8, std::to_string(wins) + "/10 wins (huber/trivial inlier RMSE: " + runs + ")");
  return o;
}

Outcome Criterion8() {
  Outcome o;
  std::vector<fs::path> candidates;
  if (const char* env = std::getenv("SPARSESFM_BAL_LADYBUG")) candidates.emplace_back(env);
  candidates.push_back(fs::path(SPARSESFM_TEST_DATA_DIR) / "problem-49-7776-pre.txt");
  fs::path found;
  for (const auto& c : candidates) {
    if (fs::exists(c)) {
      found = c;
      break;
    }
  }
  if (found.empty()) {
    o.Check(false,
            "Ladybug problem-49-7776 not available (set SPARSESFM_BAL_LADYBUG or place "
            "problem-49-7776-pre.txt in tests/data)");
    return o;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const Scene s = ReadBal(found);
  o.Check(s.num_cameras() == 49 && s.num_points() == 7776 && s.num_observations() == 31843,
          "counts " + std::to_string(s.num_cameras()) + "/" + std::to_string(s.num_points()) +
              "/" + std::to_string(s.num_observations()));
  LMConfig lm;
  lm.max_iterations = 20;
  const BAResult r = RunBA(Prune(s).scene, RobustLoss::Huber(1.0), lm);
  const double reduction = 1.0 - r.report.final_cost / r.report.initial_cost;
  const double secs = Seconds(t0);
  o.Check(reduction >= 0.5, "cost " + Fmt("%.6g", r.report.initial_cost) + " -> " +
                                Fmt("%.6g", r.report.final_cost));
  o.Check(AcceptedCostsDecrease(r.report), "accepted costs strictly decreasing");
  o.Check(secs < 120.0, Fmt("%.2f", secs) + " s");
  return o;
}

Outcome Criterion9() {
  Outcome o;
  BenchConfig ladder;
  ladder.cameras = {25, 50, 100, 200};
  ladder.points = 2000;
  ladder.solvers = {LinearSolverType::kSchurPcg};
  ladder.stages = {"ba"};
  ladder.lm.max_iterations = 3;
  std::vector<double> obs, per_iter;
  std::string cells;
  for (const BenchRow& row : RunBench(ladder)) {
    obs.push_back(row.observations);
    per_iter.push_back(static_cast<double>(row.per_iteration_ns));
    cells += " " + std::to_string(row.cameras) + ":" + Fmt("%.3f", row.per_iteration_ns * 1e-9) +
             "s";
  }
  const double slope = LogLogSlope(obs, per_iter);
  o.Check(slope < 1.5, "schur_pcg log-log slope " + Fmt("%.3f", slope) + " (per-iteration" +
                           cells + ")");

  // C=100, P=10000: the dense fallback factors the full damped system.
  BenchConfig big;
  big.cameras = {100};
  big.points = 10000;
  big.solvers = {LinearSolverType::kSchurPcg};
  big.stages = {"ba"};
  big.lm.max_iterations = 2;
  const BenchRow schur = RunBench(big).front();
  const double n = 100.0 * 8 + 10000.0 * 3;
  const double dense_bytes = n * n * sizeof(double);
  const double ram = static_cast<double>(sysconf(_SC_PHYS_PAGES)) *
                     static_cast<double>(sysconf(_SC_PAGE_SIZE));
  std::string detail = "C=100 P=10000: schur_pcg " + Fmt("%.2f", schur.per_iteration_ns * 1e-9) +
                       " s/iter; dense needs " + Fmt("%.1f", dense_bytes / 1e9) +
                       " GB for the " + Fmt("%.0f", n) + "x" + Fmt("%.0f", n) +
                       " system, machine has " + Fmt("%.1f", ram / 1e9) + " GB";
  if (dense_bytes < 0.5 * ram) {
    big.solvers = {LinearSolverType::kDense};
    big.lm.dense_max_params = static_cast<int>(n) + 1;
    big.lm.max_iterations = 1;
    const BenchRow dense = RunBench(big).front();
    const double ratio = static_cast<double>(dense.per_iteration_ns) /
                         static_cast<double>(schur.per_iteration_ns);
    o.Check(ratio >= 5.0, detail + "; dense/schur ratio " + Fmt("%.1f", ratio));
  } else {
    // Largest ladder cell the dense path can factor here, for reference.
    BenchConfig feasible;
    feasible.cameras = {100};
    feasible.points = 1700;
    feasible.solvers = {LinearSolverType::kSchurPcg, LinearSolverType::kDense};
    feasible.stages = {"ba"};
    feasible.lm.max_iterations = 1;
    const auto rows = RunBench(feasible);
    const double ratio = static_cast<double>(rows[1].per_iteration_ns) /
                         static_cast<double>(rows[0].per_iteration_ns);
    o.Check(false, detail + ", so the ratio cannot be measured; at C=100 P=1700 dense/schur "
                            "per-iteration ratio is " + Fmt("%.1f", ratio));
  }
  return o;
}

#ifdef SPARSESFM_CLI_PATH
int RunCli(const std::string& args) {
  const std::string cmd = std::string("'") + SPARSESFM_CLI_PATH + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome Criterion10() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() /
                        ("sparsesfm_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  const std::string synth = "synth --cameras 12 --points 300 --sigma 1 --outliers 0.05 "
                            "--seed 42 --perturb-rotation 2 --perturb-center 0.02 "
                            "--perturb-focal 0.05 --perturb-seed 7 -o ";
  bool ok = RunCli(synth + q(root / "s1")) == 0 && RunCli(synth + q(root / "s2")) == 0;
  const std::string input = " -i " + q(root / "s1" / "observed.tracks");
  int codes[3];
  codes[0] = RunCli("pipeline --threads 1 --seed 3" + input + " -o " + q(root / "a"));
  codes[1] = RunCli("pipeline --threads 1 --seed 3" + input + " -o " + q(root / "b"));
  codes[2] = RunCli("pipeline --threads 4 --seed 3" + input + " -o " + q(root / "c"));
  for (int c : codes) ok = ok && (c == 0 || c == 2);
  o.Check(ok, "CLI runs succeeded");
  if (!ok) return o;

  auto same = [](const fs::path& a, const fs::path& b) {
    return fs::exists(a) && io_internal::ReadFile(a) == io_internal::ReadFile(b);
  };
  int compared = 0, differing = 0;
  for (const char* f : {"truth.tracks", "observed.tracks"}) {
    ++compared;
    if (!same(root / "s1" / f, root / "s2" / f)) ++differing;
  }
  for (const char* f : {"result.tracks", "points.ply", "report.csv"}) {
    for (const char* other : {"b", "c"}) {
      ++compared;
      if (!same(root / "a" / f, root / other / f)) ++differing;
    }
  }
  o.Check(differing == 0, std::to_string(compared - differing) + "/" +
                              std::to_string(compared) +
                              " output pairs bit-identical (two runs; 1 vs 4 workers)");
  fs::remove_all(root);
  return o;
}
#else
Outcome Criterion10() {
  Outcome o;
  o.Check(false, "command-line tool not built");
  return o;
}
#endif

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> criteria = {
      {1, Criterion1}, {2, Criterion2}, {3, Criterion3}, {4, Criterion4},
      {5, Criterion5}, {6, Criterion6}, {7, Criterion7}, {8, Criterion8},
      {9, Criterion9}, {10, Criterion10}};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [n, fn] : criteria) selected.push_back(n);
  }
  bool all = true;
  for (int n : selected) {
    const auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << n << "\n";
      return 2;
    }
    Outcome outcome;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      outcome = it->second();
    } catch (const std::exception& e) {
      outcome.Check(false, std::string("exception: ") + e.what());
    }
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion " << n << ": "
              << outcome.details << " (" << Fmt("%.1f", Seconds(t0)) << " s)" << std::endl;
    all = all && outcome.pass;
  }
  return all ? 0 : 1;
}
