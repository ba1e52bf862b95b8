#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "vifuse/benchmark.hpp"
#include "vifuse/dataio.hpp"
#include "vifuse/metrics.hpp"
#include "vifuse/pose_graph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vifuse;

namespace {

// Exit codes: 0 ok, 2 usage, 3 I/O or parse, 4 solver, 5 data mismatch.
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kIo = 3;
constexpr int kSolver = 4;
constexpr int kData = 5;

std::string default_out_dir() {
  const char* env = std::getenv("VIFUSE_OUT_DIR");
  return env && *env ? env : ".";
}

json report_to_json(const TrajectoryReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"e_med_p", opt(r.e_med_p)},     {"e_med_q", opt(r.e_med_q)},
              {"d_e_med_p", opt(r.d_e_med_p)}, {"d_e_med_q", opt(r.d_e_med_q)},
              {"e_ate_p", opt(r.e_ate_p)},     {"e_atle_p", opt(r.e_atle_p)},
              {"frames", r.frames}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

struct SimulateOpts {
  std::uint64_t seed = 1;
  int frames = 200;
  double rate = 20.0;
  double amplitude = 2.0;
  NoiseModel apr, rpr;
  std::string out_dir;
};

int cmd_simulate(const SimulateOpts& o) {
  fs::create_directories(o.out_dir);
  const Trajectory gt = synth_trajectory(o.seed, o.frames, o.rate, o.amplitude);
  NoiseModel apr_nm = o.apr;
  apr_nm.seed = o.seed + 1;
  NoiseModel rpr_nm = o.rpr;
  rpr_nm.seed = o.seed + 2;

  Trajectory apr = gt;
  apr.poses = simulate_apr(gt, apr_nm);
  const std::vector<RelativePose> rpr = simulate_rpr(gt, rpr_nm);

  save_tum(gt, o.out_dir + "/gt.tum");
  save_tum(apr, o.out_dir + "/apr.tum");
  save_rpr_csv(rpr, o.out_dir + "/rpr.csv");
  std::cout << "wrote " << o.frames << " frames to " << o.out_dir << "/{gt.tum, apr.tum, rpr.csv}\n";
  return kOk;
}

struct FuseOpts {
  std::string apr_path, rpr_path, out_path;
  FusionConfig fusion;
  SolverConfig solver;
  double apr_stiff_t = 1.0, apr_stiff_r = 1.0;
  double rpr_stiff_t = 100.0, rpr_stiff_r = 100.0;
};

int cmd_fuse(FuseOpts& o) {
  const Trajectory apr = load_tum(o.apr_path);
  const std::vector<RelativePose> rpr = load_rpr_csv(o.rpr_path);
  o.fusion.apr_stiffness << o.apr_stiff_t, o.apr_stiff_t, o.apr_stiff_t, o.apr_stiff_r, o.apr_stiff_r, o.apr_stiff_r;
  o.fusion.rpr_stiffness << o.rpr_stiff_t, o.rpr_stiff_t, o.rpr_stiff_t, o.rpr_stiff_r, o.rpr_stiff_r, o.rpr_stiff_r;

  const FuseResult res = fuse_streams_detailed(apr.poses, rpr, {}, o.fusion, o.solver);
  Trajectory fused = apr;
  fused.poses = res.poses;
  save_tum(fused, o.out_path);

  double before = 0.0, after = 0.0;
  for (double e : res.window_energy_before) before += e;
  for (double e : res.window_energy_after) after += e;
  const double nw = static_cast<double>(res.window_energy_before.size());
  std::cout << "fused " << fused.size() << " frames over " << res.window_energy_before.size()
            << " windows; mean window energy " << before / nw << " -> " << after / nw << "\n";
  return kOk;
}

struct EvalOpts {
  std::string est_path, gt_path, rel_est_path, rel_gt_path, out_path;
  bool csv = false;
};

int cmd_eval(const EvalOpts& o) {
  const Trajectory est = load_tum(o.est_path);
  const Trajectory gt = load_tum(o.gt_path);
  std::vector<RelativePose> rel_est, rel_gt;
  if (!o.rel_est_path.empty()) rel_est = load_rpr_csv(o.rel_est_path);
  if (!o.rel_gt_path.empty()) rel_gt = load_rpr_csv(o.rel_gt_path);

  const TrajectoryReport r = evaluate_trajectory(est.poses, gt.poses, rel_est, rel_gt);

  std::string text;
  if (o.csv) {
    const auto cell = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(""); };
    text = "e_med_p,e_med_q,d_e_med_p,d_e_med_q,e_ate_p,e_atle_p,frames\n" + cell(r.e_med_p) + "," +
           cell(r.e_med_q) + "," + cell(r.d_e_med_p) + "," + cell(r.d_e_med_q) + "," + cell(r.e_ate_p) + "," +
           cell(r.e_atle_p) + "," + std::to_string(r.frames) + "\n";
  } else {
    json j = report_to_json(r);
    j["config"] = {{"est", o.est_path},
                   {"gt", o.gt_path},
                   {"rel_est", o.rel_est_path},
                   {"rel_gt", o.rel_gt_path}};
    text = j.dump(2) + "\n";
  }
  if (o.out_path.empty())
    std::cout << text;
  else
    write_text(o.out_path, text);
  return kOk;
}

struct GradcheckOpts {
  int seeds = 20;
  double h = 1e-5;
  double tol = 1e-4;
  std::string flip_kernel;  // test hook: sabotage one kernel's analytic gradient
};

int cmd_gradcheck(const GradcheckOpts& o) {
  struct Kernel {
    const char* name;
    double (*fn)(std::uint64_t, double, bool);
  };
  const Kernel kernels[] = {{"soft_fusion", gradcheck_soft_fusion},
                            {"mmtm", gradcheck_mmtm},
                            {"aleatoric", gradcheck_aleatoric},
                            {"aux_nonlinear", gradcheck_aux_nonlinear},
                            {"aux_conv", gradcheck_aux_conv}};
  bool ok = true;
  for (const Kernel& k : kernels) {
    const bool flip = o.flip_kernel == k.name;
    double worst = 0.0;
    for (int s = 0; s < o.seeds; ++s) worst = std::max(worst, k.fn(static_cast<std::uint64_t>(s) + 1, o.h, flip));
    const bool pass = worst <= o.tol;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << k.name << " worst_rel_err=" << worst << "\n";
  }
  return ok ? kOk : 1;
}

struct BenchOpts {
  int seeds = 20;
  std::uint64_t base_seed = 1;
  int frames = 200;
  int window = 5;
  bool corruption = false;
  std::string out_dir;
};

int cmd_bench(const BenchOpts& o) {
  fs::create_directories(o.out_dir);
  BenchScenario sc = default_scenario();
  sc.frames = o.frames;
  sc.fusion.window = o.window;

  const BenchSummary sum = run_benchmark(sc, o.seeds, o.base_seed);

  const auto cell = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(""); };
  std::string csv = "seed,method,e_med_p,e_med_q,d_e_med_p,d_e_med_q,e_ate_p,e_atle_p\n";
  json rows = json::array();
  for (const SeedOutcome& r : sum.rows) {
    const struct {
      const char* name;
      const TrajectoryReport* rep;
    } methods[] = {{"apr", &r.apr}, {"fused", &r.fused}, {"integrated_rpr", &r.integrated}};
    for (const auto& m : methods) {
      csv += std::to_string(r.seed) + "," + m.name + "," + cell(m.rep->e_med_p) + "," + cell(m.rep->e_med_q) +
             "," + cell(m.rep->d_e_med_p) + "," + cell(m.rep->d_e_med_q) + "," + cell(m.rep->e_ate_p) + "," +
             cell(m.rep->e_atle_p) + "\n";
    }
    json jr;
    jr["seed"] = r.seed;
    jr["apr"] = report_to_json(r.apr);
    jr["fused"] = report_to_json(r.fused);
    jr["integrated_rpr"] = report_to_json(r.integrated);
    jr["fused_apr_ratio"] = r.ratio_med_p;
    rows.push_back(jr);
  }
  write_text(o.out_dir + "/bench.csv", csv);

  json j;
  j["config"] = {{"seeds", o.seeds}, {"base_seed", o.base_seed}, {"frames", sc.frames},
                 {"window", sc.fusion.window}, {"rate_hz", sc.rate_hz}, {"amplitude", sc.amplitude},
                 {"apr_sigma_t", sc.apr_noise.sigma_t}, {"rpr_sigma_t", sc.rpr_noise.sigma_t}};
  j["rows"] = rows;
  j["median_fused_apr_ratio"] = sum.median_ratio;
  j["seeds_fused_better"] = sum.seeds_fused_better;
  write_text(o.out_dir + "/bench.json", j.dump(2) + "\n");
  std::cout << "bench: median fused/apr ratio " << sum.median_ratio << " over " << o.seeds << " seeds ("
            << sum.seeds_fused_better << " improved)\n";

  if (o.corruption) {
    const RobustnessSummary rs = run_robustness(sc, o.seeds, o.base_seed, {0.0, 0.5, 1.0});
    std::string rcsv = "kind,level,seed,apr_mean_err,fused_mean_err,mask_count\n";
    for (const RobustnessCell& c : rs.cells)
      rcsv += std::string(corruption_kind_name(c.kind)) + "," + std::to_string(c.level) + "," +
              std::to_string(c.seed) + "," + std::to_string(c.apr_mean_err) + "," +
              std::to_string(c.fused_mean_err) + "," + std::to_string(c.mask_count) + "\n";
    write_text(o.out_dir + "/robustness.csv", rcsv);
    json rj;
    rj["levels"] = rs.levels;
    rj["seeds"] = rs.seeds;
    rj["by_kind"] = json::array();
    for (const RobustnessKindSummary& k : rs.by_kind) {
      rj["by_kind"].push_back({{"kind", corruption_kind_name(k.kind)},
                               {"seeds_degrade_less", k.seeds_degrade_less},
                               {"seeds_mask_monotone", k.seeds_mask_monotone}});
      std::cout << "robustness " << corruption_kind_name(k.kind) << ": fused less degraded in "
                << k.seeds_degrade_less << "/" << rs.seeds << " seeds, mask monotone in "
                << k.seeds_mask_monotone << "/" << rs.seeds << "\n";
    }
    write_text(o.out_dir + "/robustness.json", rj.dump(2) + "\n");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visual-inertial pose stream fusion toolbox"};
  app.require_subcommand(1);

  SimulateOpts sim;
  sim.out_dir = default_out_dir();
  sim.apr.sigma_t = 0.5;
  sim.apr.sigma_theta = 0.05;
  sim.rpr.sigma_t = 0.005;
  sim.rpr.sigma_theta = 0.002;
  sim.rpr.bias_t = Vec3(0.001, 0.0, 0.0);
  auto* s = app.add_subcommand("simulate", "generate a seeded synthetic trajectory with noisy pose streams");
  s->add_option("--seed", sim.seed, "master seed");
  s->add_option("--frames", sim.frames, "number of frames")->check(CLI::Range(2, 1000000));
  s->add_option("--rate", sim.rate, "frame rate [Hz]")->check(CLI::PositiveNumber);
  s->add_option("--amplitude", sim.amplitude, "trajectory amplitude [m]")->check(CLI::NonNegativeNumber);
  s->add_option("--apr-sigma-t", sim.apr.sigma_t, "absolute translation noise std [m]");
  s->add_option("--apr-sigma-theta", sim.apr.sigma_theta, "absolute rotation noise std [rad]");
  s->add_option("--apr-outlier-prob", sim.apr.outlier_prob, "absolute outlier probability")->check(CLI::Range(0.0, 1.0));
  s->add_option("--apr-outlier-scale", sim.apr.outlier_scale, "absolute outlier noise scale");
  s->add_option("--rpr-sigma-t", sim.rpr.sigma_t, "relative translation noise std [m]");
  s->add_option("--rpr-sigma-theta", sim.rpr.sigma_theta, "relative rotation noise std [rad]");
  s->add_option("--rpr-bias-x", sim.rpr.bias_t.x(), "relative translation bias per step [m]");
  s->add_option("--rpr-bias-y", sim.rpr.bias_t.y(), "relative translation bias per step [m]");
  s->add_option("--rpr-bias-z", sim.rpr.bias_t.z(), "relative translation bias per step [m]");
  s->add_option("--out-dir", sim.out_dir, "output directory (default $VIFUSE_OUT_DIR or .)");

  FuseOpts fuse;
  auto* f = app.add_subcommand("fuse", "sliding-window fusion of an absolute stream with a relative stream");
  f->add_option("--apr", fuse.apr_path, "absolute stream (TUM)")->required();
  f->add_option("--rpr", fuse.rpr_path, "relative stream (CSV)")->required();
  f->add_option("--out", fuse.out_path, "fused output (TUM)")->required();
  f->add_option("--window", fuse.fusion.window, "window length")->check(CLI::Range(2, 100000));
  f->add_option("--stride", fuse.fusion.stride, "window stride")->check(CLI::Range(1, 100000));
  f->add_option("--skip", fuse.fusion.skip, "relative constraint gap")->check(CLI::Range(1, 100000));
  f->add_option("--apr-stiff-t", fuse.apr_stiff_t, "absolute translation stiffness");
  f->add_option("--apr-stiff-r", fuse.apr_stiff_r, "absolute rotation stiffness");
  f->add_option("--rpr-stiff-t", fuse.rpr_stiff_t, "relative translation stiffness");
  f->add_option("--rpr-stiff-r", fuse.rpr_stiff_r, "relative rotation stiffness");
  f->add_option("--max-iters", fuse.solver.max_iters, "solver iteration cap")->check(CLI::Range(1, 100000));
  f->add_option("--step-tol", fuse.solver.step_tol, "solver step tolerance");
  f->add_option("--damping", fuse.solver.damping, "initial damping")->check(CLI::NonNegativeNumber);

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "trajectory error metrics against ground truth");
  e->add_option("--est", ev.est_path, "estimated trajectory (TUM)")->required();
  e->add_option("--gt", ev.gt_path, "ground-truth trajectory (TUM)")->required();
  e->add_option("--rel-est", ev.rel_est_path, "estimated relative stream (CSV)");
  e->add_option("--rel-gt", ev.rel_gt_path, "ground-truth relative stream (CSV)");
  e->add_option("--out", ev.out_path, "write report here instead of stdout");
  e->add_flag("--csv", ev.csv, "emit a CSV row instead of JSON");

  GradcheckOpts gc;
  auto* g = app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
  g->add_option("--seeds", gc.seeds, "seeded configurations per kernel")->check(CLI::Range(1, 100000));
  g->add_option("--fd-step", gc.h, "finite-difference step")->check(CLI::PositiveNumber);
  g->add_option("--tol", gc.tol, "relative error tolerance")->check(CLI::PositiveNumber);
  g->add_option("--flip-sign", gc.flip_kernel)->group("");  // hidden test hook

  BenchOpts be;
  be.out_dir = default_out_dir();
  auto* b = app.add_subcommand("bench", "seeded synthetic benchmark of fusion against the raw streams");
  b->add_option("--seeds", be.seeds, "number of seeds")->check(CLI::Range(1, 100000));
  b->add_option("--base-seed", be.base_seed, "first seed");
  b->add_option("--frames", be.frames, "frames per run")->check(CLI::Range(10, 1000000));
  b->add_option("--window", be.window, "fusion window")->check(CLI::Range(2, 100000));
  b->add_flag("--corruption", be.corruption, "also sweep stream corruptions");
  b->add_option("--out-dir", be.out_dir, "output directory (default $VIFUSE_OUT_DIR or .)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim);
    if (f->parsed()) return cmd_fuse(fuse);
    if (e->parsed()) return cmd_eval(ev);
    if (g->parsed()) return cmd_gradcheck(gc);
    if (b->parsed()) return cmd_bench(be);
  } catch (const ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const NonMonotoneTimestamps& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const SingularSystem& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kSolver;
  } catch (const UnconstrainedPose& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kSolver;
  } catch (const DivergenceDetected& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kSolver;
  } catch (const StreamLengthMismatch& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kData;
  } catch (const LengthMismatch& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kData;
  } catch (const EmptyInput& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kData;
  } catch (const SpanOutOfRange& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kData;
  } catch (const DimensionMismatch& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kData;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  }
  return kOk;
}
