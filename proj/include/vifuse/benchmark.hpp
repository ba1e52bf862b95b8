#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vifuse/dataio.hpp"
#include "vifuse/fusion_kernels.hpp"
#include "vifuse/metrics.hpp"
#include "vifuse/pose_graph.hpp"

namespace vifuse {

// One synthetic run: ground truth, noisy absolute stream, noisy relative stream.
struct BenchScenario {
  int frames = 200;
  double rate_hz = 20.0;
  double amplitude = 2.0;
  NoiseModel apr_noise;  // defaults set by default_scenario()
  NoiseModel rpr_noise;
  FusionConfig fusion;
  SolverConfig solver;
};

BenchScenario default_scenario();

struct SeedOutcome {
  std::uint64_t seed = 0;
  TrajectoryReport apr;         // raw absolute stream vs ground truth
  TrajectoryReport fused;       // sliding-window fusion vs ground truth
  TrajectoryReport integrated;  // relative stream integrated from the first pose
  double ratio_med_p = 0.0;     // fused / apr median translation error
};

struct BenchSummary {
  std::vector<SeedOutcome> rows;
  double median_ratio = 0.0;
  int seeds_fused_better = 0;  // ratio < 1
};

BenchSummary run_benchmark(const BenchScenario& sc, int seeds, std::uint64_t base_seed);

// --- corruption sweep ---------------------------------------------------------

// Replaces absent frames by the last present value (backward fill at the head),
// which is how a consumer of the raw stream would have to cope.
std::vector<Pose> fill_absent(const PoseStream& s);

struct RobustnessCell {
  CorruptionKind kind = CorruptionKind::NoiseBurst;
  double level = 0.0;
  std::uint64_t seed = 0;
  double apr_mean_err = 0.0;    // mean translation error of the filled raw stream
  double fused_mean_err = 0.0;  // mean translation error of the fused output
  int mask_count = 0;           // absolute-side activation count of the toy gate
};

struct RobustnessKindSummary {
  CorruptionKind kind = CorruptionKind::NoiseBurst;
  int seeds_degrade_less = 0;    // fused beats raw at level 0 and degrades less at every level > 0
  int seeds_mask_monotone = 0;   // activation count non-increasing across levels
};

struct RobustnessSummary {
  std::vector<double> levels;
  std::vector<RobustnessCell> cells;
  std::vector<RobustnessKindSummary> by_kind;
  int seeds = 0;
};

RobustnessSummary run_robustness(const BenchScenario& sc, int seeds, std::uint64_t base_seed,
                                 const std::vector<double>& levels);

const char* corruption_kind_name(CorruptionKind k);

// --- analytic-vs-finite-difference gradient checks ----------------------------

// Each returns the worst relative error between the assembled analytic gradient
// and a central finite difference (step h) over one seeded random configuration.
// flip_sign negates the analytic gradient (a sabotage hook for testing the
// checker itself).
double gradcheck_soft_fusion(std::uint64_t seed, double h, bool flip_sign = false);
double gradcheck_mmtm(std::uint64_t seed, double h, bool flip_sign = false);
double gradcheck_aleatoric(std::uint64_t seed, double h, bool flip_sign = false);
double gradcheck_aux_nonlinear(std::uint64_t seed, double h, bool flip_sign = false);
double gradcheck_aux_conv(std::uint64_t seed, double h, bool flip_sign = false);

}  // namespace vifuse
