#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "vifuse/geometry.hpp"

namespace vifuse {

enum class ConstraintKind { AbsolutePrior, Relative };

// One measurement with a diagonal stiffness (inverse-covariance) weight:
// 3 translation entries followed by 3 rotation entries.
struct Constraint {
  ConstraintKind kind = ConstraintKind::AbsolutePrior;
  int i = 0;
  int j = 0;  // unused for AbsolutePrior
  Pose prior_target;
  RelativePose rel_target;
  Vec6 stiffness = Vec6::Ones();

  static Constraint absolute_prior(int frame, const Pose& target, const Vec6& stiffness);
  static Constraint relative(int i, int j, const RelativePose& target, const Vec6& stiffness);
};

struct PoseGraph {
  std::vector<Pose> poses;
  std::vector<Constraint> constraints;
};

struct LinearSystem {
  Eigen::MatrixXd jacobian;   // stiffness-weighted, 6 rows per constraint
  Eigen::VectorXd residual;   // stiffness-weighted, positive-gradient convention
  std::optional<Eigen::VectorXd> solution;
};

struct SolverConfig {
  int max_iters = 100;
  double step_tol = 1e-10;   // infinity norm of the tangent step
  double damping = 0.0;      // lambda added to the normal-equation diagonal
  double fd_step = 1e-6;     // central-difference step for Jacobians
};

struct FusionConfig {
  int window = 5;   // frames per sliding window, >= 2
  int stride = 1;   // window advance, >= 1
  int skip = 1;     // relative constraints connect frames k apart, >= 1
  Vec6 apr_stiffness = Vec6::Ones();
  Vec6 rpr_stiffness = Vec6::Constant(100.0);
};

// Tangent-space residual of one constraint: (translation part, rotation-vector part).
// Zero iff the constraint is exactly satisfied.
Vec6 constraint_residual(const PoseGraph& g, const Constraint& c);

// r^T diag(stiffness) r for one constraint; total_energy sums over all constraints.
double constraint_energy(const PoseGraph& g, const Constraint& c);
double total_energy(const PoseGraph& g);

// Stacks stiffness-weighted residuals and central-difference Jacobian blocks
// over per-pose tangent perturbations (step cfg.fd_step).
LinearSystem linearize(const PoseGraph& g, const SolverConfig& cfg);

// Closed-form translation rows of one constraint's Jacobian, for cross-checking
// the finite-difference blocks.  d_i and d_j are d(translation residual)/d(tangent)
// of pose i and pose j (d_j meaningful for Relative constraints only).
struct TranslationJacobian {
  Eigen::Matrix<double, 3, 6> d_i = Eigen::Matrix<double, 3, 6>::Zero();
  Eigen::Matrix<double, 3, 6> d_j = Eigen::Matrix<double, 3, 6>::Zero();
};
TranslationJacobian translation_jacobian(const PoseGraph& g, const Constraint& c);

// Solves (J^T J + damping I) dz = J^T r.  Throws SingularSystem when the
// factorization reveals a rank-deficient (non positive-definite) system.
Eigen::VectorXd solve_normal_equations(const LinearSystem& s, double damping);

struct OptimizeResult {
  PoseGraph graph;
  std::vector<double> energy_trace;  // energy before iteration 1, then after each accepted step
  int iterations = 0;
  double final_step_inf = 0.0;
};

// Damped Gauss-Newton on the pose manifold.  Steps that would increase the
// energy are rejected and retried with doubled damping, so the trace of
// accepted energies is non-increasing.
OptimizeResult optimize(const PoseGraph& g, const SolverConfig& cfg);

struct FuseResult {
  std::vector<Pose> poses;
  std::vector<double> window_energy_before;
  std::vector<double> window_energy_after;
};

// Sliding-window fusion of an absolute pose stream (one prior per frame) with a
// relative step stream (|rpr| == |apr| - 1).  Each window is optimized
// independently and emits the frames not covered by an earlier window, so the
// output is causal: a frame is fixed the first time it is the newest member of
// a window.  `present` marks which absolute measurements exist (empty = all);
// absent frames contribute no prior and are initialized by chaining the
// relative stream.
FuseResult fuse_streams_detailed(const std::vector<Pose>& apr,
                                 const std::vector<RelativePose>& rpr,
                                 const std::vector<bool>& present,
                                 const FusionConfig& fcfg, const SolverConfig& scfg);

std::vector<Pose> fuse_streams(const std::vector<Pose>& apr,
                               const std::vector<RelativePose>& rpr,
                               const FusionConfig& fcfg, const SolverConfig& scfg);

}  // namespace vifuse
