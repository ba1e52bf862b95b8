#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "vifuse/geometry.hpp"

namespace vifuse {

enum class DistanceNorm { L1, L2 };

struct DistanceConfig {
  double beta_q = 1.0;  // weight of the quaternion term
  DistanceNorm norm = DistanceNorm::L1;
};

struct LossWeights {
  double alpha = 1.0;  // pairwise term
  double beta = 1.0;   // relative-stream term
  double gamma = 1.0;  // absolute term
};

// Translation norm plus beta_q times the quaternion-component norm, with the
// second quaternion flipped onto the hemisphere of the first.  Zero iff the
// poses are equal up to quaternion sign.
double pose_distance(const Pose& a, const Pose& b, const DistanceConfig& cfg);

// Same form on relative steps.
double relative_distance(const RelativePose& a, const RelativePose& b, const DistanceConfig& cfg);

// Same form on raw component-wise pose differences (no hemisphere handling:
// the inputs are already plain differences, not rotations).
double literal_diff_distance(const LiteralPoseDiff& a, const LiteralPoseDiff& b, const DistanceConfig& cfg);

// Absolute term over all frames plus a pairwise term over the given index
// pairs.  The pairwise default compares raw component-wise differences;
// body_frame_pairs switches to proper relative transforms instead.
double mapnet_loss(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                   const std::vector<std::pair<int, int>>& pairs, const DistanceConfig& cfg,
                   bool body_frame_pairs = false);

// gamma * absolute + alpha * pairwise + beta * relative-stream.
double fusion_total_loss(const std::vector<Pose>& abs_pred, const std::vector<Pose>& abs_gt,
                         const std::vector<std::pair<int, int>>& pairs,
                         const std::vector<RelativePose>& rel_pred, const std::vector<RelativePose>& rel_gt,
                         const LossWeights& w, const DistanceConfig& cfg, bool body_frame_pairs = false);

// Heteroscedastic residual weighting.  Variance form takes sigma^2 (> 0)
// directly; LogVariance takes s = log sigma^2.  The two agree exactly for
// matching arguments, and d/ds vanishes at s = log(residual_sq).
enum class AleatoricForm { Variance, LogVariance };

double aleatoric_loss(double residual_sq, double sigma_sq_or_s, AleatoricForm form);

// Relative-stream variant with its own log-variance.
double aleatoric_loss_relative(double residual_sq, double s_rel);

struct AleatoricGrad {
  double d_residual_sq = 0.0;
  double d_s = 0.0;
};
AleatoricGrad aleatoric_loss_grad(double residual_sq, double s, AleatoricForm form);

// Pose estimate with a scalar log-variance for the aleatoric losses above.
struct UncertainPose {
  Pose mean;
  double log_var = 0.0;
};
struct UncertainRelativePose {
  RelativePose mean;
  double log_var = 0.0;
};

// --- learned loss combination ------------------------------------------------

enum class AuxVariant { NonLinear, Convolutional };

struct AuxFcLayer {
  Eigen::MatrixXd weight;  // in x out
  Eigen::VectorXd bias;
};

struct AuxConvLayer {
  Eigen::VectorXd kernel;  // valid 1-d convolution
  double bias = 0.0;
};

struct AuxParams {
  AuxVariant variant = AuxVariant::NonLinear;
  std::vector<AuxFcLayer> fc;      // NonLinear: softplus after every layer, output size 1
  std::vector<AuxConvLayer> conv;  // Convolutional: valid convs, then sum-pool to a scalar
};

// Scalar combination of task losses by the learned network.
double aux_combine(const Eigen::VectorXd& losses, const AuxParams& p);

struct AuxCombineGrad {
  Eigen::VectorXd d_losses;
  AuxParams d_params;
};
AuxCombineGrad aux_combine_grad(const Eigen::VectorXd& losses, const AuxParams& p);

// dims runs input -> hidden... -> 1.  A single zero-initialized layer maps
// everything to softplus(0) = ln 2.
AuxParams init_aux_nonlinear(const std::vector<int>& dims, std::uint64_t seed);
AuxParams init_aux_conv(int input_len, const std::vector<int>& kernel_widths, std::uint64_t seed);

// Flattened parameter view used by finite-difference machinery.
Eigen::VectorXd aux_params_flatten(const AuxParams& p);
AuxParams aux_params_unflatten(const AuxParams& like, const Eigen::VectorXd& flat);

// Per-task losses of the main model on a batch; element 0 is the main task.
using TaskLossFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& main_params)>;

struct AlternatingStepResult {
  Eigen::VectorXd main_params;
  AuxParams aux_params;
  double total_before = 0.0;  // main + combined on the training batch
  double total_after = 0.0;
  double aux_set_before = 0.0;  // main-task loss on the held-out auxiliary batch
  double aux_set_after = 0.0;
};

// One round of the alternating scheme: descend the main parameters on
// main-task + combined loss, then descend the combiner parameters on the
// auxiliary-batch main-task loss evaluated after that one main step
// (first-order hypergradient, all via central differences with step fd_step).
// lr_aux == 0 skips the combiner update entirely.
AlternatingStepResult aux_alternating_step(const Eigen::VectorXd& main_params, const AuxParams& aux,
                                           const TaskLossFn& train_losses, const TaskLossFn& aux_losses,
                                           double lr_main, double lr_aux, double fd_step = 1e-6);

}  // namespace vifuse
