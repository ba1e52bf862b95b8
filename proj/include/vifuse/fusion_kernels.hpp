#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <vector>

#include "vifuse/errors.hpp"

namespace vifuse {

using FeatureVector = Eigen::VectorXd;

// Dense n-d array, row-major, with the channel axis last (so per-channel data
// is contiguous along the fastest axis).
struct Tensor {
  std::vector<Eigen::Index> shape;
  Eigen::VectorXd data;

  static Tensor zeros(std::vector<Eigen::Index> shape);
  static Tensor from(std::vector<Eigen::Index> shape, Eigen::VectorXd data);

  Eigen::Index size() const { return data.size(); }
  Eigen::Index channels() const;      // extent of the last axis
  Eigen::Index spatial_size() const;  // product of all other extents
};

double sigmoid(double x);
double softplus(double x);

FeatureVector concat(const FeatureVector& a, const FeatureVector& b);

// Per-channel mean over all spatial positions.
FeatureVector squeeze(const Tensor& t);

// Modality gating: each stream is weighted element-wise by a sigmoid mask
// computed from the concatenation of both streams.
struct SoftFusionParams {
  Eigen::MatrixXd weights_v;  // (dv + di) x dv
  Eigen::VectorXd bias_v;     // dv
  Eigen::MatrixXd weights_i;  // (dv + di) x di
  Eigen::VectorXd bias_i;     // di
};

struct FusionMasks {
  FeatureVector mask_v;  // sigmoid outputs, strictly inside (0, 1)
  FeatureVector mask_i;
};

struct SoftFusionResult {
  FeatureVector fused;   // [a_v .* mask_v ; a_i .* mask_i]
  FusionMasks masks;
  FeatureVector score_v;  // pre-sigmoid mask inputs (for activation statistics)
  FeatureVector score_i;
};

SoftFusionResult soft_fusion(const FeatureVector& a_v, const FeatureVector& a_i, const SoftFusionParams& p);

struct SoftFusionGrad {
  FeatureVector d_a_v, d_a_i;
  SoftFusionParams d_params;
};

// Reverse-mode gradient of soft_fusion given d(loss)/d(fused).
SoftFusionGrad soft_fusion_grad(const FeatureVector& a_v, const FeatureVector& a_i, const SoftFusionParams& p,
                                const FeatureVector& d_fused);

SoftFusionParams init_soft_fusion(int dv, int di, std::uint64_t seed);

// Squeeze-and-excitation gating across two streams: squeeze both, mix through a
// shared hidden layer, then re-weight each stream per channel by 2*sigmoid(E).
struct MmtmParams {
  Eigen::MatrixXd joint;     // (C + C') x dz
  Eigen::VectorXd joint_bias;
  Eigen::MatrixXd excite_a;  // dz x C
  Eigen::VectorXd excite_a_bias;
  Eigen::MatrixXd excite_b;  // dz x C'
  Eigen::VectorXd excite_b_bias;
};

struct MmtmResult {
  Tensor a_out, b_out;
  FeatureVector e_a, e_b;  // pre-sigmoid excitation signals
};

MmtmResult mmtm(const Tensor& a, const Tensor& b, const MmtmParams& p);

struct MmtmGrad {
  Tensor d_a, d_b;
  MmtmParams d_params;
};

MmtmGrad mmtm_grad(const Tensor& a, const Tensor& b, const MmtmParams& p, const Tensor& d_a_out,
                   const Tensor& d_b_out);

// dz == 0 picks ceil((C + C') / 4).
MmtmParams init_mmtm(int c_a, int c_b, int dz, std::uint64_t seed);

// Number of entries with sigmoid activation above 1/2, i.e. positive pre-activation.
int mask_activation_count(const FeatureVector& pre_activation);

// Central finite-difference gradient of a scalar function; throws
// NonFiniteEvaluation when any probe is not finite.
Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double h);

// --- small trainable regressors built on the kernels ------------------------

struct RegressionSample {
  FeatureVector a_v, a_i;
  FeatureVector target;
};

struct SoftFusionRegressor {
  SoftFusionParams fusion;
  Eigen::MatrixXd readout;       // (dv + di) x out
  Eigen::VectorXd readout_bias;  // out
};

struct TensorSample {
  Tensor a, b;
  FeatureVector target;
};

struct MmtmRegressor {
  MmtmParams fusion;
  Eigen::MatrixXd readout;       // (|a| + |b|) x out
  Eigen::VectorXd readout_bias;
};

struct TrainConfig {
  double lr = 0.01;
  int steps = 100;
  int batch = 0;  // 0 = full batch; otherwise sampled with the seed below
  std::uint64_t seed = 0;
};

SoftFusionRegressor init_soft_fusion_regressor(int dv, int di, int out, std::uint64_t seed);

// Plain gradient descent on mean squared error; returns the loss trace
// (initial loss followed by the loss after each step).  Throws
// DivergenceDetected when the loss stops being finite.
std::vector<double> grad_step_train(SoftFusionRegressor& model, const std::vector<RegressionSample>& data,
                                    const TrainConfig& cfg);
std::vector<double> grad_step_train(MmtmRegressor& model, const std::vector<TensorSample>& data,
                                    const TrainConfig& cfg);

// Prediction + per-frame mask scores of a trained soft-fusion regressor.
FeatureVector predict(const SoftFusionRegressor& model, const FeatureVector& a_v, const FeatureVector& a_i);

}  // namespace vifuse
