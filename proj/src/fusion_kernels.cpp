#include "vifuse/fusion_kernels.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace vifuse {

namespace {

void check_shape(const std::vector<Eigen::Index>& shape, Eigen::Index data_size) {
  if (shape.empty()) throw DimensionMismatch("tensor needs at least one axis");
  Eigen::Index prod = 1;
  for (Eigen::Index e : shape) {
    if (e < 1) throw DimensionMismatch("tensor extents must be positive");
    prod *= e;
  }
  if (prod != data_size)
    throw DimensionMismatch("tensor shape implies " + std::to_string(prod) + " entries, data has " +
                            std::to_string(data_size));
}

void fill_uniform(double* dst, Eigen::Index n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index k = 0; k < n; ++k) dst[k] = u(rng);
}

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

Tensor Tensor::zeros(std::vector<Eigen::Index> shape) {
  Tensor t;
  t.shape = std::move(shape);
  Eigen::Index prod = 1;
  for (Eigen::Index e : t.shape) prod *= e;
  check_shape(t.shape, prod);
  t.data = Eigen::VectorXd::Zero(prod);
  return t;
}

Tensor Tensor::from(std::vector<Eigen::Index> shape, Eigen::VectorXd data) {
  check_shape(shape, data.size());
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  return t;
}

Eigen::Index Tensor::channels() const {
  if (shape.empty()) throw DimensionMismatch("tensor needs at least one axis");
  return shape.back();
}

Eigen::Index Tensor::spatial_size() const { return size() / channels(); }

double sigmoid(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  // keep the output strictly inside (0, 1) even where exp saturates
  if (s <= 0.0) return std::numeric_limits<double>::min();
  if (s >= 1.0) return 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return s;
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

FeatureVector concat(const FeatureVector& a, const FeatureVector& b) {
  FeatureVector out(a.size() + b.size());
  out << a, b;
  return out;
}

FeatureVector squeeze(const Tensor& t) {
  check_shape(t.shape, t.data.size());
  const Eigen::Index c = t.channels(), n = t.spatial_size();
  RowMajorMap m(t.data.data(), n, c);
  return m.colwise().mean().transpose();
}

namespace {

void check_soft_fusion_dims(const FeatureVector& a_v, const FeatureVector& a_i, const SoftFusionParams& p) {
  const Eigen::Index dv = a_v.size(), di = a_i.size();
  if (p.weights_v.rows() != dv + di || p.weights_v.cols() != dv || p.bias_v.size() != dv ||
      p.weights_i.rows() != dv + di || p.weights_i.cols() != di || p.bias_i.size() != di)
    throw DimensionMismatch("soft fusion parameter shapes do not match feature sizes (" + std::to_string(dv) +
                            ", " + std::to_string(di) + ")");
}

}  // namespace

SoftFusionResult soft_fusion(const FeatureVector& a_v, const FeatureVector& a_i, const SoftFusionParams& p) {
  check_soft_fusion_dims(a_v, a_i, p);
  const FeatureVector x = concat(a_v, a_i);
  SoftFusionResult r;
  r.score_v = p.weights_v.transpose() * x + p.bias_v;
  r.score_i = p.weights_i.transpose() * x + p.bias_i;
  r.masks.mask_v = r.score_v.unaryExpr([](double s) { return sigmoid(s); });
  r.masks.mask_i = r.score_i.unaryExpr([](double s) { return sigmoid(s); });
  r.fused = concat(a_v.cwiseProduct(r.masks.mask_v), a_i.cwiseProduct(r.masks.mask_i));
  return r;
}

SoftFusionGrad soft_fusion_grad(const FeatureVector& a_v, const FeatureVector& a_i, const SoftFusionParams& p,
                                const FeatureVector& d_fused) {
  check_soft_fusion_dims(a_v, a_i, p);
  const Eigen::Index dv = a_v.size(), di = a_i.size();
  if (d_fused.size() != dv + di) throw DimensionMismatch("upstream gradient size does not match fused output");

  const SoftFusionResult f = soft_fusion(a_v, a_i, p);
  const FeatureVector x = concat(a_v, a_i);
  const FeatureVector df_v = d_fused.head(dv), df_i = d_fused.tail(di);

  // d(sigmoid) = m (1 - m)
  const FeatureVector ds_v =
      df_v.cwiseProduct(a_v).cwiseProduct(f.masks.mask_v).cwiseProduct(FeatureVector::Ones(dv) - f.masks.mask_v);
  const FeatureVector ds_i =
      df_i.cwiseProduct(a_i).cwiseProduct(f.masks.mask_i).cwiseProduct(FeatureVector::Ones(di) - f.masks.mask_i);

  SoftFusionGrad g;
  g.d_params.weights_v = x * ds_v.transpose();
  g.d_params.bias_v = ds_v;
  g.d_params.weights_i = x * ds_i.transpose();
  g.d_params.bias_i = ds_i;

  const FeatureVector dx = p.weights_v * ds_v + p.weights_i * ds_i;
  g.d_a_v = dx.head(dv) + df_v.cwiseProduct(f.masks.mask_v);
  g.d_a_i = dx.tail(di) + df_i.cwiseProduct(f.masks.mask_i);
  return g;
}

SoftFusionParams init_soft_fusion(int dv, int di, std::uint64_t seed) {
  if (dv < 1 || di < 1) throw DimensionMismatch("feature sizes must be positive");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dv + di));
  SoftFusionParams p;
  p.weights_v.resize(dv + di, dv);
  p.bias_v.resize(dv);
  p.weights_i.resize(dv + di, di);
  p.bias_i.resize(di);
  fill_uniform(p.weights_v.data(), p.weights_v.size(), bound, rng);
  fill_uniform(p.bias_v.data(), p.bias_v.size(), bound, rng);
  fill_uniform(p.weights_i.data(), p.weights_i.size(), bound, rng);
  fill_uniform(p.bias_i.data(), p.bias_i.size(), bound, rng);
  return p;
}

namespace {

void check_mmtm_dims(const Tensor& a, const Tensor& b, const MmtmParams& p) {
  check_shape(a.shape, a.data.size());
  check_shape(b.shape, b.data.size());
  const Eigen::Index ca = a.channels(), cb = b.channels(), dz = p.joint.cols();
  if (p.joint.rows() != ca + cb || p.joint_bias.size() != dz || p.excite_a.rows() != dz ||
      p.excite_a.cols() != ca || p.excite_a_bias.size() != ca || p.excite_b.rows() != dz ||
      p.excite_b.cols() != cb || p.excite_b_bias.size() != cb)
    throw DimensionMismatch("mmtm parameter shapes do not match stream channels (" + std::to_string(ca) + ", " +
                            std::to_string(cb) + ")");
}

struct MmtmForward {
  FeatureVector s_a, s_b, z_pre, z, e_a, e_b, gate_a, gate_b;
};

MmtmForward mmtm_forward(const Tensor& a, const Tensor& b, const MmtmParams& p) {
  MmtmForward f;
  f.s_a = squeeze(a);
  f.s_b = squeeze(b);
  f.z_pre = p.joint.transpose() * concat(f.s_a, f.s_b) + p.joint_bias;
  f.z = f.z_pre.cwiseMax(0.0);
  f.e_a = p.excite_a.transpose() * f.z + p.excite_a_bias;
  f.e_b = p.excite_b.transpose() * f.z + p.excite_b_bias;
  f.gate_a = f.e_a.unaryExpr([](double e) { return 2.0 * sigmoid(e); });
  f.gate_b = f.e_b.unaryExpr([](double e) { return 2.0 * sigmoid(e); });
  return f;
}

Tensor apply_gate(const Tensor& t, const FeatureVector& gate) {
  const Eigen::Index c = t.channels(), n = t.spatial_size();
  Tensor out = t;
  for (Eigen::Index s = 0; s < n; ++s) out.data.segment(s * c, c).array() *= gate.array();
  return out;
}

}  // namespace

MmtmResult mmtm(const Tensor& a, const Tensor& b, const MmtmParams& p) {
  check_mmtm_dims(a, b, p);
  const MmtmForward f = mmtm_forward(a, b, p);
  MmtmResult r;
  r.a_out = apply_gate(a, f.gate_a);
  r.b_out = apply_gate(b, f.gate_b);
  r.e_a = f.e_a;
  r.e_b = f.e_b;
  return r;
}

MmtmGrad mmtm_grad(const Tensor& a, const Tensor& b, const MmtmParams& p, const Tensor& d_a_out,
                   const Tensor& d_b_out) {
  check_mmtm_dims(a, b, p);
  if (d_a_out.shape != a.shape || d_b_out.shape != b.shape)
    throw DimensionMismatch("upstream gradient shapes do not match the input streams");

  const MmtmForward f = mmtm_forward(a, b, p);
  const Eigen::Index ca = a.channels(), na = a.spatial_size();
  const Eigen::Index cb = b.channels(), nb = b.spatial_size();

  // d(gate) collects the upstream gradient against the raw stream values.
  FeatureVector d_gate_a = FeatureVector::Zero(ca), d_gate_b = FeatureVector::Zero(cb);
  for (Eigen::Index s = 0; s < na; ++s)
    d_gate_a += d_a_out.data.segment(s * ca, ca).cwiseProduct(a.data.segment(s * ca, ca));
  for (Eigen::Index s = 0; s < nb; ++s)
    d_gate_b += d_b_out.data.segment(s * cb, cb).cwiseProduct(b.data.segment(s * cb, cb));

  // gate = 2 sigmoid(e): d(gate)/d(e) = 2 m (1 - m) with m = gate / 2.
  const FeatureVector m_a = 0.5 * f.gate_a, m_b = 0.5 * f.gate_b;
  const FeatureVector d_e_a = d_gate_a.cwiseProduct(2.0 * m_a.cwiseProduct(FeatureVector::Ones(ca) - m_a));
  const FeatureVector d_e_b = d_gate_b.cwiseProduct(2.0 * m_b.cwiseProduct(FeatureVector::Ones(cb) - m_b));

  MmtmGrad g;
  g.d_params.excite_a = f.z * d_e_a.transpose();
  g.d_params.excite_a_bias = d_e_a;
  g.d_params.excite_b = f.z * d_e_b.transpose();
  g.d_params.excite_b_bias = d_e_b;

  FeatureVector d_z = p.excite_a * d_e_a + p.excite_b * d_e_b;
  for (Eigen::Index k = 0; k < d_z.size(); ++k)
    if (f.z_pre[k] <= 0.0) d_z[k] = 0.0;

  const FeatureVector x = concat(f.s_a, f.s_b);
  g.d_params.joint = x * d_z.transpose();
  g.d_params.joint_bias = d_z;

  const FeatureVector d_x = p.joint * d_z;
  const FeatureVector d_s_a = d_x.head(ca), d_s_b = d_x.tail(cb);

  // Through the squeeze every spatial position shares d(s)/N, plus the direct
  // gating term on the raw values.
  g.d_a = Tensor::zeros(a.shape);
  g.d_b = Tensor::zeros(b.shape);
  for (Eigen::Index s = 0; s < na; ++s)
    g.d_a.data.segment(s * ca, ca) =
        d_s_a / static_cast<double>(na) + d_a_out.data.segment(s * ca, ca).cwiseProduct(f.gate_a);
  for (Eigen::Index s = 0; s < nb; ++s)
    g.d_b.data.segment(s * cb, cb) =
        d_s_b / static_cast<double>(nb) + d_b_out.data.segment(s * cb, cb).cwiseProduct(f.gate_b);
  return g;
}

MmtmParams init_mmtm(int c_a, int c_b, int dz, std::uint64_t seed) {
  if (c_a < 1 || c_b < 1) throw DimensionMismatch("channel counts must be positive");
  if (dz == 0) dz = (c_a + c_b + 3) / 4;  // ceil((C + C') / 4)
  if (dz < 1) throw DimensionMismatch("joint size must be positive");
  std::mt19937_64 rng(seed);
  MmtmParams p;
  p.joint.resize(c_a + c_b, dz);
  p.joint_bias.resize(dz);
  p.excite_a.resize(dz, c_a);
  p.excite_a_bias.resize(c_a);
  p.excite_b.resize(dz, c_b);
  p.excite_b_bias.resize(c_b);
  const double b_joint = 1.0 / std::sqrt(static_cast<double>(c_a + c_b));
  const double b_exc = 1.0 / std::sqrt(static_cast<double>(dz));
  fill_uniform(p.joint.data(), p.joint.size(), b_joint, rng);
  fill_uniform(p.joint_bias.data(), p.joint_bias.size(), b_joint, rng);
  fill_uniform(p.excite_a.data(), p.excite_a.size(), b_exc, rng);
  fill_uniform(p.excite_a_bias.data(), p.excite_a_bias.size(), b_exc, rng);
  fill_uniform(p.excite_b.data(), p.excite_b.size(), b_exc, rng);
  fill_uniform(p.excite_b_bias.data(), p.excite_b_bias.size(), b_exc, rng);
  return p;
}

int mask_activation_count(const FeatureVector& pre_activation) {
  int n = 0;
  for (Eigen::Index k = 0; k < pre_activation.size(); ++k)
    if (pre_activation[k] > 0.0) ++n;
  return n;
}

Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double h) {
  if (!(h > 0.0)) throw DimensionMismatch("finite-difference step must be positive");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double fp = f(probe);
    probe[k] = x[k] - h;
    const double fm = f(probe);
    probe[k] = x[k];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteEvaluation("objective not finite at finite-difference probe " + std::to_string(k));
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// --- regressors --------------------------------------------------------------

SoftFusionRegressor init_soft_fusion_regressor(int dv, int di, int out, std::uint64_t seed) {
  if (out < 1) throw DimensionMismatch("readout size must be positive");
  SoftFusionRegressor m;
  m.fusion = init_soft_fusion(dv, di, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dv + di));
  m.readout.resize(dv + di, out);
  m.readout_bias.resize(out);
  fill_uniform(m.readout.data(), m.readout.size(), bound, rng);
  fill_uniform(m.readout_bias.data(), m.readout_bias.size(), bound, rng);
  return m;
}

FeatureVector predict(const SoftFusionRegressor& model, const FeatureVector& a_v, const FeatureVector& a_i) {
  const SoftFusionResult r = soft_fusion(a_v, a_i, model.fusion);
  return model.readout.transpose() * r.fused + model.readout_bias;
}

namespace {

double dataset_loss_soft(const SoftFusionRegressor& m, const std::vector<RegressionSample>& data) {
  double loss = 0.0;
  for (const RegressionSample& s : data) {
    const FeatureVector err = predict(m, s.a_v, s.a_i) - s.target;
    loss += err.squaredNorm();
  }
  return loss / static_cast<double>(data.size());
}

double dataset_loss_mmtm(const MmtmRegressor& m, const std::vector<TensorSample>& data) {
  double loss = 0.0;
  for (const TensorSample& s : data) {
    const MmtmResult r = mmtm(s.a, s.b, m.fusion);
    const FeatureVector y = m.readout.transpose() * concat(r.a_out.data, r.b_out.data) + m.readout_bias;
    loss += (y - s.target).squaredNorm();
  }
  return loss / static_cast<double>(data.size());
}

std::vector<size_t> pick_batch(size_t n, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (cfg.batch <= 0 || static_cast<size_t>(cfg.batch) >= n) {
    std::vector<size_t> all(n);
    std::iota(all.begin(), all.end(), size_t{0});
    return all;
  }
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  std::vector<size_t> out(static_cast<size_t>(cfg.batch));
  for (size_t& k : out) k = pick(rng);
  return out;
}

}  // namespace

std::vector<double> grad_step_train(SoftFusionRegressor& model, const std::vector<RegressionSample>& data,
                                    const TrainConfig& cfg) {
  if (data.empty()) throw EmptyInput("training set is empty");
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> trace;
  trace.push_back(dataset_loss_soft(model, data));
  if (!std::isfinite(trace.back())) throw DivergenceDetected("initial loss is not finite");

  for (int step = 0; step < cfg.steps; ++step) {
    const std::vector<size_t> batch = pick_batch(data.size(), cfg, rng);
    SoftFusionGrad acc;
    acc.d_params.weights_v = Eigen::MatrixXd::Zero(model.fusion.weights_v.rows(), model.fusion.weights_v.cols());
    acc.d_params.bias_v = Eigen::VectorXd::Zero(model.fusion.bias_v.size());
    acc.d_params.weights_i = Eigen::MatrixXd::Zero(model.fusion.weights_i.rows(), model.fusion.weights_i.cols());
    acc.d_params.bias_i = Eigen::VectorXd::Zero(model.fusion.bias_i.size());
    Eigen::MatrixXd d_readout = Eigen::MatrixXd::Zero(model.readout.rows(), model.readout.cols());
    Eigen::VectorXd d_readout_bias = Eigen::VectorXd::Zero(model.readout_bias.size());

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (size_t k : batch) {
      const RegressionSample& s = data[k];
      const SoftFusionResult r = soft_fusion(s.a_v, s.a_i, model.fusion);
      const FeatureVector y = model.readout.transpose() * r.fused + model.readout_bias;
      const FeatureVector dy = 2.0 * inv_b * (y - s.target);
      d_readout += r.fused * dy.transpose();
      d_readout_bias += dy;
      const SoftFusionGrad g = soft_fusion_grad(s.a_v, s.a_i, model.fusion, model.readout * dy);
      acc.d_params.weights_v += g.d_params.weights_v;
      acc.d_params.bias_v += g.d_params.bias_v;
      acc.d_params.weights_i += g.d_params.weights_i;
      acc.d_params.bias_i += g.d_params.bias_i;
    }

    model.fusion.weights_v -= cfg.lr * acc.d_params.weights_v;
    model.fusion.bias_v -= cfg.lr * acc.d_params.bias_v;
    model.fusion.weights_i -= cfg.lr * acc.d_params.weights_i;
    model.fusion.bias_i -= cfg.lr * acc.d_params.bias_i;
    model.readout -= cfg.lr * d_readout;
    model.readout_bias -= cfg.lr * d_readout_bias;

    trace.push_back(dataset_loss_soft(model, data));
    if (!std::isfinite(trace.back()))
      throw DivergenceDetected("training loss became non-finite at step " + std::to_string(step + 1));
  }
  return trace;
}

std::vector<double> grad_step_train(MmtmRegressor& model, const std::vector<TensorSample>& data,
                                    const TrainConfig& cfg) {
  if (data.empty()) throw EmptyInput("training set is empty");
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> trace;
  trace.push_back(dataset_loss_mmtm(model, data));
  if (!std::isfinite(trace.back())) throw DivergenceDetected("initial loss is not finite");

  for (int step = 0; step < cfg.steps; ++step) {
    const std::vector<size_t> batch = pick_batch(data.size(), cfg, rng);
    MmtmParams dp;
    dp.joint = Eigen::MatrixXd::Zero(model.fusion.joint.rows(), model.fusion.joint.cols());
    dp.joint_bias = Eigen::VectorXd::Zero(model.fusion.joint_bias.size());
    dp.excite_a = Eigen::MatrixXd::Zero(model.fusion.excite_a.rows(), model.fusion.excite_a.cols());
    dp.excite_a_bias = Eigen::VectorXd::Zero(model.fusion.excite_a_bias.size());
    dp.excite_b = Eigen::MatrixXd::Zero(model.fusion.excite_b.rows(), model.fusion.excite_b.cols());
    dp.excite_b_bias = Eigen::VectorXd::Zero(model.fusion.excite_b_bias.size());
    Eigen::MatrixXd d_readout = Eigen::MatrixXd::Zero(model.readout.rows(), model.readout.cols());
    Eigen::VectorXd d_readout_bias = Eigen::VectorXd::Zero(model.readout_bias.size());

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (size_t k : batch) {
      const TensorSample& s = data[k];
      const MmtmResult r = mmtm(s.a, s.b, model.fusion);
      const FeatureVector flat = concat(r.a_out.data, r.b_out.data);
      const FeatureVector y = model.readout.transpose() * flat + model.readout_bias;
      const FeatureVector dy = 2.0 * inv_b * (y - s.target);
      d_readout += flat * dy.transpose();
      d_readout_bias += dy;
      const FeatureVector d_flat = model.readout * dy;
      const Tensor d_a_out = Tensor::from(s.a.shape, d_flat.head(s.a.size()));
      const Tensor d_b_out = Tensor::from(s.b.shape, d_flat.tail(s.b.size()));
      const MmtmGrad g = mmtm_grad(s.a, s.b, model.fusion, d_a_out, d_b_out);
      dp.joint += g.d_params.joint;
      dp.joint_bias += g.d_params.joint_bias;
      dp.excite_a += g.d_params.excite_a;
      dp.excite_a_bias += g.d_params.excite_a_bias;
      dp.excite_b += g.d_params.excite_b;
      dp.excite_b_bias += g.d_params.excite_b_bias;
    }

    model.fusion.joint -= cfg.lr * dp.joint;
    model.fusion.joint_bias -= cfg.lr * dp.joint_bias;
    model.fusion.excite_a -= cfg.lr * dp.excite_a;
    model.fusion.excite_a_bias -= cfg.lr * dp.excite_a_bias;
    model.fusion.excite_b -= cfg.lr * dp.excite_b;
    model.fusion.excite_b_bias -= cfg.lr * dp.excite_b_bias;
    model.readout -= cfg.lr * d_readout;
    model.readout_bias -= cfg.lr * d_readout_bias;

    trace.push_back(dataset_loss_mmtm(model, data));
    if (!std::isfinite(trace.back()))
      throw DivergenceDetected("training loss became non-finite at step " + std::to_string(step + 1));
  }
  return trace;
}

}  // namespace vifuse
