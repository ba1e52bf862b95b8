#include "vifuse/losses.hpp"

#include <cmath>
#include <random>

#include "vifuse/fusion_kernels.hpp"

namespace vifuse {

namespace {

double norm_of(const Vec3& v, DistanceNorm n) { return n == DistanceNorm::L1 ? v.lpNorm<1>() : v.norm(); }
double norm_of(const Vec4& v, DistanceNorm n) { return n == DistanceNorm::L1 ? v.lpNorm<1>() : v.norm(); }

// Flip b onto a's hemisphere before taking component differences.
Vec4 aligned_diff(const Quat& a, const Quat& b) {
  const double sign = a.coeffs().dot(b.coeffs()) < 0.0 ? -1.0 : 1.0;
  return quat_wxyz(a) - sign * quat_wxyz(b);
}

}  // namespace

double pose_distance(const Pose& a, const Pose& b, const DistanceConfig& cfg) {
  return norm_of(Vec3(a.t - b.t), cfg.norm) + cfg.beta_q * norm_of(aligned_diff(a.q, b.q), cfg.norm);
}

double relative_distance(const RelativePose& a, const RelativePose& b, const DistanceConfig& cfg) {
  return norm_of(Vec3(a.dt - b.dt), cfg.norm) + cfg.beta_q * norm_of(aligned_diff(a.dq, b.dq), cfg.norm);
}

double literal_diff_distance(const LiteralPoseDiff& a, const LiteralPoseDiff& b, const DistanceConfig& cfg) {
  return norm_of(Vec3(a.dt - b.dt), cfg.norm) + cfg.beta_q * norm_of(Vec4(a.dq4 - b.dq4), cfg.norm);
}

namespace {

void check_pair(const std::vector<Pose>& v, const std::pair<int, int>& p) {
  const int n = static_cast<int>(v.size());
  if (p.first < 0 || p.first >= n || p.second < 0 || p.second >= n)
    throw IndexOutOfRange("pair (" + std::to_string(p.first) + ", " + std::to_string(p.second) +
                          ") out of range for " + std::to_string(n) + " frames");
}

double pairwise_term(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                     const std::vector<std::pair<int, int>>& pairs, const DistanceConfig& cfg,
                     bool body_frame_pairs) {
  double loss = 0.0;
  for (const auto& p : pairs) {
    check_pair(pred, p);
    if (body_frame_pairs) {
      loss += relative_distance(relative_between(pred[p.first], pred[p.second]),
                                relative_between(gt[p.first], gt[p.second]), cfg);
    } else {
      loss += literal_diff_distance(literal_diff(pred[p.first], pred[p.second]),
                                    literal_diff(gt[p.first], gt[p.second]), cfg);
    }
  }
  return loss;
}

}  // namespace

double mapnet_loss(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                   const std::vector<std::pair<int, int>>& pairs, const DistanceConfig& cfg,
                   bool body_frame_pairs) {
  if (pred.size() != gt.size())
    throw LengthMismatch("prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                         std::to_string(gt.size()));
  double loss = 0.0;
  for (size_t k = 0; k < pred.size(); ++k) loss += pose_distance(pred[k], gt[k], cfg);
  return loss + pairwise_term(pred, gt, pairs, cfg, body_frame_pairs);
}

double fusion_total_loss(const std::vector<Pose>& abs_pred, const std::vector<Pose>& abs_gt,
                         const std::vector<std::pair<int, int>>& pairs,
                         const std::vector<RelativePose>& rel_pred, const std::vector<RelativePose>& rel_gt,
                         const LossWeights& w, const DistanceConfig& cfg, bool body_frame_pairs) {
  if (abs_pred.size() != abs_gt.size())
    throw LengthMismatch("absolute streams differ: " + std::to_string(abs_pred.size()) + " vs " +
                         std::to_string(abs_gt.size()));
  if (rel_pred.size() != rel_gt.size())
    throw LengthMismatch("relative streams differ: " + std::to_string(rel_pred.size()) + " vs " +
                         std::to_string(rel_gt.size()));
  double abs_term = 0.0;
  for (size_t k = 0; k < abs_pred.size(); ++k) abs_term += pose_distance(abs_pred[k], abs_gt[k], cfg);
  double rel_term = 0.0;
  for (size_t k = 0; k < rel_pred.size(); ++k) rel_term += relative_distance(rel_pred[k], rel_gt[k], cfg);
  return w.gamma * abs_term + w.alpha * pairwise_term(abs_pred, abs_gt, pairs, cfg, body_frame_pairs) +
         w.beta * rel_term;
}

double aleatoric_loss(double residual_sq, double sigma_sq_or_s, AleatoricForm form) {
  if (form == AleatoricForm::Variance) {
    const double var = sigma_sq_or_s;  // caller guarantees var > 0
    return residual_sq / (2.0 * var) + 0.5 * std::log(var);
  }
  const double s = sigma_sq_or_s;
  return 0.5 * std::exp(-s) * residual_sq + 0.5 * s;
}

double aleatoric_loss_relative(double residual_sq, double s_rel) {
  return aleatoric_loss(residual_sq, s_rel, AleatoricForm::LogVariance);
}

AleatoricGrad aleatoric_loss_grad(double residual_sq, double s, AleatoricForm form) {
  AleatoricGrad g;
  if (form == AleatoricForm::Variance) {
    const double var = s;
    g.d_residual_sq = 1.0 / (2.0 * var);
    g.d_s = -residual_sq / (2.0 * var * var) + 0.5 / var;
  } else {
    const double e = std::exp(-s);
    g.d_residual_sq = 0.5 * e;
    g.d_s = -0.5 * e * residual_sq + 0.5;
  }
  return g;
}

// --- learned loss combination ------------------------------------------------

namespace {

void check_aux(const Eigen::VectorXd& losses, const AuxParams& p) {
  if (losses.size() == 0) throw EmptyInput("loss vector is empty");
  if (p.variant == AuxVariant::NonLinear) {
    if (p.fc.empty()) throw DimensionMismatch("NonLinear combiner needs at least one layer");
    Eigen::Index cur = losses.size();
    for (const AuxFcLayer& l : p.fc) {
      if (l.weight.rows() != cur || l.bias.size() != l.weight.cols())
        throw DimensionMismatch("combiner layer shape mismatch (expected " + std::to_string(cur) + " inputs)");
      cur = l.weight.cols();
    }
    if (cur != 1) throw DimensionMismatch("combiner must end in a single output");
  } else {
    if (p.conv.empty()) throw DimensionMismatch("Convolutional combiner needs at least one layer");
    Eigen::Index cur = losses.size();
    for (const AuxConvLayer& l : p.conv) {
      if (l.kernel.size() < 1 || l.kernel.size() > cur)
        throw DimensionMismatch("convolution kernel wider than its input (" + std::to_string(l.kernel.size()) +
                                " vs " + std::to_string(cur) + ")");
      cur = cur - l.kernel.size() + 1;
    }
  }
}

Eigen::VectorXd conv_valid(const Eigen::VectorXd& x, const AuxConvLayer& l) {
  const Eigen::Index out_len = x.size() - l.kernel.size() + 1;
  Eigen::VectorXd y(out_len);
  for (Eigen::Index t = 0; t < out_len; ++t) y[t] = l.kernel.dot(x.segment(t, l.kernel.size())) + l.bias;
  return y;
}

}  // namespace

double aux_combine(const Eigen::VectorXd& losses, const AuxParams& p) {
  check_aux(losses, p);
  Eigen::VectorXd x = losses;
  if (p.variant == AuxVariant::NonLinear) {
    for (const AuxFcLayer& l : p.fc)
      x = (l.weight.transpose() * x + l.bias).unaryExpr([](double v) { return softplus(v); });
    return x[0];
  }
  for (const AuxConvLayer& l : p.conv) x = conv_valid(x, l);
  return x.sum();
}

AuxCombineGrad aux_combine_grad(const Eigen::VectorXd& losses, const AuxParams& p) {
  check_aux(losses, p);
  AuxCombineGrad g;
  g.d_params.variant = p.variant;

  if (p.variant == AuxVariant::NonLinear) {
    std::vector<Eigen::VectorXd> inputs;   // input of each layer
    std::vector<Eigen::VectorXd> pre;      // pre-softplus activations
    Eigen::VectorXd x = losses;
    for (const AuxFcLayer& l : p.fc) {
      inputs.push_back(x);
      const Eigen::VectorXd z = l.weight.transpose() * x + l.bias;
      pre.push_back(z);
      x = z.unaryExpr([](double v) { return softplus(v); });
    }
    Eigen::VectorXd dx = Eigen::VectorXd::Ones(1);
    g.d_params.fc.resize(p.fc.size());
    for (int k = static_cast<int>(p.fc.size()) - 1; k >= 0; --k) {
      // softplus' = sigmoid
      const Eigen::VectorXd dz = dx.cwiseProduct(pre[k].unaryExpr([](double v) { return sigmoid(v); }));
      g.d_params.fc[k].weight = inputs[k] * dz.transpose();
      g.d_params.fc[k].bias = dz;
      dx = p.fc[k].weight * dz;
    }
    g.d_losses = dx;
    return g;
  }

  std::vector<Eigen::VectorXd> inputs;
  Eigen::VectorXd x = losses;
  for (const AuxConvLayer& l : p.conv) {
    inputs.push_back(x);
    x = conv_valid(x, l);
  }
  Eigen::VectorXd dy = Eigen::VectorXd::Ones(x.size());  // sum pool
  g.d_params.conv.resize(p.conv.size());
  for (int k = static_cast<int>(p.conv.size()) - 1; k >= 0; --k) {
    const Eigen::VectorXd& xin = inputs[k];
    const AuxConvLayer& l = p.conv[k];
    AuxConvLayer dl;
    dl.kernel = Eigen::VectorXd::Zero(l.kernel.size());
    dl.bias = dy.sum();
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(xin.size());
    for (Eigen::Index t = 0; t < dy.size(); ++t) {
      dl.kernel += dy[t] * xin.segment(t, l.kernel.size());
      dx.segment(t, l.kernel.size()) += dy[t] * l.kernel;
    }
    g.d_params.conv[k] = dl;
    dy = dx;
  }
  g.d_losses = dy;
  return g;
}

AuxParams init_aux_nonlinear(const std::vector<int>& dims, std::uint64_t seed) {
  if (dims.size() < 2 || dims.back() != 1) throw DimensionMismatch("dims must run input -> ... -> 1");
  std::mt19937_64 rng(seed);
  AuxParams p;
  p.variant = AuxVariant::NonLinear;
  for (size_t k = 0; k + 1 < dims.size(); ++k) {
    if (dims[k] < 1 || dims[k + 1] < 1) throw DimensionMismatch("layer sizes must be positive");
    AuxFcLayer l;
    l.weight.resize(dims[k], dims[k + 1]);
    l.bias.resize(dims[k + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[k]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = u(rng);
    p.fc.push_back(std::move(l));
  }
  return p;
}

AuxParams init_aux_conv(int input_len, const std::vector<int>& kernel_widths, std::uint64_t seed) {
  if (kernel_widths.empty()) throw DimensionMismatch("need at least one convolution layer");
  std::mt19937_64 rng(seed);
  AuxParams p;
  p.variant = AuxVariant::Convolutional;
  int cur = input_len;
  for (int k : kernel_widths) {
    if (k < 1 || k > cur) throw DimensionMismatch("kernel width " + std::to_string(k) + " too wide for input " +
                                                  std::to_string(cur));
    AuxConvLayer l;
    l.kernel.resize(k);
    const double bound = 1.0 / std::sqrt(static_cast<double>(k));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < l.kernel.size(); ++i) l.kernel[i] = u(rng);
    l.bias = u(rng);
    p.conv.push_back(std::move(l));
    cur = cur - k + 1;
  }
  return p;
}

Eigen::VectorXd aux_params_flatten(const AuxParams& p) {
  std::vector<double> out;
  if (p.variant == AuxVariant::NonLinear) {
    for (const AuxFcLayer& l : p.fc) {
      out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
      out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
  } else {
    for (const AuxConvLayer& l : p.conv) {
      out.insert(out.end(), l.kernel.data(), l.kernel.data() + l.kernel.size());
      out.push_back(l.bias);
    }
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

AuxParams aux_params_unflatten(const AuxParams& like, const Eigen::VectorXd& flat) {
  AuxParams p = like;
  Eigen::Index k = 0;
  if (p.variant == AuxVariant::NonLinear) {
    for (AuxFcLayer& l : p.fc) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = flat[k++];
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = flat[k++];
    }
  } else {
    for (AuxConvLayer& l : p.conv) {
      for (Eigen::Index i = 0; i < l.kernel.size(); ++i) l.kernel[i] = flat[k++];
      l.bias = flat[k++];
    }
  }
  if (k != flat.size()) throw DimensionMismatch("flat parameter vector does not match combiner layout");
  return p;
}

namespace {

double total_loss_of(const TaskLossFn& train_losses, const Eigen::VectorXd& w, const AuxParams& aux) {
  const Eigen::VectorXd losses = train_losses(w);
  if (losses.size() == 0) throw EmptyInput("task loss vector is empty");
  return losses[0] + aux_combine(losses, aux);
}

}  // namespace

AlternatingStepResult aux_alternating_step(const Eigen::VectorXd& main_params, const AuxParams& aux,
                                           const TaskLossFn& train_losses, const TaskLossFn& aux_losses,
                                           double lr_main, double lr_aux, double fd_step) {
  AlternatingStepResult res;
  res.aux_params = aux;
  res.total_before = total_loss_of(train_losses, main_params, aux);
  res.aux_set_before = aux_losses(main_params)[0];

  const auto main_step = [&](const AuxParams& phi) {
    if (lr_main == 0.0) return main_params;
    const Eigen::VectorXd g = finite_diff_grad(
        [&](const Eigen::VectorXd& w) { return total_loss_of(train_losses, w, phi); }, main_params, fd_step);
    return Eigen::VectorXd(main_params - lr_main * g);
  };

  res.main_params = main_step(aux);

  if (lr_aux != 0.0) {
    const Eigen::VectorXd phi0 = aux_params_flatten(aux);
    // Hypergradient of the auxiliary-batch main loss through the one-step
    // updated main parameters.
    const Eigen::VectorXd g_phi = finite_diff_grad(
        [&](const Eigen::VectorXd& phi) {
          const AuxParams cand = aux_params_unflatten(aux, phi);
          return aux_losses(main_step(cand))[0];
        },
        phi0, fd_step);
    res.aux_params = aux_params_unflatten(aux, phi0 - lr_aux * g_phi);
  }

  res.total_after = total_loss_of(train_losses, res.main_params, res.aux_params);
  res.aux_set_after = aux_losses(res.main_params)[0];
  if (!std::isfinite(res.total_after) || !std::isfinite(res.aux_set_after))
    throw DivergenceDetected("loss became non-finite after the alternating step");
  return res;
}

}  // namespace vifuse
