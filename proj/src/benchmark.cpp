#include "vifuse/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vifuse/losses.hpp"

namespace vifuse {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t salt) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_translation_error(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  double sum = 0.0;
  for (size_t k = 0; k < est.size(); ++k) sum += (est[k].t - gt[k].t).norm();
  return sum / static_cast<double>(est.size());
}

}  // namespace

BenchScenario default_scenario() {
  BenchScenario sc;
  sc.frames = 200;
  sc.rate_hz = 20.0;
  sc.amplitude = 2.0;
  sc.apr_noise.sigma_t = 0.5;
  sc.apr_noise.sigma_theta = 0.05;
  sc.rpr_noise.sigma_t = 0.005;
  sc.rpr_noise.sigma_theta = 0.002;
  sc.rpr_noise.bias_t = Vec3(0.001, 0.0, 0.0);
  sc.fusion.window = 5;
  return sc;
}

namespace {

struct SeedData {
  Trajectory gt;
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  std::vector<RelativePose> rel_gt;
};

SeedData make_seed_data(const BenchScenario& sc, std::uint64_t seed) {
  SeedData d;
  d.gt = synth_trajectory(mix_seed(seed, 0), sc.frames, sc.rate_hz, sc.amplitude);
  NoiseModel apr_nm = sc.apr_noise;
  apr_nm.seed = mix_seed(seed, 1);
  NoiseModel rpr_nm = sc.rpr_noise;
  rpr_nm.seed = mix_seed(seed, 2);
  d.apr = simulate_apr(d.gt, apr_nm);
  d.rpr = simulate_rpr(d.gt, rpr_nm);
  NoiseModel clean;
  d.rel_gt = simulate_rpr(d.gt, clean);
  return d;
}

}  // namespace

BenchSummary run_benchmark(const BenchScenario& sc, int seeds, std::uint64_t base_seed) {
  if (seeds < 1) throw EmptyInput("need at least one seed");
  BenchSummary out;
  std::vector<double> ratios;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
    const SeedData d = make_seed_data(sc, seed);

    SeedOutcome row;
    row.seed = seed;
    row.apr = evaluate_trajectory(d.apr, d.gt.poses, d.rpr, d.rel_gt);
    const std::vector<Pose> fused = fuse_streams(d.apr, d.rpr, sc.fusion, sc.solver);
    row.fused = evaluate_trajectory(fused, d.gt.poses, d.rpr, d.rel_gt);
    const std::vector<Pose> chain = integrate_relative(d.gt.poses.front(), d.rpr);
    row.integrated = evaluate_trajectory(chain, d.gt.poses, d.rpr, d.rel_gt);
    row.ratio_med_p = *row.fused.e_med_p / *row.apr.e_med_p;
    ratios.push_back(row.ratio_med_p);
    if (row.ratio_med_p < 1.0) ++out.seeds_fused_better;
    out.rows.push_back(std::move(row));
  }
  out.median_ratio = median_of(ratios);
  return out;
}

// --- corruption sweep ---------------------------------------------------------

std::vector<Pose> fill_absent(const PoseStream& s) {
  std::vector<Pose> out = s.poses;
  int first_present = -1;
  for (size_t k = 0; k < out.size(); ++k)
    if (s.present[k]) {
      first_present = static_cast<int>(k);
      break;
    }
  if (first_present < 0) return out;  // nothing to fill from
  for (int k = first_present - 1; k >= 0; --k) out[k] = out[first_present];
  for (size_t k = static_cast<size_t>(first_present) + 1; k < out.size(); ++k)
    if (!s.present[k]) out[k] = out[k - 1];
  return out;
}

const char* corruption_kind_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::NoiseBurst:
      return "noise_burst";
    case CorruptionKind::Freeze:
      return "freeze";
    case CorruptionKind::Dropout:
      return "dropout";
  }
  return "?";
}

namespace {

// Toy gating task used for the activation statistic: predict the correction of
// a relative-stream dead-reckoning chain from the absolute stream, with a
// consistency feature that flags a misbehaving absolute stream.
struct ToyFeatures {
  std::vector<RegressionSample> samples;
  std::vector<FeatureVector> score_inputs_v;  // standardized a_v per frame
  std::vector<FeatureVector> score_inputs_i;
};

constexpr int kChain = 50;       // dead-reckoning horizon [frames]
constexpr double kClampV = 2.0;  // winsorization of the signed deviation [m]
constexpr double kClampD = 6.0;  // cap on the deviation magnitude feature [m]

// Dead-reckoned world positions/orientations anchored at gt[t - kChain].
struct ToyContext {
  const Trajectory* gt = nullptr;
  const std::vector<RelativePose>* rpr = nullptr;
  std::vector<Pose> dr;  // dr[t] = chain from gt[t - kChain] through rpr
};

ToyContext make_toy_context(const Trajectory& gt, const std::vector<RelativePose>& rpr) {
  ToyContext ctx;
  ctx.gt = &gt;
  ctx.rpr = &rpr;
  const int n = static_cast<int>(gt.size());
  ctx.dr.resize(n);
  for (int t = kChain; t < n; ++t) {
    Pose p = gt.poses[t - kChain];
    for (int u = t - kChain; u < t; ++u) p = apply_relative(p, rpr[u]);
    ctx.dr[t] = p;
  }
  return ctx;
}

void toy_features(const ToyContext& ctx, const std::vector<Pose>& fp, std::vector<FeatureVector>& av,
                  std::vector<FeatureVector>& ai, std::vector<FeatureVector>& target) {
  const int n = static_cast<int>(ctx.gt->size());
  for (int t = kChain; t < n; ++t) {
    const Vec3 dev = fp[t].t - ctx.dr[t].t;
    FeatureVector v(6);
    for (int a = 0; a < 3; ++a) {
      v[a] = std::clamp(dev[a], -kClampV, kClampV);
      v[3 + a] = std::min(std::abs(dev[a]), kClampD);
    }
    FeatureVector i3(3);
    const Vec3 step = ctx.dr[t].q * (*ctx.rpr)[t - 1].dt;
    for (int a = 0; a < 3; ++a) i3[a] = step[a];
    FeatureVector tgt(3);
    const Vec3 true_dev = ctx.gt->poses[t].t - ctx.dr[t].t;
    for (int a = 0; a < 3; ++a) tgt[a] = true_dev[a];
    av.push_back(std::move(v));
    ai.push_back(std::move(i3));
    target.push_back(std::move(tgt));
  }
}

struct Standardizer {
  FeatureVector mean, inv_std;

  static Standardizer fit(const std::vector<FeatureVector>& xs) {
    Standardizer s;
    const Eigen::Index d = xs.front().size();
    s.mean = FeatureVector::Zero(d);
    for (const auto& x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    FeatureVector var = FeatureVector::Zero(d);
    for (const auto& x : xs) var += (x - s.mean).cwiseAbs2();
    var /= static_cast<double>(xs.size());
    s.inv_std = var.unaryExpr([](double v) { return 1.0 / std::sqrt(std::max(v, 1e-12)); });
    return s;
  }

  FeatureVector apply(const FeatureVector& x) const { return (x - mean).cwiseProduct(inv_std); }
};

struct ToyModel {
  SoftFusionRegressor reg;
  Standardizer std_v, std_i;
};

int toy_mask_count(const ToyModel& model, const ToyContext& ctx, const std::vector<Pose>& fp) {
  std::vector<FeatureVector> av, ai, tgt;
  toy_features(ctx, fp, av, ai, tgt);
  int count = 0;
  for (size_t k = 0; k < av.size(); ++k) {
    const SoftFusionResult r = soft_fusion(model.std_v.apply(av[k]), model.std_i.apply(ai[k]), model.reg.fusion);
    count += mask_activation_count(r.score_v);
  }
  return count;
}

}  // namespace

RobustnessSummary run_robustness(const BenchScenario& sc, int seeds, std::uint64_t base_seed,
                                 const std::vector<double>& levels) {
  if (seeds < 1) throw EmptyInput("need at least one seed");
  if (levels.empty() || levels.front() != 0.0)
    throw DimensionMismatch("corruption levels must start at 0");

  const CorruptionKind kinds[3] = {CorruptionKind::NoiseBurst, CorruptionKind::Freeze, CorruptionKind::Dropout};
  RobustnessSummary out;
  out.levels = levels;
  out.seeds = seeds;
  out.by_kind.resize(3);
  for (int k = 0; k < 3; ++k) out.by_kind[k].kind = kinds[k];

  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
    const SeedData d = make_seed_data(sc, seed);
    NoiseModel apr_nm = sc.apr_noise;
    const PoseStream clean_stream = make_pose_stream(d.apr, apr_nm);
    const std::size_t span_b = static_cast<std::size_t>(sc.frames) * 2 / 5;
    const std::size_t span_e = static_cast<std::size_t>(sc.frames) * 3 / 5;
    const ToyContext ctx = make_toy_context(d.gt, d.rpr);

    // Train one gate per seed on a mix of every kind and level.
    std::vector<FeatureVector> av, ai, tgt;
    for (int kk = 0; kk < 3; ++kk)
      for (size_t lv = 0; lv < levels.size(); ++lv) {
        CorruptionSpec spec;
        spec.kind = kinds[kk];
        spec.level = levels[lv];
        spec.span_begin = span_b;
        spec.span_end = span_e;
        spec.seed = mix_seed(seed, 100 + 10 * kk + lv);
        toy_features(ctx, fill_absent(corrupt_stream(clean_stream, spec)), av, ai, tgt);
      }
    ToyModel model;
    model.std_v = Standardizer::fit(av);
    model.std_i = Standardizer::fit(ai);
    std::vector<RegressionSample> train(av.size());
    for (size_t k = 0; k < av.size(); ++k) {
      train[k].a_v = model.std_v.apply(av[k]);
      train[k].a_i = model.std_i.apply(ai[k]);
      train[k].target = tgt[k];
    }
    model.reg = init_soft_fusion_regressor(6, 3, 3, mix_seed(seed, 7));
    // Gate prior: open by default (positive bias; the readout can absorb any
    // constant gain, so training would otherwise leave the absolute mask level
    // arbitrary), distrusting on anomaly (negative weight from the deviation
    // magnitudes, like a forget-gate bias).  Training fine-tunes both.
    model.reg.fusion.bias_v.array() += 2.0;
    model.reg.fusion.bias_i.array() += 2.0;
    for (int a = 0; a < 3; ++a) model.reg.fusion.weights_v.row(3 + a).array() -= 0.8;
    TrainConfig tc;
    tc.lr = 0.02;
    tc.steps = 400;
    grad_step_train(model.reg, train, tc);

    for (int kk = 0; kk < 3; ++kk) {
      std::vector<double> apr_err(levels.size()), fused_err(levels.size());
      std::vector<int> counts(levels.size());
      for (size_t lv = 0; lv < levels.size(); ++lv) {
        CorruptionSpec spec;
        spec.kind = kinds[kk];
        spec.level = levels[lv];
        spec.span_begin = span_b;
        spec.span_end = span_e;
        // One draw per kind, shared by all levels (fresh w.r.t. training):
        // raising the level then scales the same noise, extends the same hold,
        // and grows the same dropout set, so levels are compared paired.
        spec.seed = mix_seed(seed, 500 + 10 * kk);
        const PoseStream cs = corrupt_stream(clean_stream, spec);
        const std::vector<Pose> filled = fill_absent(cs);
        apr_err[lv] = mean_translation_error(filled, d.gt.poses);
        const FuseResult fr = fuse_streams_detailed(cs.poses, d.rpr, cs.present, sc.fusion, sc.solver);
        fused_err[lv] = mean_translation_error(fr.poses, d.gt.poses);
        counts[lv] = toy_mask_count(model, ctx, filled);

        RobustnessCell cell;
        cell.kind = kinds[kk];
        cell.level = levels[lv];
        cell.seed = seed;
        cell.apr_mean_err = apr_err[lv];
        cell.fused_mean_err = fused_err[lv];
        cell.mask_count = counts[lv];
        out.cells.push_back(cell);
      }
      bool less = true;
      for (size_t lv = 0; lv < levels.size(); ++lv)
        if (!(fused_err[lv] < apr_err[lv])) less = false;
      if (less) ++out.by_kind[kk].seeds_degrade_less;
      bool mono = true;
      for (size_t lv = 1; lv < levels.size(); ++lv)
        if (counts[lv] > counts[lv - 1]) mono = false;
      if (mono) ++out.by_kind[kk].seeds_mask_monotone;
    }
  }
  return out;
}

// --- gradient checks -----------------------------------------------------------

namespace {

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-12});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

Eigen::VectorXd random_vec(Eigen::Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index k = 0; k < n; ++k) v[k] = u(rng);
  return v;
}

}  // namespace

double gradcheck_soft_fusion(std::uint64_t seed, double h, bool flip_sign) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(2, 5);
  const int dv = dim(rng), di = dim(rng);
  const SoftFusionParams p0 = init_soft_fusion(dv, di, seed ^ 0xabcdULL);
  const Eigen::VectorXd av = random_vec(dv, rng), ai = random_vec(di, rng);
  const Eigen::VectorXd w = random_vec(dv + di, rng);  // scalarization weights

  const Eigen::Index np = p0.weights_v.size() + p0.bias_v.size() + p0.weights_i.size() + p0.bias_i.size();
  Eigen::VectorXd x0(dv + di + np);
  x0 << av, ai, Eigen::Map<const Eigen::VectorXd>(p0.weights_v.data(), p0.weights_v.size()), p0.bias_v,
      Eigen::Map<const Eigen::VectorXd>(p0.weights_i.data(), p0.weights_i.size()), p0.bias_i;

  const auto unpack = [&](const Eigen::VectorXd& x) {
    Eigen::Index o = 0;
    const Eigen::VectorXd a = x.segment(o, dv);
    o += dv;
    const Eigen::VectorXd b = x.segment(o, di);
    o += di;
    SoftFusionParams p = p0;
    p.weights_v = Eigen::Map<const Eigen::MatrixXd>(x.data() + o, dv + di, dv);
    o += p.weights_v.size();
    p.bias_v = x.segment(o, dv);
    o += dv;
    p.weights_i = Eigen::Map<const Eigen::MatrixXd>(x.data() + o, dv + di, di);
    o += p.weights_i.size();
    p.bias_i = x.segment(o, di);
    return std::make_tuple(a, b, p);
  };

  const auto f = [&](const Eigen::VectorXd& x) {
    const auto [a, b, p] = unpack(x);
    return w.dot(soft_fusion(a, b, p).fused);
  };

  const SoftFusionGrad g = soft_fusion_grad(av, ai, p0, w);
  Eigen::VectorXd ga(x0.size());
  ga << g.d_a_v, g.d_a_i, Eigen::Map<const Eigen::VectorXd>(g.d_params.weights_v.data(), g.d_params.weights_v.size()),
      g.d_params.bias_v, Eigen::Map<const Eigen::VectorXd>(g.d_params.weights_i.data(), g.d_params.weights_i.size()),
      g.d_params.bias_i;
  if (flip_sign) ga = -ga;
  return rel_err(ga, finite_diff_grad(f, x0, h));
}

double gradcheck_mmtm(std::uint64_t seed, double h, bool flip_sign) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(2, 4);
  const int ca = dim(rng), cb = dim(rng), sa = dim(rng), sb = dim(rng);
  const MmtmParams p0 = init_mmtm(ca, cb, 0, seed ^ 0x1234ULL);
  const Tensor a = Tensor::from({sa, ca}, random_vec(sa * ca, rng));
  const Tensor b = Tensor::from({sb, cb}, random_vec(sb * cb, rng));
  const Eigen::VectorXd wa = random_vec(a.size(), rng), wb = random_vec(b.size(), rng);

  const auto pack_params = [](const MmtmParams& p) {
    Eigen::VectorXd v(p.joint.size() + p.joint_bias.size() + p.excite_a.size() + p.excite_a_bias.size() +
                      p.excite_b.size() + p.excite_b_bias.size());
    v << Eigen::Map<const Eigen::VectorXd>(p.joint.data(), p.joint.size()), p.joint_bias,
        Eigen::Map<const Eigen::VectorXd>(p.excite_a.data(), p.excite_a.size()), p.excite_a_bias,
        Eigen::Map<const Eigen::VectorXd>(p.excite_b.data(), p.excite_b.size()), p.excite_b_bias;
    return v;
  };
  const auto unpack_params = [&](const Eigen::VectorXd& v) {
    MmtmParams p = p0;
    Eigen::Index o = 0;
    p.joint = Eigen::Map<const Eigen::MatrixXd>(v.data() + o, p0.joint.rows(), p0.joint.cols());
    o += p.joint.size();
    p.joint_bias = v.segment(o, p0.joint_bias.size());
    o += p.joint_bias.size();
    p.excite_a = Eigen::Map<const Eigen::MatrixXd>(v.data() + o, p0.excite_a.rows(), p0.excite_a.cols());
    o += p.excite_a.size();
    p.excite_a_bias = v.segment(o, p0.excite_a_bias.size());
    o += p.excite_a_bias.size();
    p.excite_b = Eigen::Map<const Eigen::MatrixXd>(v.data() + o, p0.excite_b.rows(), p0.excite_b.cols());
    o += p.excite_b.size();
    p.excite_b_bias = v.segment(o, p0.excite_b_bias.size());
    return p;
  };

  Eigen::VectorXd x0(a.size() + b.size() + pack_params(p0).size());
  x0 << a.data, b.data, pack_params(p0);
  const auto f = [&](const Eigen::VectorXd& x) {
    const Tensor ta = Tensor::from(a.shape, x.head(a.size()));
    const Tensor tb = Tensor::from(b.shape, x.segment(a.size(), b.size()));
    const MmtmParams p = unpack_params(x.tail(x.size() - a.size() - b.size()));
    const MmtmResult r = mmtm(ta, tb, p);
    return wa.dot(r.a_out.data) + wb.dot(r.b_out.data);
  };

  const MmtmGrad g = mmtm_grad(a, b, p0, Tensor::from(a.shape, wa), Tensor::from(b.shape, wb));
  Eigen::VectorXd ga(x0.size());
  ga << g.d_a.data, g.d_b.data, pack_params(g.d_params);
  if (flip_sign) ga = -ga;
  return rel_err(ga, finite_diff_grad(f, x0, h));
}

double gradcheck_aleatoric(std::uint64_t seed, double h, bool flip_sign) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ur(0.1, 4.0), us(-1.5, 1.5), uv(0.2, 3.0);
  double worst = 0.0;
  {
    const double r2 = ur(rng), s = us(rng);
    const AleatoricGrad g = aleatoric_loss_grad(r2, s, AleatoricForm::LogVariance);
    Eigen::Vector2d ga(g.d_residual_sq, g.d_s);
    if (flip_sign) ga = -ga;
    const Eigen::VectorXd gf = finite_diff_grad(
        [](const Eigen::VectorXd& x) { return aleatoric_loss(x[0], x[1], AleatoricForm::LogVariance); },
        Eigen::Vector2d(r2, s), h);
    worst = std::max(worst, rel_err(ga, gf));
  }
  {
    const double r2 = ur(rng), var = uv(rng);
    const AleatoricGrad g = aleatoric_loss_grad(r2, var, AleatoricForm::Variance);
    Eigen::Vector2d ga(g.d_residual_sq, g.d_s);
    if (flip_sign) ga = -ga;
    const Eigen::VectorXd gf = finite_diff_grad(
        [](const Eigen::VectorXd& x) { return aleatoric_loss(x[0], x[1], AleatoricForm::Variance); },
        Eigen::Vector2d(r2, var), h);
    worst = std::max(worst, rel_err(ga, gf));
  }
  return worst;
}

namespace {

double gradcheck_aux(std::uint64_t seed, double h, bool flip_sign, AuxVariant variant) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(3, 6);
  const int nin = dim(rng);
  AuxParams p0;
  if (variant == AuxVariant::NonLinear) {
    std::uniform_int_distribution<int> hidden(2, 4);
    p0 = init_aux_nonlinear({nin, hidden(rng), 1}, seed ^ 0x77ULL);
  } else {
    const int k1 = std::min(3, nin);
    p0 = init_aux_conv(nin, {k1, std::min(2, nin - k1 + 1)}, seed ^ 0x77ULL);
  }
  const Eigen::VectorXd losses = random_vec(nin, rng, 0.1, 2.0);
  const Eigen::VectorXd phi0 = aux_params_flatten(p0);

  Eigen::VectorXd x0(nin + phi0.size());
  x0 << losses, phi0;
  const auto f = [&](const Eigen::VectorXd& x) {
    return aux_combine(x.head(nin), aux_params_unflatten(p0, x.tail(phi0.size())));
  };

  const AuxCombineGrad g = aux_combine_grad(losses, p0);
  Eigen::VectorXd ga(x0.size());
  ga << g.d_losses, aux_params_flatten(g.d_params);
  if (flip_sign) ga = -ga;
  return rel_err(ga, finite_diff_grad(f, x0, h));
}

}  // namespace

double gradcheck_aux_nonlinear(std::uint64_t seed, double h, bool flip_sign) {
  return gradcheck_aux(seed, h, flip_sign, AuxVariant::NonLinear);
}

double gradcheck_aux_conv(std::uint64_t seed, double h, bool flip_sign) {
  return gradcheck_aux(seed, h, flip_sign, AuxVariant::Convolutional);
}

}  // namespace vifuse
