#include "vifuse/pose_graph.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <set>

namespace vifuse {

namespace {

void check_index(const PoseGraph& g, int idx) {
  if (idx < 0 || idx >= static_cast<int>(g.poses.size()))
    throw IndexOutOfRange("constraint references pose " + std::to_string(idx) + " but graph has " +
                          std::to_string(g.poses.size()) + " poses");
}

Eigen::Matrix3d skew(const Vec3& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace

Constraint Constraint::absolute_prior(int frame, const Pose& target, const Vec6& stiffness) {
  Constraint c;
  c.kind = ConstraintKind::AbsolutePrior;
  c.i = frame;
  c.prior_target = target;
  c.stiffness = stiffness;
  return c;
}

Constraint Constraint::relative(int i, int j, const RelativePose& target, const Vec6& stiffness) {
  if (i == j) throw IndexOutOfRange("relative constraint needs two distinct poses, got i == j == " + std::to_string(i));
  Constraint c;
  c.kind = ConstraintKind::Relative;
  c.i = i;
  c.j = j;
  c.rel_target = target;
  c.stiffness = stiffness;
  return c;
}

Vec6 constraint_residual(const PoseGraph& g, const Constraint& c) {
  check_index(g, c.i);
  Vec6 r;
  if (c.kind == ConstraintKind::AbsolutePrior) {
    const Pose& p = g.poses[c.i];
    r.head<3>() = p.t - c.prior_target.t;
    r.tail<3>() = log_so3(c.prior_target.q.conjugate() * p.q);
  } else {
    check_index(g, c.j);
    const RelativePose rel = relative_between(g.poses[c.i], g.poses[c.j]);
    r.head<3>() = rel.dt - c.rel_target.dt;
    r.tail<3>() = log_so3(c.rel_target.dq.conjugate() * rel.dq);
  }
  return r;
}

double constraint_energy(const PoseGraph& g, const Constraint& c) {
  const Vec6 r = constraint_residual(g, c);
  return r.dot(c.stiffness.asDiagonal() * r);
}

double total_energy(const PoseGraph& g) {
  double e = 0.0;
  for (const Constraint& c : g.constraints) e += constraint_energy(g, c);
  return e;
}

LinearSystem linearize(const PoseGraph& g, const SolverConfig& cfg) {
  if (g.poses.empty()) throw EmptyGraph("cannot linearize a graph with no poses");
  const int n = static_cast<int>(g.poses.size());
  const int rows = 6 * static_cast<int>(g.constraints.size());
  LinearSystem sys;
  sys.jacobian = Eigen::MatrixXd::Zero(rows, 6 * n);
  sys.residual = Eigen::VectorXd::Zero(rows);

  const double h = cfg.fd_step;
  PoseGraph work = g;
  for (int ci = 0; ci < static_cast<int>(g.constraints.size()); ++ci) {
    const Constraint& c = g.constraints[ci];
    const Vec6 sqrt_s = c.stiffness.cwiseSqrt();
    const Vec6 r0 = constraint_residual(g, c);
    // Measurement-minus-prediction convention: positive residual drives the
    // step toward lower energy through dz = (J^T J)^-1 J^T r.
    sys.residual.segment<6>(6 * ci) = -sqrt_s.cwiseProduct(r0);

    const int touched[2] = {c.i, c.kind == ConstraintKind::Relative ? c.j : -1};
    for (int which = 0; which < 2; ++which) {
      const int p = touched[which];
      if (p < 0) continue;
      const Pose saved = work.poses[p];
      for (int m = 0; m < 6; ++m) {
        Vec3 dt = Vec3::Zero(), dth = Vec3::Zero();
        (m < 3 ? dt[m] : dth[m - 3]) = h;
        work.poses[p] = boxplus(saved, TangentDelta(dt, dth));
        const Vec6 rp = constraint_residual(work, c);
        work.poses[p] = boxplus(saved, TangentDelta(-dt, -dth));
        const Vec6 rm = constraint_residual(work, c);
        work.poses[p] = saved;
        sys.jacobian.block<6, 1>(6 * ci, 6 * p + m) = sqrt_s.cwiseProduct((rp - rm) / (2.0 * h));
      }
    }
  }
  return sys;
}

TranslationJacobian translation_jacobian(const PoseGraph& g, const Constraint& c) {
  TranslationJacobian tj;
  if (c.kind == ConstraintKind::AbsolutePrior) {
    tj.d_i.leftCols<3>() = Eigen::Matrix3d::Identity();
  } else {
    check_index(g, c.i);
    check_index(g, c.j);
    const Pose& a = g.poses[c.i];
    const Pose& b = g.poses[c.j];
    const Eigen::Matrix3d Rt = a.q.toRotationMatrix().transpose();
    tj.d_i.leftCols<3>() = -Rt;
    tj.d_i.rightCols<3>() = skew(Rt * (b.t - a.t));
    tj.d_j.leftCols<3>() = Rt;
  }
  return tj;
}

Eigen::VectorXd solve_normal_equations(const LinearSystem& s, double damping) {
  if (s.jacobian.rows() != s.residual.size())
    throw DimensionMismatch("jacobian has " + std::to_string(s.jacobian.rows()) + " rows but residual has " +
                            std::to_string(s.residual.size()));
  const Eigen::Index n = s.jacobian.cols();
  Eigen::MatrixXd a = s.jacobian.transpose() * s.jacobian;
  a.diagonal().array() += damping;
  const Eigen::VectorXd b = s.jacobian.transpose() * s.residual;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success) throw SingularSystem("normal-equation factorization failed");
  const Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.maxCoeff();
  if (!(dmax > 0.0) || d.minCoeff() < dmax * 1e-14)
    throw SingularSystem("normal equations are rank deficient: graph is under-constrained");
  Eigen::VectorXd dz = ldlt.solve(b);
  if (!dz.allFinite()) throw SingularSystem("normal-equation solve produced non-finite step");
  (void)n;
  return dz;
}

namespace {

PoseGraph apply_step(const PoseGraph& g, const Eigen::VectorXd& dz) {
  PoseGraph out = g;
  for (size_t k = 0; k < g.poses.size(); ++k)
    out.poses[k] = boxplus(g.poses[k], TangentDelta(dz.segment<3>(6 * k), dz.segment<3>(6 * k + 3)));
  return out;
}

void check_constrained(const PoseGraph& g) {
  std::vector<bool> touched(g.poses.size(), false);
  bool has_prior = false;
  for (const Constraint& c : g.constraints) {
    check_index(g, c.i);
    touched[c.i] = true;
    if (c.kind == ConstraintKind::Relative) {
      check_index(g, c.j);
      touched[c.j] = true;
    } else {
      has_prior = true;
    }
  }
  std::vector<int> loose;
  for (size_t k = 0; k < touched.size(); ++k)
    if (!touched[k]) loose.push_back(static_cast<int>(k));
  if (!loose.empty()) {
    std::string msg = "poses without any constraint:";
    for (int k : loose) msg += " " + std::to_string(k);
    throw UnconstrainedPose(msg, loose);
  }
  if (!has_prior)
    throw UnconstrainedPose("graph has no absolute prior; the gauge is free and the system is rank deficient", {});
}

}  // namespace

OptimizeResult optimize(const PoseGraph& g, const SolverConfig& cfg) {
  if (g.poses.empty()) throw EmptyGraph("cannot optimize a graph with no poses");
  check_constrained(g);

  OptimizeResult res;
  res.graph = g;
  double energy = total_energy(res.graph);
  res.energy_trace.push_back(energy);

  double lambda = cfg.damping;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const LinearSystem sys = linearize(res.graph, cfg);
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      const Eigen::VectorXd dz = solve_normal_equations(sys, lambda);
      res.final_step_inf = dz.size() ? dz.cwiseAbs().maxCoeff() : 0.0;
      res.iterations = it + 1;
      if (res.final_step_inf <= cfg.step_tol) return res;  // converged

      const PoseGraph cand = apply_step(res.graph, dz);
      const double cand_energy = total_energy(cand);
      if (cand_energy <= energy * (1.0 + 1e-12) + 1e-300) {
        res.graph = cand;
        energy = cand_energy;
        res.energy_trace.push_back(energy);
        lambda = std::max(cfg.damping, lambda * 0.5);
        accepted = true;
        break;
      }
      lambda = (lambda <= 0.0) ? 1e-6 : lambda * 2.0;
      if (lambda > 1e14) return res;  // step cannot improve: treat as converged
    }
    if (!accepted) return res;
  }
  return res;
}

namespace {

// Composes cfg.skip consecutive relative steps starting at frame f.
RelativePose chain_steps(const std::vector<RelativePose>& rpr, int f, int skip) {
  RelativePose acc;
  for (int k = 0; k < skip; ++k) acc = compose_relative(acc, rpr[f + k]);
  return acc;
}

}  // namespace

FuseResult fuse_streams_detailed(const std::vector<Pose>& apr, const std::vector<RelativePose>& rpr,
                                 const std::vector<bool>& present, const FusionConfig& fcfg,
                                 const SolverConfig& scfg) {
  const int n = static_cast<int>(apr.size());
  if (fcfg.window < 2) throw DimensionMismatch("fusion window must be >= 2, got " + std::to_string(fcfg.window));
  if (fcfg.stride < 1) throw DimensionMismatch("fusion stride must be >= 1");
  if (fcfg.skip < 1) throw DimensionMismatch("fusion skip must be >= 1");
  if (static_cast<int>(rpr.size()) != n - 1)
    throw StreamLengthMismatch("need |rpr| == |apr| - 1, got " + std::to_string(rpr.size()) + " vs " +
                               std::to_string(apr.size()));
  if (n < fcfg.window)
    throw StreamLengthMismatch("stream of " + std::to_string(n) + " frames is shorter than the window " +
                               std::to_string(fcfg.window));
  if (!present.empty() && static_cast<int>(present.size()) != n)
    throw StreamLengthMismatch("presence mask length does not match the absolute stream");

  auto has_prior = [&](int f) { return present.empty() || present[f]; };

  // Initial values: the absolute measurement where present, otherwise the
  // previous frame continued by the relative step.
  std::vector<Pose> init(n);
  for (int f = 0; f < n; ++f)
    init[f] = (has_prior(f) || f == 0) ? apr[f] : apply_relative(init[f - 1], rpr[f - 1]);

  FuseResult out;
  out.poses = init;
  std::vector<bool> emitted(n, false);

  // Window start offsets; the tail is always covered by a final window.
  std::vector<int> starts;
  for (int ws = 0; ws + fcfg.window <= n; ws += fcfg.stride) starts.push_back(ws);
  if (starts.empty() || starts.back() != n - fcfg.window) starts.push_back(n - fcfg.window);

  int frontier = -1;  // highest frame emitted so far
  for (int ws : starts) {
    const int we = ws + fcfg.window;  // exclusive
    PoseGraph g;
    g.poses.assign(init.begin() + ws, init.begin() + we);

    bool any_prior = false;
    for (int f = ws; f < we; ++f) {
      if (!has_prior(f)) continue;
      g.constraints.push_back(Constraint::absolute_prior(f - ws, apr[f], fcfg.apr_stiffness));
      any_prior = true;
    }
    if (!any_prior) {
      // Every absolute measurement in this window is missing: anchor the gauge
      // at the current estimate of the oldest frame and let the relative chain
      // carry the rest.
      const Pose anchor = emitted[ws] ? out.poses[ws] : init[ws];
      g.constraints.push_back(Constraint::absolute_prior(0, anchor, fcfg.apr_stiffness));
    }
    for (int f = ws; f + fcfg.skip < we; ++f)
      g.constraints.push_back(
          Constraint::relative(f - ws, f - ws + fcfg.skip, chain_steps(rpr, f, fcfg.skip), fcfg.rpr_stiffness));

    const OptimizeResult opt = optimize(g, scfg);
    out.window_energy_before.push_back(opt.energy_trace.front());
    out.window_energy_after.push_back(opt.energy_trace.back());

    // First window emits everything it covers; later windows emit only the
    // newly covered frames, so earlier outputs never change.
    const int emit_from = std::max(ws, frontier + 1);
    for (int f = emit_from; f < we; ++f) {
      out.poses[f] = opt.graph.poses[f - ws];
      emitted[f] = true;
    }
    frontier = std::max(frontier, we - 1);
  }
  return out;
}

std::vector<Pose> fuse_streams(const std::vector<Pose>& apr, const std::vector<RelativePose>& rpr,
                               const FusionConfig& fcfg, const SolverConfig& scfg) {
  return fuse_streams_detailed(apr, rpr, {}, fcfg, scfg).poses;
}

}  // namespace vifuse
