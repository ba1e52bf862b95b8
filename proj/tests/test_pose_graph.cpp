#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vifuse/pose_graph.hpp"

using namespace vifuse;

namespace {

Vec6 stiff(double wt, double wr) {
  Vec6 s;
  s << wt, wt, wt, wr, wr, wr;
  return s;
}

PoseGraph random_noisy_chain(std::uint64_t seed, int n, double noise) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nd(0.0, noise);
  std::vector<Pose> gt;
  Pose cur;
  for (int k = 0; k < n; ++k) {
    gt.push_back(cur);
    cur = apply_relative(cur, RelativePose(oracles::random_vec3(g), exp_so3(0.3 * oracles::random_vec3(g))));
  }
  PoseGraph pg;
  pg.poses = gt;
  for (int k = 0; k < n; ++k) {
    const Pose noisy(gt[k].t + Vec3(nd(g), nd(g), nd(g)), gt[k].q * exp_so3(0.2 * noise * oracles::random_vec3(g)));
    pg.constraints.push_back(Constraint::absolute_prior(k, noisy, stiff(1.0, 1.0)));
  }
  for (int k = 0; k + 1 < n; ++k) {
    const RelativePose rel = relative_between(gt[k], gt[k + 1]);
    const RelativePose noisy(rel.dt + 0.1 * Vec3(nd(g), nd(g), nd(g)), rel.dq * exp_so3(0.02 * noise * oracles::random_vec3(g)));
    pg.constraints.push_back(Constraint::relative(k, k + 1, noisy, stiff(50.0, 50.0)));
  }
  return pg;
}

}  // namespace

TEST_CASE("relative constraint factory rejects self loops") {
  CHECK_THROWS_AS(Constraint::relative(3, 3, RelativePose(), Vec6::Ones()), IndexOutOfRange);
}

TEST_CASE("residual is zero exactly at the constraint target") {
  std::mt19937_64 g(21);
  PoseGraph pg;
  pg.poses = {oracles::random_pose(g), oracles::random_pose(g)};
  const Constraint prior = Constraint::absolute_prior(0, pg.poses[0], Vec6::Ones());
  CHECK(constraint_residual(pg, prior).norm() < 1e-14);
  const Constraint rel = Constraint::relative(0, 1, relative_between(pg.poses[0], pg.poses[1]), Vec6::Ones());
  CHECK(constraint_residual(pg, rel).norm() < 1e-14);
}

TEST_CASE("residual components for an absolute prior") {
  PoseGraph pg;
  pg.poses = {Pose(Vec3(1, 2, 3), exp_so3(Vec3(0.1, 0, 0)))};
  const Pose target(Vec3(0.5, 2, 3), exp_so3(Vec3(-0.1, 0, 0)));
  const Vec6 r = constraint_residual(pg, Constraint::absolute_prior(0, target, Vec6::Ones()));
  CHECK((r.head<3>() - Vec3(0.5, 0, 0)).norm() < 1e-14);
  CHECK((r.tail<3>() - Vec3(0.2, 0, 0)).norm() < 1e-14);
}

TEST_CASE("boxplus correction derived from the residual zeroes it") {
  std::mt19937_64 g(22);
  for (int k = 0; k < 50; ++k) {
    PoseGraph pg;
    pg.poses = {oracles::random_pose(g), oracles::random_pose(g)};

    const Constraint prior = Constraint::absolute_prior(0, oracles::random_pose(g), Vec6::Ones());
    const Vec6 rp = constraint_residual(pg, prior);
    pg.poses[0] = boxplus(pg.poses[0], TangentDelta(-rp.head<3>(), -rp.tail<3>()));
    CHECK(constraint_residual(pg, prior).norm() < 1e-12);

    const Constraint rel =
        Constraint::relative(0, 1, RelativePose(oracles::random_vec3(g), oracles::random_quat(g)), Vec6::Ones());
    const Vec6 rr = constraint_residual(pg, rel);
    const Eigen::Matrix3d ri = pg.poses[0].q.toRotationMatrix();
    pg.poses[1] = boxplus(pg.poses[1], TangentDelta(-ri * rr.head<3>(), -rr.tail<3>()));
    CHECK(constraint_residual(pg, rel).norm() < 1e-12);
  }
}

TEST_CASE("constraint energy is the stiffness-weighted square") {
  PoseGraph pg;
  pg.poses = {Pose(Vec3(1, 1, 0), Quat::Identity())};
  const Constraint unit = Constraint::absolute_prior(0, Pose(), Vec6::Ones());
  CHECK(constraint_energy(pg, unit) == doctest::Approx(2.0));

  pg.poses[0].t = Vec3(1, 0, 0);
  CHECK(constraint_energy(pg, unit) == doctest::Approx(1.0));

  pg.poses[0].t = Vec3(1, 1, 0);
  const Constraint heavy = Constraint::absolute_prior(0, Pose(), Vec6::Constant(4.0));
  CHECK(constraint_energy(pg, heavy) == doctest::Approx(8.0));

  pg.poses[0] = Pose();
  CHECK(constraint_energy(pg, unit) == 0.0);
}

TEST_CASE("total energy sums constraint energies") {
  std::mt19937_64 g(23);
  PoseGraph pg = random_noisy_chain(77, 6, 0.1);
  double sum = 0.0;
  for (const Constraint& c : pg.constraints) {
    // scalar recomputation straight from the definition
    const Vec6 r = constraint_residual(pg, c);
    double e = 0.0;
    for (int m = 0; m < 6; ++m) e += c.stiffness[m] * r[m] * r[m];
    CHECK(constraint_energy(pg, c) == doctest::Approx(e).epsilon(1e-12));
    sum += e;
  }
  CHECK(total_energy(pg) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("linearize on a satisfied 1-pose prior gives zero residual and identity pattern") {
  PoseGraph pg;
  pg.poses = {Pose(Vec3(1, -2, 0.5), exp_so3(Vec3(0.2, 0.1, -0.3)))};
  pg.constraints = {Constraint::absolute_prior(0, pg.poses[0], Vec6::Ones())};
  const LinearSystem sys = linearize(pg, SolverConfig{});
  REQUIRE(sys.jacobian.rows() == 6);
  REQUIRE(sys.jacobian.cols() == 6);
  CHECK(sys.residual.norm() < 1e-12);
  CHECK((sys.jacobian - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 2e-6);
}

TEST_CASE("zero stiffness zeroes the constraint rows") {
  PoseGraph pg = random_noisy_chain(31, 3, 0.2);
  pg.constraints[1].stiffness = Vec6::Zero();
  const LinearSystem sys = linearize(pg, SolverConfig{});
  CHECK(sys.jacobian.middleRows<6>(6).cwiseAbs().maxCoeff() == 0.0);
  CHECK(sys.residual.segment<6>(6).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linearize residual carries the measurement-minus-prediction sign") {
  PoseGraph pg = random_noisy_chain(32, 4, 0.3);
  const LinearSystem sys = linearize(pg, SolverConfig{});
  for (size_t ci = 0; ci < pg.constraints.size(); ++ci) {
    const Constraint& c = pg.constraints[ci];
    const Vec6 expect = -c.stiffness.cwiseSqrt().cwiseProduct(constraint_residual(pg, c));
    CHECK((sys.residual.segment<6>(6 * ci) - expect).norm() < 1e-14);
  }
}

TEST_CASE("finite-difference Jacobian matches the closed-form translation rows") {
  std::mt19937_64 g(24);
  for (int k = 0; k < 20; ++k) {
    PoseGraph pg;
    pg.poses = {oracles::random_pose(g), oracles::random_pose(g)};
    pg.constraints = {
        Constraint::absolute_prior(0, oracles::random_pose(g), Vec6::Ones()),
        Constraint::relative(0, 1, RelativePose(oracles::random_vec3(g), oracles::random_quat(g)), Vec6::Ones())};
    const LinearSystem sys = linearize(pg, SolverConfig{});
    for (size_t ci = 0; ci < pg.constraints.size(); ++ci) {
      const Constraint& c = pg.constraints[ci];
      const TranslationJacobian tj = translation_jacobian(pg, c);
      const Eigen::Matrix<double, 3, 6> fd_i = sys.jacobian.block<3, 6>(6 * ci, 6 * c.i);
      CHECK((fd_i - tj.d_i).cwiseAbs().maxCoeff() < 1e-5);
      if (c.kind == ConstraintKind::Relative) {
        const Eigen::Matrix<double, 3, 6> fd_j = sys.jacobian.block<3, 6>(6 * ci, 6 * c.j);
        CHECK((fd_j - tj.d_j).cwiseAbs().maxCoeff() < 1e-5);
      }
    }
  }
}

TEST_CASE("halving the finite-difference step shrinks the error fourfold") {
  std::mt19937_64 g(25);
  PoseGraph pg;
  pg.poses = {oracles::random_pose(g), oracles::random_pose(g)};
  pg.constraints = {
      Constraint::relative(0, 1, RelativePose(oracles::random_vec3(g), oracles::random_quat(g)), Vec6::Ones())};
  const TranslationJacobian tj = translation_jacobian(pg, pg.constraints[0]);
  Eigen::Matrix<double, 3, 12> exact;
  exact << tj.d_i, tj.d_j;

  auto fd_error = [&](double h) {
    SolverConfig cfg;
    cfg.fd_step = h;
    const LinearSystem sys = linearize(pg, cfg);
    Eigen::Matrix<double, 3, 12> fd;
    fd << sys.jacobian.block<3, 6>(0, 0), sys.jacobian.block<3, 6>(0, 6);
    return (fd - exact).cwiseAbs().sum();
  };

  // central differences: truncation error is O(h^2), so halving h divides it by ~4
  const double e1 = fd_error(1e-3);
  const double e2 = fd_error(5e-4);
  REQUIRE(e1 > 1e-9);  // comfortably above round-off so the ratio is meaningful
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("linearize rejects an empty graph") {
  PoseGraph pg;
  CHECK_THROWS_AS(linearize(pg, SolverConfig{}), EmptyGraph);
}

TEST_CASE("normal equations: identity system returns the residual") {
  LinearSystem sys;
  sys.jacobian = Eigen::MatrixXd::Identity(6, 6);
  sys.residual = (Eigen::VectorXd(6) << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5).finished();
  const Eigen::VectorXd dz = solve_normal_equations(sys, 0.0);
  CHECK((dz - sys.residual).norm() < 1e-14);
}

TEST_CASE("normal equations: scalar weighted targets") {
  // two rows pulling x to 0 and 2 with equal weight -> midpoint
  LinearSystem sys;
  sys.jacobian = Eigen::MatrixXd::Ones(2, 1);
  sys.residual = (Eigen::VectorXd(2) << 0.0, 2.0).finished();
  CHECK(solve_normal_equations(sys, 0.0)[0] == doctest::Approx(1.0));

  // weights 1 and 3 on the same targets -> 1.5 (rows carry sqrt weights)
  const double s3 = std::sqrt(3.0);
  sys.jacobian = (Eigen::MatrixXd(2, 1) << 1.0, s3).finished();
  sys.residual = (Eigen::VectorXd(2) << 0.0, s3 * 2.0).finished();
  CHECK(solve_normal_equations(sys, 0.0)[0] == doctest::Approx(1.5));
}

TEST_CASE("normal equations: damping shrinks the step") {
  LinearSystem sys;
  sys.jacobian = Eigen::MatrixXd::Identity(3, 3);
  sys.residual = (Eigen::VectorXd(3) << 1.0, 2.0, -4.0).finished();
  const Eigen::VectorXd dz = solve_normal_equations(sys, 3.0);
  CHECK((dz - sys.residual / 4.0).norm() < 1e-14);
}

TEST_CASE("normal equations reject rank-deficient systems") {
  // relative-only graph: the gauge is free, J^T J has a null space
  std::mt19937_64 g(26);
  PoseGraph pg;
  pg.poses = {oracles::random_pose(g), oracles::random_pose(g)};
  pg.constraints = {
      Constraint::relative(0, 1, RelativePose(oracles::random_vec3(g), oracles::random_quat(g)), Vec6::Ones())};
  const LinearSystem sys = linearize(pg, SolverConfig{});
  CHECK_THROWS_AS(solve_normal_equations(sys, 0.0), SingularSystem);

  LinearSystem bad;
  bad.jacobian = Eigen::MatrixXd::Ones(2, 1);
  bad.residual = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(solve_normal_equations(bad, 0.0), DimensionMismatch);
}

TEST_CASE("optimize is a fixed point on a satisfied graph") {
  std::mt19937_64 g(27);
  for (int k = 0; k < 10; ++k) {
    PoseGraph pg;
    Pose cur = oracles::random_pose(g);
    for (int f = 0; f < 6; ++f) {
      pg.poses.push_back(cur);
      cur = apply_relative(cur, RelativePose(oracles::random_vec3(g), oracles::random_quat(g)));
    }
    for (int f = 0; f < 6; ++f)
      pg.constraints.push_back(Constraint::absolute_prior(f, pg.poses[f], stiff(1.0, 1.0)));
    for (int f = 0; f + 1 < 6; ++f)
      pg.constraints.push_back(
          Constraint::relative(f, f + 1, relative_between(pg.poses[f], pg.poses[f + 1]), stiff(10.0, 10.0)));

    const OptimizeResult res = optimize(pg, SolverConfig{});
    CHECK(res.iterations == 1);
    CHECK(res.final_step_inf <= 1e-10);
    CHECK(res.energy_trace.size() == 1);
    CHECK(res.energy_trace.front() < 1e-12);
    for (int f = 0; f < 6; ++f) {
      CHECK((res.graph.poses[f].t - pg.poses[f].t).norm() < 1e-12);
      CHECK(oracles::quat_dist4(res.graph.poses[f].q, pg.poses[f].q) < 1e-12);
    }
  }
}

TEST_CASE("two poses on a line settle at the stiff-limit compromise") {
  PoseGraph pg;
  pg.poses = {Pose(), Pose(Vec3(1, 0, 0), Quat::Identity())};
  pg.constraints = {
      Constraint::absolute_prior(0, Pose(), stiff(1.0, 1.0)),
      Constraint::absolute_prior(1, Pose(Vec3(2, 0, 0), Quat::Identity()), stiff(1.0, 1.0)),
      Constraint::relative(0, 1, RelativePose(Vec3(1, 0, 0), Quat::Identity()), stiff(1e6, 1e6))};
  const OptimizeResult res = optimize(pg, SolverConfig{});
  CHECK(res.graph.poses[0].t.x() == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(res.graph.poses[1].t.x() == doctest::Approx(1.5).epsilon(1e-3));
  // exact quadratic optimum: x0 = 1e6/(2e6+1)
  const double x0 = 1e6 / (2e6 + 1);
  CHECK(res.graph.poses[0].t.x() == doctest::Approx(x0).epsilon(1e-9));
  CHECK(res.graph.poses[1].t.x() == doctest::Approx(2.0 - x0).epsilon(1e-9));
}

TEST_CASE("perturbed noiseless chain recovers the ground truth") {
  std::mt19937_64 g(28);
  for (int k = 0; k < 10; ++k) {
    std::vector<Pose> gt;
    Pose cur = oracles::random_pose(g);
    for (int f = 0; f < 8; ++f) {
      gt.push_back(cur);
      cur = apply_relative(cur, RelativePose(oracles::random_vec3(g), oracles::random_quat(g)));
    }
    PoseGraph pg;
    pg.poses = gt;
    for (int f = 0; f < 8; ++f) pg.constraints.push_back(Constraint::absolute_prior(f, gt[f], stiff(1.0, 1.0)));
    for (int f = 0; f + 1 < 8; ++f)
      pg.constraints.push_back(Constraint::relative(f, f + 1, relative_between(gt[f], gt[f + 1]), stiff(10.0, 10.0)));
    // perturb and recover
    for (int f = 0; f < 8; ++f)
      pg.poses[f] = boxplus(pg.poses[f], TangentDelta(0.05 * oracles::random_vec3(g), 0.05 * oracles::random_vec3(g)));
    const OptimizeResult res = optimize(pg, SolverConfig{});
    for (int f = 0; f < 8; ++f) {
      CHECK((res.graph.poses[f].t - gt[f].t).norm() < 1e-6);
      CHECK(oracles::quat_dist4(res.graph.poses[f].q, gt[f].q) < 1e-6);
    }
  }
}

TEST_CASE("accepted energies never increase") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u, 6u, 7u, 8u}) {
    const PoseGraph pg = random_noisy_chain(seed, 10, 0.5);
    const OptimizeResult res = optimize(pg, SolverConfig{});
    REQUIRE(res.energy_trace.size() >= 1);
    for (size_t k = 0; k + 1 < res.energy_trace.size(); ++k)
      CHECK(res.energy_trace[k + 1] <= res.energy_trace[k] * (1.0 + 1e-12) + 1e-300);
    CHECK(res.energy_trace.back() <= res.energy_trace.front() * (1.0 + 1e-12) + 1e-300);
  }
}

TEST_CASE("optimize with explicit damping still reaches the optimum") {
  PoseGraph pg = random_noisy_chain(99, 6, 0.3);
  const OptimizeResult plain = optimize(pg, SolverConfig{});
  SolverConfig damped;
  damped.damping = 5.0;
  damped.max_iters = 500;
  const OptimizeResult res = optimize(pg, damped);
  CHECK(res.energy_trace.back() == doctest::Approx(plain.energy_trace.back()).epsilon(1e-8));
  for (size_t k = 0; k + 1 < res.energy_trace.size(); ++k)
    CHECK(res.energy_trace[k + 1] <= res.energy_trace[k] * (1.0 + 1e-12) + 1e-300);
}

TEST_CASE("unconstrained poses are reported by index") {
  PoseGraph pg;
  pg.poses = {Pose(), Pose(Vec3(1, 0, 0), Quat::Identity()), Pose(Vec3(2, 0, 0), Quat::Identity())};
  pg.constraints = {Constraint::absolute_prior(0, Pose(), Vec6::Ones()),
                    Constraint::relative(0, 2, RelativePose(Vec3(2, 0, 0), Quat::Identity()), Vec6::Ones())};
  try {
    optimize(pg, SolverConfig{});
    FAIL("expected UnconstrainedPose");
  } catch (const UnconstrainedPose& e) {
    REQUIRE(e.indices().size() == 1);
    CHECK(e.indices()[0] == 1);
  }
}

TEST_CASE("a graph without absolute priors is rejected") {
  PoseGraph pg;
  pg.poses = {Pose(), Pose(Vec3(1, 0, 0), Quat::Identity())};
  pg.constraints = {Constraint::relative(0, 1, RelativePose(Vec3(1, 0, 0), Quat::Identity()), Vec6::Ones())};
  try {
    optimize(pg, SolverConfig{});
    FAIL("expected UnconstrainedPose");
  } catch (const UnconstrainedPose& e) {
    CHECK(e.indices().empty());
  }
}

TEST_CASE("optimize rejects empty graphs and bad indices") {
  PoseGraph pg;
  CHECK_THROWS_AS(optimize(pg, SolverConfig{}), EmptyGraph);
  pg.poses = {Pose(), Pose(Vec3(1, 0, 0), Quat::Identity())};
  pg.constraints = {Constraint::absolute_prior(5, Pose(), Vec6::Ones())};
  CHECK_THROWS_AS(optimize(pg, SolverConfig{}), IndexOutOfRange);
}

TEST_CASE("translation-only graphs match the dense quadratic reference") {
  std::mt19937_64 g(30);
  std::uniform_real_distribution<double> wdist(0.2, 5.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 7;
    std::vector<oracles::AnchorEq> anchors;
    std::vector<oracles::StepEq> steps;
    PoseGraph pg;
    pg.poses.assign(n, Pose());
    for (int f = 0; f < n; ++f) {
      oracles::AnchorEq a;
      a.i = f;
      a.target = oracles::random_vec3(g, 2.0);
      a.weight = wdist(g);
      anchors.push_back(a);
      // rotation stiffness huge: relative constraints couple translation into
      // rotation, so the rotations must be pinned for the problem to reduce to
      // the dense quadratic on positions
      pg.constraints.push_back(
          Constraint::absolute_prior(f, Pose(a.target, Quat::Identity()), stiff(a.weight, 1e10)));
    }
    for (int f = 0; f + 1 < n; ++f) {
      oracles::StepEq s;
      s.i = f;
      s.j = f + 1;
      s.delta = oracles::random_vec3(g);
      s.weight = wdist(g);
      steps.push_back(s);
      pg.constraints.push_back(
          Constraint::relative(f, f + 1, RelativePose(s.delta, Quat::Identity()), stiff(s.weight, 1.0)));
    }
    // one long-range link to make the normal matrix less trivial
    oracles::StepEq far;
    far.i = 1;
    far.j = 5;
    far.delta = oracles::random_vec3(g, 3.0);
    far.weight = wdist(g);
    steps.push_back(far);
    pg.constraints.push_back(
        Constraint::relative(far.i, far.j, RelativePose(far.delta, Quat::Identity()), stiff(far.weight, 1.0)));

    const std::vector<Eigen::Vector3d> ref = oracles::solve_translation_chain(n, anchors, steps);
    const OptimizeResult res = optimize(pg, SolverConfig{});
    for (int f = 0; f < n; ++f) {
      CHECK((res.graph.poses[f].t - ref[f]).norm() < 1e-6);
      CHECK(oracles::quat_dist4(res.graph.poses[f].q, Quat::Identity()) < 1e-7);
    }
  }
}

TEST_CASE("fusion validates stream shapes") {
  const std::vector<Pose> apr(5);
  const std::vector<RelativePose> rpr(4);
  FusionConfig fcfg;
  fcfg.window = 3;
  const SolverConfig scfg;
  CHECK_THROWS_AS(fuse_streams(apr, std::vector<RelativePose>(3), fcfg, scfg), StreamLengthMismatch);
  CHECK_THROWS_AS(fuse_streams(std::vector<Pose>(2), std::vector<RelativePose>(1), fcfg, scfg),
                  StreamLengthMismatch);
  CHECK_THROWS_AS(fuse_streams_detailed(apr, rpr, std::vector<bool>(4), fcfg, scfg), StreamLengthMismatch);
  FusionConfig bad = fcfg;
  bad.window = 1;
  CHECK_THROWS_AS(fuse_streams(apr, rpr, bad, scfg), DimensionMismatch);
  bad = fcfg;
  bad.stride = 0;
  CHECK_THROWS_AS(fuse_streams(apr, rpr, bad, scfg), DimensionMismatch);
  bad = fcfg;
  bad.skip = 0;
  CHECK_THROWS_AS(fuse_streams(apr, rpr, bad, scfg), DimensionMismatch);
}

namespace {

// Noiseless consistent pair of streams along a random trajectory.
void exact_streams(std::uint64_t seed, int n, std::vector<Pose>& apr, std::vector<RelativePose>& rpr) {
  std::mt19937_64 g(seed);
  apr.clear();
  rpr.clear();
  Pose cur = oracles::random_pose(g);
  for (int f = 0; f < n; ++f) {
    apr.push_back(cur);
    cur = apply_relative(cur, RelativePose(oracles::random_vec3(g), exp_so3(0.4 * oracles::random_vec3(g))));
  }
  for (int f = 0; f + 1 < n; ++f) rpr.push_back(relative_between(apr[f], apr[f + 1]));
}

}  // namespace

TEST_CASE("consistent streams are a fusion fixed point") {
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(41, 12, apr, rpr);
  for (int window : {2, 5, 12}) {
    FusionConfig fcfg;
    fcfg.window = window;
    const std::vector<Pose> out = fuse_streams(apr, rpr, fcfg, SolverConfig{});
    REQUIRE(out.size() == apr.size());
    for (size_t f = 0; f < out.size(); ++f) {
      CHECK((out[f].t - apr[f].t).norm() < 1e-9);
      CHECK(quat_angle(out[f].q, apr[f].q) < 1e-7);
    }
  }
}

TEST_CASE("consistent streams stay fixed under skip links") {
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(42, 12, apr, rpr);
  FusionConfig fcfg;
  fcfg.window = 6;
  fcfg.skip = 2;
  const std::vector<Pose> out = fuse_streams(apr, rpr, fcfg, SolverConfig{});
  for (size_t f = 0; f < out.size(); ++f) CHECK((out[f].t - apr[f].t).norm() < 1e-9);
}

TEST_CASE("zero relative stiffness leaves the absolute stream untouched") {
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(43, 10, apr, rpr);
  // make rpr junk so only the zero stiffness can explain a fixed point
  for (RelativePose& r : rpr) r.dt += Vec3(5, -3, 2);
  FusionConfig fcfg;
  fcfg.window = 5;
  fcfg.rpr_stiffness = Vec6::Zero();
  const std::vector<Pose> out = fuse_streams(apr, rpr, fcfg, SolverConfig{});
  for (size_t f = 0; f < out.size(); ++f) {
    CHECK((out[f].t - apr[f].t).norm() < 1e-10);
    CHECK(quat_angle(out[f].q, apr[f].q) < 1e-7);
  }
}

TEST_CASE("a stiff relative chain suppresses an absolute outlier") {
  // 10 frames marching along x; one wild absolute measurement at frame 5
  const int n = 10;
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  for (int f = 0; f < n; ++f) apr.emplace_back(Vec3(double(f), 0, 0), Quat::Identity());
  for (int f = 0; f + 1 < n; ++f) rpr.emplace_back(Vec3(1, 0, 0), Quat::Identity());
  apr[5].t.x() += 10.0;

  FusionConfig fcfg;
  fcfg.window = n;  // single batch window
  fcfg.apr_stiffness = stiff(1.0, 1.0);
  fcfg.rpr_stiffness = stiff(1e4, 1e4);
  const std::vector<Pose> fused = fuse_streams(apr, rpr, fcfg, SolverConfig{});
  // the near-rigid chain spreads the +10 hit evenly over all 10 frames, so the
  // peak error collapses from 10 m to ~1 m at the quadratic optimum
  CHECK(std::abs(fused[5].t.x() - 5.0) < 1.1);
  CHECK(std::abs(fused[5].t.x() - 5.0) > 0.9);

  // and the whole batch matches the dense quadratic reference
  std::vector<oracles::AnchorEq> anchors;
  std::vector<oracles::StepEq> steps;
  for (int f = 0; f < n; ++f) anchors.push_back({f, apr[f].t, 1.0});
  for (int f = 0; f + 1 < n; ++f) steps.push_back({f, f + 1, Vec3(1, 0, 0), 1e4});
  const std::vector<Eigen::Vector3d> ref = oracles::solve_translation_chain(n, anchors, steps);
  for (int f = 0; f < n; ++f) CHECK((fused[f].t - ref[f]).norm() < 1e-6);
}

TEST_CASE("a full-stream window equals one batch optimization") {
  std::mt19937_64 g(44);
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(44, 8, apr, rpr);
  for (Pose& p : apr) p.t += 0.3 * oracles::random_vec3(g);

  FusionConfig fcfg;
  fcfg.window = 8;
  const FuseResult fused = fuse_streams_detailed(apr, rpr, {}, fcfg, SolverConfig{});
  REQUIRE(fused.window_energy_before.size() == 1);

  PoseGraph pg;
  pg.poses = apr;
  for (int f = 0; f < 8; ++f) pg.constraints.push_back(Constraint::absolute_prior(f, apr[f], fcfg.apr_stiffness));
  for (int f = 0; f + 1 < 8; ++f)
    pg.constraints.push_back(Constraint::relative(f, f + 1, rpr[f], fcfg.rpr_stiffness));
  const OptimizeResult batch = optimize(pg, SolverConfig{});
  CHECK(fused.window_energy_before.front() == doctest::Approx(batch.energy_trace.front()));
  CHECK(fused.window_energy_after.front() == doctest::Approx(batch.energy_trace.back()));
  for (int f = 0; f < 8; ++f) CHECK((fused.poses[f].t - batch.graph.poses[f].t).norm() < 1e-12);
}

TEST_CASE("emitted frames are causal: extending the stream never rewrites them") {
  std::mt19937_64 g(45);
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(45, 40, apr, rpr);
  for (Pose& p : apr) p.t += 0.2 * oracles::random_vec3(g);

  for (int stride : {1, 3}) {
    FusionConfig fcfg;
    fcfg.window = 5;
    fcfg.stride = stride;
    const int n_short = 20;  // chosen so (n - window) is a stride multiple for both
    const std::vector<Pose> full = fuse_streams(apr, rpr, fcfg, SolverConfig{});
    const std::vector<Pose> part =
        fuse_streams(std::vector<Pose>(apr.begin(), apr.begin() + n_short),
                     std::vector<RelativePose>(rpr.begin(), rpr.begin() + n_short - 1), fcfg, SolverConfig{});
    // every frame the short run emitted from a non-tail window is final
    for (int f = 0; f < n_short; ++f) {
      CHECK((part[f].t - full[f].t).norm() < 1e-12);
      CHECK(oracles::quat_dist4(part[f].q, full[f].q) < 1e-12);
    }
  }
}

TEST_CASE("window count follows stride with a forced tail") {
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(46, 10, apr, rpr);
  const SolverConfig scfg;
  FusionConfig fcfg;
  fcfg.window = 5;

  fcfg.stride = 3;  // starts 0, 3, then forced 5
  CHECK(fuse_streams_detailed(apr, rpr, {}, fcfg, scfg).window_energy_before.size() == 3);
  fcfg.stride = 1;  // starts 0..5
  CHECK(fuse_streams_detailed(apr, rpr, {}, fcfg, scfg).window_energy_before.size() == 6);
  fcfg.stride = 100;  // only the first window fits; tail still forced
  CHECK(fuse_streams_detailed(apr, rpr, {}, fcfg, scfg).window_energy_before.size() == 2);
  fcfg.window = 10;  // single window covers everything
  fcfg.stride = 1;
  CHECK(fuse_streams_detailed(apr, rpr, {}, fcfg, scfg).window_energy_before.size() == 1);
}

TEST_CASE("absent absolute measurements ride the relative chain") {
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(47, 12, apr, rpr);
  const std::vector<Pose> gt = apr;

  // drop every absolute measurement after frame 0 and scramble them, so any
  // leakage of a dropped prior would show up immediately
  std::vector<bool> present(12, false);
  present[0] = true;
  for (size_t f = 1; f < apr.size(); ++f) apr[f].t += Vec3(100, 100, 100);

  FusionConfig fcfg;
  fcfg.window = 4;
  const FuseResult out = fuse_streams_detailed(apr, rpr, present, fcfg, SolverConfig{});
  for (size_t f = 0; f < gt.size(); ++f) {
    CHECK((out.poses[f].t - gt[f].t).norm() < 1e-9);
    CHECK(quat_angle(out.poses[f].q, gt[f].q) < 1e-7);
  }
}

TEST_CASE("a skip gap over an absent frame leaves it unconstrained") {
  std::vector<Pose> apr;
  std::vector<RelativePose> rpr;
  exact_streams(48, 3, apr, rpr);
  std::vector<bool> present = {true, false, true};
  FusionConfig fcfg;
  fcfg.window = 3;
  fcfg.skip = 2;  // the only relative link jumps 0 -> 2, frame 1 has nothing
  CHECK_THROWS_AS(fuse_streams_detailed(apr, rpr, present, fcfg, SolverConfig{}), UnconstrainedPose);
}
