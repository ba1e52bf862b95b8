#pragma once

// Self-contained reference implementations used to cross-check library results.
// Everything here is written independently of the library code paths it checks:
// direct normal equations on flat position vectors, grid searches, golden-section
// minimization, and scalar recomputations.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vifuse/geometry.hpp"
#include "vifuse/metrics.hpp"

namespace oracles {

// --- quadratic reference solver ------------------------------------------------
// Translation-only pose chain with identity rotations: absolute anchors
// x_i ~ target (weight w) and relative steps x_j - x_i ~ d (weight w), solved
// exactly as one dense least-squares problem per axis.

struct AnchorEq {
  int i = 0;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
  double weight = 1.0;
};

struct StepEq {
  int i = 0, j = 0;
  Eigen::Vector3d delta = Eigen::Vector3d::Zero();
  double weight = 1.0;
};

inline std::vector<Eigen::Vector3d> solve_translation_chain(int n, const std::vector<AnchorEq>& anchors,
                                                            const std::vector<StepEq>& steps) {
  std::vector<Eigen::Vector3d> out(n, Eigen::Vector3d::Zero());
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (const AnchorEq& q : anchors) {
      a(q.i, q.i) += q.weight;
      b(q.i) += q.weight * q.target[axis];
    }
    for (const StepEq& q : steps) {
      a(q.i, q.i) += q.weight;
      a(q.j, q.j) += q.weight;
      a(q.i, q.j) -= q.weight;
      a(q.j, q.i) -= q.weight;
      b(q.i) -= q.weight * q.delta[axis];
      b(q.j) += q.weight * q.delta[axis];
    }
    const Eigen::VectorXd x = a.fullPivLu().solve(b);
    for (int k = 0; k < n; ++k) out[k][axis] = x[k];
  }
  return out;
}

// --- rigid alignment by hierarchical grid search -------------------------------
// Euler-angle grid refined around the best cell down to below 0.5 degrees, with
// the translation closed-form (centroid match) at every candidate rotation.

inline double grid_align_objective(const std::vector<Eigen::Vector3d>& est, const std::vector<Eigen::Vector3d>& gt,
                                   const Eigen::Matrix3d& rot) {
  Eigen::Vector3d me = Eigen::Vector3d::Zero(), mg = Eigen::Vector3d::Zero();
  for (size_t k = 0; k < est.size(); ++k) {
    me += est[k];
    mg += gt[k];
  }
  me /= double(est.size());
  mg /= double(gt.size());
  const Eigen::Vector3d t = mg - rot * me;
  double obj = 0.0;
  for (size_t k = 0; k < est.size(); ++k) obj += (gt[k] - (rot * est[k] + t)).squaredNorm();
  return obj;
}

inline Eigen::Matrix3d euler_zyx(double a, double b, double c) {
  return (Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(b, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(c, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

inline double grid_align_best(const std::vector<Eigen::Vector3d>& est, const std::vector<Eigen::Vector3d>& gt) {
  const double pi = M_PI;
  double best = std::numeric_limits<double>::infinity();
  double ba = 0, bb = 0, bc = 0;
  // coarse global pass, ~9 degree cells
  const double coarse = pi / 20.0;
  for (double a = -pi; a < pi; a += coarse)
    for (double b = -pi / 2; b <= pi / 2; b += coarse)
      for (double c = -pi; c < pi; c += coarse) {
        const double obj = grid_align_objective(est, gt, euler_zyx(a, b, c));
        if (obj < best) {
          best = obj;
          ba = a;
          bb = b;
          bc = c;
        }
      }
  // local refinement down to < 0.5 degree resolution and beyond
  double step = coarse;
  while (step > 1e-6) {
    step *= 0.5;
    bool improved = true;
    while (improved) {
      improved = false;
      for (int da = -1; da <= 1; ++da)
        for (int db = -1; db <= 1; ++db)
          for (int dc = -1; dc <= 1; ++dc) {
            const double obj =
                grid_align_objective(est, gt, euler_zyx(ba + da * step, bb + db * step, bc + dc * step));
            if (obj < best - 1e-15) {
              best = obj;
              ba += da * step;
              bb += db * step;
              bc += dc * step;
              improved = true;
            }
          }
    }
  }
  return best;
}

// --- golden-section scalar minimization -----------------------------------------

inline double golden_min(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  while (b - a > tol) {
    if (f(c) < f(d))
      b = d;
    else
      a = c;
    c = b - gr * (b - a);
    d = a + gr * (b - a);
  }
  return 0.5 * (a + b);
}

// --- misc helpers -----------------------------------------------------------------

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// Sign-invariant 4-vector distance between quaternions.  Unlike the acos-based
// angle this resolves differences down to machine precision, so it is the right
// comparator for "same rotation" assertions.
inline double quat_dist4(const vifuse::Quat& a, const vifuse::Quat& b) {
  const vifuse::Vec4 va = vifuse::quat_wxyz(a), vb = vifuse::quat_wxyz(b);
  return std::min((va - vb).norm(), (va + vb).norm());
}

inline vifuse::Quat random_quat(std::mt19937_64& g) {
  std::normal_distribution<double> n(0.0, 1.0);
  vifuse::Quat q(n(g), n(g), n(g), n(g));
  while (q.norm() < 1e-6) q = vifuse::Quat(n(g), n(g), n(g), n(g));
  return vifuse::canonicalized(q);
}

inline vifuse::Vec3 random_vec3(std::mt19937_64& g, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return vifuse::Vec3(n(g), n(g), n(g));
}

inline vifuse::Pose random_pose(std::mt19937_64& g, double scale = 1.0) {
  return vifuse::Pose(random_vec3(g, scale), random_quat(g));
}

}  // namespace oracles
