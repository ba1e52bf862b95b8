#include "vifuse/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace vifuse {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw EmptyInput("median of an empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

constexpr double kRad2Deg = 180.0 / M_PI;

}  // namespace

RigidTransform horn_align(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, bool with_scale) {
  if (est.size() != gt.size())
    throw LengthMismatch("point sets differ: " + std::to_string(est.size()) + " vs " + std::to_string(gt.size()));
  const size_t n = est.size();
  if (n < 3) throw DegenerateGeometry("alignment needs at least 3 point pairs, got " + std::to_string(n));

  Vec3 mean_e = Vec3::Zero(), mean_g = Vec3::Zero();
  for (size_t k = 0; k < n; ++k) {
    mean_e += est[k];
    mean_g += gt[k];
  }
  mean_e /= static_cast<double>(n);
  mean_g /= static_cast<double>(n);

  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();  // sum of x y^T over centered pairs
  double var_e = 0.0;
  for (size_t k = 0; k < n; ++k) {
    const Vec3 x = est[k] - mean_e, y = gt[k] - mean_g;
    s += x * y.transpose();
    var_e += x.squaredNorm();
  }
  if (var_e < 1e-24) throw DegenerateGeometry("estimate points are coincident, rotation undefined");

  const double sxx = s(0, 0), sxy = s(0, 1), sxz = s(0, 2);
  const double syx = s(1, 0), syy = s(1, 1), syz = s(1, 2);
  const double szx = s(2, 0), szy = s(2, 1), szz = s(2, 2);
  Eigen::Matrix4d nmat;
  nmat << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
      syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
      szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
      sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(nmat);
  if (eig.info() != Eigen::Success) throw DegenerateGeometry("eigen decomposition failed");
  const Eigen::Vector4d evs = eig.eigenvalues();  // ascending
  const double spread = std::max({std::abs(evs[0]), std::abs(evs[3]), var_e});
  if (evs[3] - evs[2] <= spread * 1e-12)
    throw DegenerateGeometry("rotation is not unique (points collinear?)");

  const Eigen::Vector4d q = eig.eigenvectors().col(3);  // (w, x, y, z)
  RigidTransform t;
  t.rotation = canonicalized(Quat(q[0], q[1], q[2], q[3]));
  if (with_scale) {
    double dot = 0.0;
    for (size_t k = 0; k < n; ++k) dot += (gt[k] - mean_g).dot(t.rotation * (est[k] - mean_e));
    t.scale = dot / var_e;
  }
  t.translation = mean_g - t.scale * (t.rotation * mean_e);
  return t;
}

double alignment_objective(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, const RigidTransform& t) {
  if (est.size() != gt.size()) throw LengthMismatch("point sets differ in size");
  double obj = 0.0;
  for (size_t k = 0; k < est.size(); ++k) obj += (gt[k] - t.apply(est[k])).squaredNorm();
  return obj;
}

double ate(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  if (est.size() != gt.size())
    throw LengthMismatch("trajectories differ: " + std::to_string(est.size()) + " vs " + std::to_string(gt.size()));
  std::vector<Vec3> pe, pg;
  pe.reserve(est.size());
  pg.reserve(gt.size());
  for (const Pose& p : est) pe.push_back(p.t);
  for (const Pose& p : gt) pg.push_back(p.t);
  const RigidTransform t = horn_align(pe, pg, false);
  double sq = 0.0;
  for (size_t k = 0; k < pe.size(); ++k) sq += (t.apply(pe[k]) - pg[k]).squaredNorm();
  return std::sqrt(sq / static_cast<double>(pe.size()));
}

double atle(const std::vector<RelativePose>& rel_pred, const std::vector<Pose>& gt, AtleMode mode) {
  if (gt.empty()) throw EmptyInput("ground truth is empty");
  if (rel_pred.size() + 1 != gt.size())
    throw LengthMismatch("need |rel| == |gt| - 1, got " + std::to_string(rel_pred.size()) + " vs " +
                         std::to_string(gt.size()));
  const std::vector<Pose> chain = integrate_relative(gt.front(), rel_pred);
  if (mode == AtleMode::FinalFrame) return (chain.back().t - gt.back().t).norm();
  double sum = 0.0;
  for (size_t k = 0; k < chain.size(); ++k) sum += (chain[k].t - gt[k].t).norm();
  return sum / static_cast<double>(chain.size());
}

std::pair<double, double> median_errors(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  if (est.size() != gt.size())
    throw LengthMismatch("trajectories differ: " + std::to_string(est.size()) + " vs " + std::to_string(gt.size()));
  if (est.empty()) throw EmptyInput("cannot take medians of empty trajectories");
  std::vector<double> et, eq;
  et.reserve(est.size());
  eq.reserve(est.size());
  for (size_t k = 0; k < est.size(); ++k) {
    et.push_back((est[k].t - gt[k].t).norm());
    eq.push_back(quat_angle(est[k].q, gt[k].q) * kRad2Deg);
  }
  return {median(std::move(et)), median(std::move(eq))};
}

std::pair<double, double> median_relative_errors(const std::vector<RelativePose>& est,
                                                 const std::vector<RelativePose>& gt) {
  if (est.size() != gt.size())
    throw LengthMismatch("relative streams differ: " + std::to_string(est.size()) + " vs " +
                         std::to_string(gt.size()));
  if (est.empty()) throw EmptyInput("cannot take medians of empty streams");
  std::vector<double> et, eq;
  et.reserve(est.size());
  eq.reserve(est.size());
  for (size_t k = 0; k < est.size(); ++k) {
    et.push_back((est[k].dt - gt[k].dt).norm());
    eq.push_back(quat_angle(est[k].dq, gt[k].dq) * kRad2Deg);
  }
  return {median(std::move(et)), median(std::move(eq))};
}

TrajectoryReport evaluate_trajectory(const std::vector<Pose>& est, const std::vector<Pose>& gt,
                                     const std::vector<RelativePose>& rel_est,
                                     const std::vector<RelativePose>& rel_gt) {
  TrajectoryReport r;
  r.frames = static_cast<int>(est.size());
  const auto med = median_errors(est, gt);
  r.e_med_p = med.first;
  r.e_med_q = med.second;
  if (!rel_est.empty() && rel_est.size() == rel_gt.size()) {
    const auto dmed = median_relative_errors(rel_est, rel_gt);
    r.d_e_med_p = dmed.first;
    r.d_e_med_q = dmed.second;
  }
  if (est.size() >= 3) {
    try {
      r.e_ate_p = ate(est, gt);
    } catch (const DegenerateGeometry&) {
      // leave unset: alignment undefined for this geometry
    }
  }
  if (!rel_est.empty() && rel_est.size() + 1 == gt.size()) r.e_atle_p = atle(rel_est, gt);
  return r;
}

}  // namespace vifuse
