#pragma once

#include <Eigen/Core>
#include <optional>
#include <utility>
#include <vector>

#include "vifuse/geometry.hpp"

namespace vifuse {

struct RigidTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Closed-form least-squares alignment est -> gt (rotation from the largest
// eigenvector of the 4x4 correlation form, optional uniform scale).  Needs at
// least 3 points and a non-degenerate (non-coincident, non-collinear) estimate
// set, otherwise the rotation is not unique and DegenerateGeometry is raised.
RigidTransform horn_align(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, bool with_scale = false);

// Sum of squared alignment residuals for a candidate transform.
double alignment_objective(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, const RigidTransform& t);

// Root-mean-square translation error after rigid alignment of the estimated
// positions onto the ground truth.
double ate(const std::vector<Pose>& est, const std::vector<Pose>& gt);

enum class AtleMode { MeanOverFrames, FinalFrame };

// Integrates the relative stream from the first ground-truth pose and measures
// the position error of the resulting chain: mean over all frames by default,
// or the final frame only.
double atle(const std::vector<RelativePose>& rel_pred, const std::vector<Pose>& gt,
            AtleMode mode = AtleMode::MeanOverFrames);

// (median translation error [m], median rotation error [deg]).
std::pair<double, double> median_errors(const std::vector<Pose>& est, const std::vector<Pose>& gt);
std::pair<double, double> median_relative_errors(const std::vector<RelativePose>& est,
                                                 const std::vector<RelativePose>& gt);

struct TrajectoryReport {
  std::optional<double> e_med_p;    // median absolute translation error [m]
  std::optional<double> e_med_q;    // median absolute rotation error [deg]
  std::optional<double> d_e_med_p;  // median relative translation error [m]
  std::optional<double> d_e_med_q;  // median relative rotation error [deg]
  std::optional<double> e_ate_p;    // aligned RMSE [m]
  std::optional<double> e_atle_p;   // integrated relative chain error [m]
  int frames = 0;
};

// Fills every metric the provided streams allow; e_ate_p needs >= 3 frames and
// a non-degenerate estimate, the relative metrics need the relative streams.
TrajectoryReport evaluate_trajectory(const std::vector<Pose>& est, const std::vector<Pose>& gt,
                                     const std::vector<RelativePose>& rel_est,
                                     const std::vector<RelativePose>& rel_gt);

}  // namespace vifuse
