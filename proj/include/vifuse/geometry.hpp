#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <vector>

#include "vifuse/errors.hpp"

namespace vifuse {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Quat = Eigen::Quaterniond;

// Quaternions are handled in (w, x, y, z) component order at every API and file
// boundary.  Unit norm plus the w >= 0 hemisphere is the canonical representation;
// a w == 0 tie is broken by the sign of the first nonzero of (x, y, z).

// Normalizes a (w,x,y,z) 4-vector into the canonical hemisphere.
// Throws ZeroQuaternion when the norm is below 1e-12.
Quat quat_normalize(const Vec4& wxyz);

// Same canonicalization for an existing quaternion.
Quat canonicalized(const Quat& q);

Vec4 quat_wxyz(const Quat& q);

// Right exponential map: rotation vector -> unit quaternion.
// Uses a 2nd-order Taylor branch below |theta| = 1e-8.
Quat exp_so3(const Vec3& theta);

// Log map inverse of exp_so3; returns the rotation vector with angle in [0, pi].
Vec3 log_so3(const Quat& q);

// Angle between two unit quaternions: 2*acos(clamp(|<a,b>|, 0, 1)), in radians.
// Sign-invariant, symmetric, and satisfies the triangle inequality.
double quat_angle(const Quat& a, const Quat& b);

struct Pose {
  Vec3 t = Vec3::Zero();
  Quat q = Quat::Identity();

  Pose() = default;
  Pose(const Vec3& t_, const Quat& q_) : t(t_), q(canonicalized(q_)) {}
};

// Body-frame transform from frame i to frame j: dt = R(q_i)^T (t_j - t_i),
// dq = q_i^-1 * q_j.
struct RelativePose {
  Vec3 dt = Vec3::Zero();
  Quat dq = Quat::Identity();

  RelativePose() = default;
  RelativePose(const Vec3& dt_, const Quat& dq_) : dt(dt_), dq(canonicalized(dq_)) {}
};

// Raw component-wise difference between two poses.  dq4 is a plain 4-vector
// difference in (w,x,y,z) order, not a rotation.
struct LiteralPoseDiff {
  Vec3 dt = Vec3::Zero();
  Vec4 dq4 = Vec4::Zero();
};

// Minimal 6-dof tangent step: additive translation plus a rotation vector
// applied through the right exponential map.  The rotation part is wrapped
// into |dtheta| <= pi at construction.
struct TangentDelta {
  Vec3 dt = Vec3::Zero();
  Vec3 dtheta = Vec3::Zero();

  TangentDelta() = default;
  TangentDelta(const Vec3& dt_, const Vec3& dtheta_);
};

RelativePose relative_between(const Pose& a, const Pose& b);
Pose apply_relative(const Pose& a, const RelativePose& d);
RelativePose compose_relative(const RelativePose& d1, const RelativePose& d2);

// Manifold update: t + dt, q * Exp(dtheta), result renormalized.
Pose boxplus(const Pose& p, const TangentDelta& d);

LiteralPoseDiff literal_diff(const Pose& a, const Pose& b);

// Chains relative steps starting from `start`; output has |rel| + 1 poses.
std::vector<Pose> integrate_relative(const Pose& start, const std::vector<RelativePose>& rel);

}  // namespace vifuse
