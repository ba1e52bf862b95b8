#include "vifuse/geometry.hpp"

#include <cmath>

namespace vifuse {

namespace {

// Flip onto the w >= 0 hemisphere; break w == 0 ties by the first nonzero
// of (x, y, z).  Exact sign flips only, so the operation is idempotent.
Quat hemisphere(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  bool flip = false;
  if (w < 0.0) {
    flip = true;
  } else if (w == 0.0) {
    if (x < 0.0) {
      flip = true;
    } else if (x == 0.0) {
      if (y < 0.0) {
        flip = true;
      } else if (y == 0.0 && z < 0.0) {
        flip = true;
      }
    }
  }
  return flip ? Quat(-w, -x, -y, -z) : q;
}

}  // namespace

Quat canonicalized(const Quat& q) {
  const double n2 = q.squaredNorm();
  if (n2 < 1e-24) throw ZeroQuaternion("quaternion norm below 1e-12, cannot normalize");
  // Skip division when already unit so repeated normalization is bitwise stable.
  if (std::abs(n2 - 1.0) < 4.0 * std::numeric_limits<double>::epsilon()) return hemisphere(q);
  const double inv = 1.0 / std::sqrt(n2);
  return hemisphere(Quat(q.w() * inv, q.x() * inv, q.y() * inv, q.z() * inv));
}

Quat quat_normalize(const Vec4& wxyz) {
  return canonicalized(Quat(wxyz[0], wxyz[1], wxyz[2], wxyz[3]));
}

Vec4 quat_wxyz(const Quat& q) { return Vec4(q.w(), q.x(), q.y(), q.z()); }

Quat exp_so3(const Vec3& theta) {
  const double a = theta.norm();
  double w, k;
  if (a < 1e-8) {
    // 2nd-order Taylor of cos(a/2) and sin(a/2)/a around zero.
    w = 1.0 - a * a / 8.0;
    k = 0.5 - a * a / 48.0;
  } else {
    w = std::cos(0.5 * a);
    k = std::sin(0.5 * a) / a;
  }
  return canonicalized(Quat(w, k * theta.x(), k * theta.y(), k * theta.z()));
}

Vec3 log_so3(const Quat& q_in) {
  Quat q = canonicalized(q_in);
  if (q.w() < 0.0) q = Quat(-q.w(), -q.x(), -q.y(), -q.z());
  const Vec3 v(q.x(), q.y(), q.z());
  const double s = v.norm();
  if (s < 1e-12) return (2.0 / q.w()) * v;
  const double angle = 2.0 * std::atan2(s, q.w());
  return (angle / s) * v;
}

double quat_angle(const Quat& a, const Quat& b) {
  const double d = std::abs(a.coeffs().dot(b.coeffs()));
  return 2.0 * std::acos(std::min(1.0, std::max(0.0, d)));
}

TangentDelta::TangentDelta(const Vec3& dt_, const Vec3& dtheta_) : dt(dt_), dtheta(dtheta_) {
  const double a = dtheta.norm();
  if (a > M_PI) {
    double r = std::fmod(a, 2.0 * M_PI);
    if (r > M_PI) r -= 2.0 * M_PI;  // may go negative: same rotation, flipped axis
    dtheta *= r / a;
  }
}

RelativePose relative_between(const Pose& a, const Pose& b) {
  const Vec3 dt = a.q.conjugate() * (b.t - a.t);
  return RelativePose(dt, a.q.conjugate() * b.q);
}

Pose apply_relative(const Pose& a, const RelativePose& d) {
  return Pose(a.t + a.q * d.dt, a.q * d.dq);
}

RelativePose compose_relative(const RelativePose& d1, const RelativePose& d2) {
  return RelativePose(d1.dt + d1.dq * d2.dt, d1.dq * d2.dq);
}

Pose boxplus(const Pose& p, const TangentDelta& d) {
  return Pose(p.t + d.dt, p.q * exp_so3(d.dtheta));
}

LiteralPoseDiff literal_diff(const Pose& a, const Pose& b) {
  LiteralPoseDiff out;
  out.dt = a.t - b.t;
  out.dq4 = quat_wxyz(a.q) - quat_wxyz(b.q);
  return out;
}

std::vector<Pose> integrate_relative(const Pose& start, const std::vector<RelativePose>& rel) {
  std::vector<Pose> out;
  out.reserve(rel.size() + 1);
  out.push_back(start);
  for (const RelativePose& d : rel) out.push_back(apply_relative(out.back(), d));
  return out;
}

}  // namespace vifuse
