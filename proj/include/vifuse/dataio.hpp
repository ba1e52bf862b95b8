#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vifuse/geometry.hpp"

namespace vifuse {

struct Trajectory {
  std::vector<std::int64_t> timestamps_ns;
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
};

struct ImuRecord {
  std::int64_t timestamp_ns = 0;
  Vec3 gyro = Vec3::Zero();   // [rad/s]
  Vec3 accel = Vec3::Zero();  // [m/s^2]
};

// EuRoC ground-truth CSV: '#' header, comma-separated rows starting with
// timestamp [ns], position, quaternion in (w, x, y, z) order; extra columns
// (velocity, biases) are ignored.  At least one data row is required.
Trajectory load_euroc_groundtruth(const std::string& path);

// EuRoC IMU CSV: timestamp [ns], gyro xyz, accel xyz.  A header-only file
// yields an empty list.
std::vector<ImuRecord> load_euroc_imu(const std::string& path);

// TUM trajectory text: "timestamp tx ty tz qx qy qz qw" (quaternion w LAST on
// disk), '#' comments, whitespace separated.  Timestamps are carried as
// decimal seconds and converted losslessly to/from integer nanoseconds.
Trajectory load_tum(const std::string& path);
void save_tum(const Trajectory& traj, const std::string& path);

// Relative-step interchange: '#' header then comma-separated
// "dt_x,dt_y,dt_z,dq_w,dq_x,dq_y,dq_z" rows.
void save_rpr_csv(const std::vector<RelativePose>& rel, const std::string& path);
std::vector<RelativePose> load_rpr_csv(const std::string& path);

// Smooth seeded test trajectory: per-axis sum of three sinusoids (periods
// >= 4 s, bandwidth capped so consecutive frames move < 0.2 * amplitude),
// heading-following yaw with a small roll/pitch oscillation.  amplitude == 0
// produces a static pose at the origin.
Trajectory synth_trajectory(std::uint64_t seed, int n_frames, double rate_hz, double amplitude);

struct NoiseModel {
  double sigma_t = 0.0;         // translation std [m]
  double sigma_theta = 0.0;     // rotation-vector std [rad]
  Vec3 bias_t = Vec3::Zero();   // per-step translation drift (relative stream only)
  double outlier_prob = 0.0;    // absolute stream only
  double outlier_scale = 1.0;
  std::uint64_t seed = 0;
};

// Per-frame draw order: 3 translation normals, 3 rotation normals, 1 uniform
// for the outlier decision (absolute stream).  The zero model returns the
// input poses unchanged.
std::vector<Pose> simulate_apr(const Trajectory& gt, const NoiseModel& nm);

// Relative steps between consecutive ground-truth frames with Gaussian noise
// and additive per-step bias; outlier fields are ignored.  Draw order per
// step: 3 translation normals, 3 rotation normals.
std::vector<RelativePose> simulate_rpr(const Trajectory& gt, const NoiseModel& nm);

// Absolute stream plus a presence mask and the noise scale it was generated
// with (the scale feeds NoiseBurst corruption).
struct PoseStream {
  std::vector<Pose> poses;
  std::vector<bool> present;
  double sigma_t = 0.0;
  double sigma_theta = 0.0;
};

PoseStream make_pose_stream(std::vector<Pose> poses, const NoiseModel& nm);

enum class CorruptionKind { NoiseBurst, Freeze, Dropout };

// level in [0, 1]; 0 is the identity for every kind.
//  NoiseBurst: extra noise inside the span so the total std is
//              sigma * (1 + 99 * level)  (level 1 = x100).
//  Freeze:     the first round(level * span) frames of the span hold the last
//              pre-span value; the span must start after frame 0.
//  Dropout:    a seeded random subset of round(level * span) frames inside the
//              span is marked absent (values kept for initialization only).
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::NoiseBurst;
  double level = 0.0;
  std::size_t span_begin = 0;  // [begin, end)
  std::size_t span_end = 0;
  std::uint64_t seed = 0;
};

PoseStream corrupt_stream(const PoseStream& stream, const CorruptionSpec& spec);

}  // namespace vifuse
