#include "vifuse/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace vifuse {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream ss(line);
  while (std::getline(ss, tok, sep)) out.push_back(tok);
  return out;
}

std::string trimmed(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& tok, long line) {
  try {
    size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw ParseError("trailing characters in number '" + tok + "'", line);
    if (!std::isfinite(v)) throw ParseError("non-finite value '" + tok + "'", line);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("cannot parse number '" + tok + "'", line);
  }
}

std::int64_t parse_int64(const std::string& tok, long line) {
  try {
    size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size()) throw ParseError("trailing characters in integer '" + tok + "'", line);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("cannot parse integer '" + tok + "'", line);
  }
}

// Decimal seconds <-> integer nanoseconds without a double round trip, so
// nanosecond timestamps of any magnitude survive save/load exactly.
std::int64_t seconds_string_to_ns(const std::string& tok, long line) {
  if (tok.find_first_of("eE") != std::string::npos) {
    const double v = parse_double(tok, line);
    return static_cast<std::int64_t>(std::llround(v * 1e9));
  }
  std::string t = tok;
  bool neg = false;
  if (!t.empty() && (t[0] == '+' || t[0] == '-')) {
    neg = t[0] == '-';
    t = t.substr(1);
  }
  const auto dot = t.find('.');
  const std::string ip = dot == std::string::npos ? t : t.substr(0, dot);
  std::string fp = dot == std::string::npos ? "" : t.substr(dot + 1);
  if (ip.empty() && fp.empty()) throw ParseError("cannot parse timestamp '" + tok + "'", line);
  for (char c : ip)
    if (!std::isdigit(static_cast<unsigned char>(c))) throw ParseError("cannot parse timestamp '" + tok + "'", line);
  for (char c : fp)
    if (!std::isdigit(static_cast<unsigned char>(c))) throw ParseError("cannot parse timestamp '" + tok + "'", line);
  fp.resize(9, '0');  // pad or truncate to nanoseconds
  const std::int64_t sec = ip.empty() ? 0 : parse_int64(ip, line);
  const std::int64_t frac = parse_int64(fp, line);
  const std::int64_t ns = sec * 1000000000LL + frac;
  return neg ? -ns : ns;
}

std::string ns_to_seconds_string(std::int64_t ns) {
  const bool neg = ns < 0;
  const std::uint64_t a = neg ? static_cast<std::uint64_t>(-(ns + 1)) + 1 : static_cast<std::uint64_t>(ns);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%s%llu.%09llu", neg ? "-" : "",
                static_cast<unsigned long long>(a / 1000000000ULL),
                static_cast<unsigned long long>(a % 1000000000ULL));
  return buf;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return in;
}

void check_monotone(const std::vector<std::int64_t>& ts, const std::string& what) {
  for (size_t k = 1; k < ts.size(); ++k)
    if (ts[k] <= ts[k - 1])
      throw NonMonotoneTimestamps(what + ": timestamp " + std::to_string(ts[k]) + " at row " + std::to_string(k) +
                                  " does not increase");
}

}  // namespace

Trajectory load_euroc_groundtruth(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  Trajectory traj;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    const std::vector<std::string> f = split(t, ',');
    if (f.size() < 8) throw ParseError("expected at least 8 comma-separated fields, got " + std::to_string(f.size()), lineno);
    const std::int64_t ts = parse_int64(trimmed(f[0]), lineno);
    const Vec3 p(parse_double(trimmed(f[1]), lineno), parse_double(trimmed(f[2]), lineno),
                 parse_double(trimmed(f[3]), lineno));
    const Vec4 q(parse_double(trimmed(f[4]), lineno), parse_double(trimmed(f[5]), lineno),
                 parse_double(trimmed(f[6]), lineno), parse_double(trimmed(f[7]), lineno));
    try {
      traj.poses.emplace_back(p, quat_normalize(q));
    } catch (const ZeroQuaternion&) {
      throw ParseError("zero-norm quaternion", lineno);
    }
    traj.timestamps_ns.push_back(ts);
  }
  if (traj.poses.empty()) throw ParseError("no data rows in '" + path + "'", lineno);
  check_monotone(traj.timestamps_ns, path);
  return traj;
}

std::vector<ImuRecord> load_euroc_imu(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<ImuRecord> out;
  std::vector<std::int64_t> ts;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    const std::vector<std::string> f = split(t, ',');
    if (f.size() < 7) throw ParseError("expected at least 7 comma-separated fields, got " + std::to_string(f.size()), lineno);
    ImuRecord r;
    r.timestamp_ns = parse_int64(trimmed(f[0]), lineno);
    r.gyro = Vec3(parse_double(trimmed(f[1]), lineno), parse_double(trimmed(f[2]), lineno),
                  parse_double(trimmed(f[3]), lineno));
    r.accel = Vec3(parse_double(trimmed(f[4]), lineno), parse_double(trimmed(f[5]), lineno),
                   parse_double(trimmed(f[6]), lineno));
    out.push_back(r);
    ts.push_back(r.timestamp_ns);
  }
  check_monotone(ts, path);
  return out;
}

Trajectory load_tum(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  Trajectory traj;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ss(t);
    std::vector<std::string> f;
    std::string tok;
    while (ss >> tok) f.push_back(tok);
    if (f.size() != 8) throw ParseError("expected 8 whitespace-separated fields, got " + std::to_string(f.size()), lineno);
    const std::int64_t ts = seconds_string_to_ns(f[0], lineno);
    const Vec3 p(parse_double(f[1], lineno), parse_double(f[2], lineno), parse_double(f[3], lineno));
    // on-disk order: qx qy qz qw
    const Vec4 q(parse_double(f[7], lineno), parse_double(f[4], lineno), parse_double(f[5], lineno),
                 parse_double(f[6], lineno));
    try {
      traj.poses.emplace_back(p, quat_normalize(q));
    } catch (const ZeroQuaternion&) {
      throw ParseError("zero-norm quaternion", lineno);
    }
    traj.timestamps_ns.push_back(ts);
  }
  check_monotone(traj.timestamps_ns, path);
  return traj;
}

void save_tum(const Trajectory& traj, const std::string& path) {
  if (traj.timestamps_ns.size() != traj.poses.size())
    throw LengthMismatch("trajectory has " + std::to_string(traj.timestamps_ns.size()) + " timestamps but " +
                         std::to_string(traj.poses.size()) + " poses");
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[360];
  for (size_t k = 0; k < traj.poses.size(); ++k) {
    const Pose& p = traj.poses[k];
    std::snprintf(buf, sizeof(buf), "%s %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  ns_to_seconds_string(traj.timestamps_ns[k]).c_str(), p.t.x(), p.t.y(), p.t.z(), p.q.x(), p.q.y(),
                  p.q.z(), p.q.w());
    out << buf;
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

void save_rpr_csv(const std::vector<RelativePose>& rel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "# dt_x,dt_y,dt_z,dq_w,dq_x,dq_y,dq_z\n";
  char buf[360];
  for (const RelativePose& d : rel) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", d.dt.x(), d.dt.y(), d.dt.z(),
                  d.dq.w(), d.dq.x(), d.dq.y(), d.dq.z());
    out << buf;
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

std::vector<RelativePose> load_rpr_csv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<RelativePose> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    const std::vector<std::string> f = split(t, ',');
    if (f.size() != 7) throw ParseError("expected 7 comma-separated fields, got " + std::to_string(f.size()), lineno);
    const Vec3 dt(parse_double(trimmed(f[0]), lineno), parse_double(trimmed(f[1]), lineno),
                  parse_double(trimmed(f[2]), lineno));
    const Vec4 dq(parse_double(trimmed(f[3]), lineno), parse_double(trimmed(f[4]), lineno),
                  parse_double(trimmed(f[5]), lineno), parse_double(trimmed(f[6]), lineno));
    try {
      out.emplace_back(dt, quat_normalize(dq));
    } catch (const ZeroQuaternion&) {
      throw ParseError("zero-norm quaternion", lineno);
    }
  }
  return out;
}

namespace {

struct Sinusoid {
  double amp = 0.0, period = 1.0, phase = 0.0;
  double eval(double t) const { return amp * std::sin(2.0 * M_PI * t / period + phase); }
  double deriv(double t) const { return amp * 2.0 * M_PI / period * std::cos(2.0 * M_PI * t / period + phase); }
};

Quat from_rpy(double roll, double pitch, double yaw) {
  return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())) * Quat(Eigen::AngleAxisd(pitch, Vec3::UnitY())) *
         Quat(Eigen::AngleAxisd(roll, Vec3::UnitX()));
}

}  // namespace

Trajectory synth_trajectory(std::uint64_t seed, int n_frames, double rate_hz, double amplitude) {
  if (n_frames < 1) throw EmptyInput("need at least one frame");
  if (!(rate_hz > 0.0)) throw DimensionMismatch("rate must be positive");
  if (amplitude < 0.0) throw DimensionMismatch("amplitude must be non-negative");

  std::mt19937_64 rng(seed);
  // Period floor keeps per-frame motion below 0.2 * amplitude at any rate.
  const double t_min = std::max(4.0, 56.0 / rate_hz);
  std::uniform_real_distribution<double> u_period(t_min, 10.0 * t_min);
  std::uniform_real_distribution<double> u_phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> u_weight(0.5, 1.0);

  Sinusoid axes[3][3];
  for (int a = 0; a < 3; ++a) {
    double w[3], wsum = 0.0;
    for (int k = 0; k < 3; ++k) {
      w[k] = u_weight(rng);
      axes[a][k].period = u_period(rng);
      axes[a][k].phase = u_phase(rng);
      wsum += w[k];
    }
    for (int k = 0; k < 3; ++k) axes[a][k].amp = amplitude * w[k] / wsum;
  }
  Sinusoid roll, pitch;
  const double rp_amp = amplitude > 0.0 ? 0.05 : 0.0;
  roll.amp = rp_amp;
  roll.period = u_period(rng);
  roll.phase = u_phase(rng);
  pitch.amp = rp_amp;
  pitch.period = u_period(rng);
  pitch.phase = u_phase(rng);

  Trajectory traj;
  traj.timestamps_ns.reserve(n_frames);
  traj.poses.reserve(n_frames);
  double yaw = 0.0, prev_raw_yaw = 0.0;
  bool have_yaw = false;
  for (int i = 0; i < n_frames; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    Vec3 p = Vec3::Zero(), v = Vec3::Zero();
    for (int a = 0; a < 3; ++a)
      for (int k = 0; k < 3; ++k) {
        p[a] += axes[a][k].eval(t);
        v[a] += axes[a][k].deriv(t);
      }
    const double speed = std::hypot(v.x(), v.y());
    if (speed > 1e-9) {
      double raw = std::atan2(v.y(), v.x());
      if (have_yaw) {
        // unwrap against the previous sample, then low-pass
        while (raw - prev_raw_yaw > M_PI) raw -= 2.0 * M_PI;
        while (raw - prev_raw_yaw < -M_PI) raw += 2.0 * M_PI;
        yaw += 0.1 * (raw - yaw);
      } else {
        yaw = raw;
        have_yaw = true;
      }
      prev_raw_yaw = raw;
    }
    traj.timestamps_ns.push_back(static_cast<std::int64_t>(std::llround(1e9 * static_cast<double>(i) / rate_hz)));
    traj.poses.emplace_back(p, from_rpy(roll.eval(t), pitch.eval(t), yaw));
  }
  return traj;
}

std::vector<Pose> simulate_apr(const Trajectory& gt, const NoiseModel& nm) {
  std::mt19937_64 rng(nm.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Pose> out;
  out.reserve(gt.size());
  for (const Pose& p : gt.poses) {
    const Vec3 nt(gauss(rng), gauss(rng), gauss(rng));
    const Vec3 nr(gauss(rng), gauss(rng), gauss(rng));
    const double scale = unif(rng) < nm.outlier_prob ? nm.outlier_scale : 1.0;
    out.emplace_back(p.t + scale * nm.sigma_t * nt, p.q * exp_so3(nm.sigma_theta * nr));
  }
  return out;
}

std::vector<RelativePose> simulate_rpr(const Trajectory& gt, const NoiseModel& nm) {
  if (gt.size() < 2) throw EmptyInput("need at least two frames for relative steps");
  std::mt19937_64 rng(nm.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<RelativePose> out;
  out.reserve(gt.size() - 1);
  for (size_t k = 0; k + 1 < gt.size(); ++k) {
    const RelativePose d = relative_between(gt.poses[k], gt.poses[k + 1]);
    const Vec3 nt(gauss(rng), gauss(rng), gauss(rng));
    const Vec3 nr(gauss(rng), gauss(rng), gauss(rng));
    out.emplace_back(d.dt + nm.sigma_t * nt + nm.bias_t, d.dq * exp_so3(nm.sigma_theta * nr));
  }
  return out;
}

PoseStream make_pose_stream(std::vector<Pose> poses, const NoiseModel& nm) {
  PoseStream s;
  s.present.assign(poses.size(), true);
  s.poses = std::move(poses);
  s.sigma_t = nm.sigma_t;
  s.sigma_theta = nm.sigma_theta;
  return s;
}

PoseStream corrupt_stream(const PoseStream& stream, const CorruptionSpec& spec) {
  if (spec.level < 0.0 || spec.level > 1.0)
    throw Error("corruption level must be in [0, 1], got " + std::to_string(spec.level));
  if (spec.span_begin > spec.span_end || spec.span_end > stream.poses.size())
    throw SpanOutOfRange("span [" + std::to_string(spec.span_begin) + ", " + std::to_string(spec.span_end) +
                         ") exceeds stream of " + std::to_string(stream.poses.size()) + " frames");
  PoseStream out = stream;
  if (spec.level == 0.0) return out;
  const std::size_t span = spec.span_end - spec.span_begin;
  if (span == 0) return out;

  std::mt19937_64 rng(spec.seed);
  switch (spec.kind) {
    case CorruptionKind::NoiseBurst: {
      // Extra noise so the in-span total std is sigma * (1 + 99 * level).
      const double f = 1.0 + 99.0 * spec.level;
      const double extra = std::sqrt(f * f - 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (std::size_t k = spec.span_begin; k < spec.span_end; ++k) {
        const Vec3 nt(gauss(rng), gauss(rng), gauss(rng));
        const Vec3 nr(gauss(rng), gauss(rng), gauss(rng));
        out.poses[k] = Pose(out.poses[k].t + extra * stream.sigma_t * nt,
                            out.poses[k].q * exp_so3(extra * stream.sigma_theta * nr));
      }
      break;
    }
    case CorruptionKind::Freeze: {
      if (spec.span_begin == 0) throw SpanOutOfRange("freeze span must start after frame 0");
      const std::size_t m = static_cast<std::size_t>(std::llround(spec.level * static_cast<double>(span)));
      const Pose held = stream.poses[spec.span_begin - 1];
      for (std::size_t k = spec.span_begin; k < spec.span_begin + m; ++k) out.poses[k] = held;
      break;
    }
    case CorruptionKind::Dropout: {
      const std::size_t m = static_cast<std::size_t>(std::llround(spec.level * static_cast<double>(span)));
      std::vector<std::size_t> idx(span);
      std::iota(idx.begin(), idx.end(), spec.span_begin);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t k = 0; k < m; ++k) out.present[idx[k]] = false;
      break;
    }
  }
  return out;
}

}  // namespace vifuse
