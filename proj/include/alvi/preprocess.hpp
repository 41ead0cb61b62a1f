#pragma once

// Stateless transforms from raw recordings to model-ready window pairs.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "alvi/error.hpp"
#include "alvi/pose_types.hpp"
#include "alvi/quat.hpp"
#include "alvi/session.hpp"
#include "alvi/skeleton.hpp"
#include "alvi/stream_core.hpp"

namespace alvi {

/// Fixed 8-bit device bounds.
inline constexpr double kEmgLo = -128.0;
inline constexpr double kEmgHi = 127.0;

/// Clip to [lo, hi] then map affinely onto [-1, 1].
template <class Derived>
auto minmax_normalize(const Eigen::MatrixBase<Derived>& raw, double lo = kEmgLo, double hi = kEmgHi) {
  using S = typename Derived::Scalar;
  require(lo < hi, ErrorCode::invalid_argument, "minmax_normalize: lo must be below hi");
  const S l = static_cast<S>(lo), h = static_cast<S>(hi);
  Mat<S> out = raw.derived().cwiseMax(l).cwiseMin(h);
  out = ((S(2) * out.array() - (l + h)) / (h - l)).matrix();
  return out;
}

inline double minmax_normalize(double x, double lo = kEmgLo, double hi = kEmgHi) {
  require(lo < hi, ErrorCode::invalid_argument, "minmax_normalize: lo must be below hi");
  x = std::clamp(x, lo, hi);
  return (2.0 * x - (lo + hi)) / (hi - lo);
}

/// Express every orientation relative to the palm; the palm entry becomes the identity.
inline QuatPose relative_to_palm(const QuatPose& world) {
  QuatPose unit;
  for (int j = 0; j < kJoints; ++j) {
    const double n = world[j].norm();
    require(std::isfinite(n) && n > 1e-6, ErrorCode::invalid_argument, "relative_to_palm: near-zero quaternion at joint " + std::to_string(j));
    unit[j] = {world[j].w / n, world[j].x / n, world[j].y / n, world[j].z / n};
  }
  const Quat inv_palm = unit[0].conjugate();
  QuatPose rel;
  for (int j = 0; j < kJoints; ++j) rel[j] = (inv_palm * unit[j]).normalized();
  rel[0] = Quat::identity();
  return rel;
}

/// Four angles per finger via twist-swing about each segment's flexion axis.
inline PoseFrame quat_to_angles(const QuatPose& pose) {
  PoseFrame a{};
  for (int f = 0; f < kFingers; ++f) {
    const Quat base = pose[joint_index(f, 0)];
    const Quat mid = pose[joint_index(f, 1)];
    const Quat tip = pose[joint_index(f, 2)];
    const Quat local_base = finger_rest()[f].conjugate() * pose[0].conjugate() * base;
    const TwistSwing ts = twist_swing(local_base, 1.0, 0.0, 0.0);
    a[angle_index(f, base_flexion)] = signed_angle(ts.twist, 1.0, 0.0, 0.0);
    a[angle_index(f, base_abduction)] = signed_angle(ts.swing, 0.0, 0.0, 1.0);
    a[angle_index(f, mid_flexion)] = signed_angle(twist_swing(base.conjugate() * mid, 1.0, 0.0, 0.0).twist, 1.0, 0.0, 0.0);
    a[angle_index(f, tip_flexion)] = signed_angle(twist_swing(mid.conjugate() * tip, 1.0, 0.0, 0.0).twist, 1.0, 0.0, 0.0);
  }
  return a;
}

/// Left-hand electrode order to right-hand order: channel i -> (8 - i) mod 8.
template <class S>
Mat<S> mirror_channels(const Mat<S>& emg) {
  require(emg.rows() == kEmgChannels, ErrorCode::shape_mismatch, "mirror_channels: expected 8 channel rows");
  Mat<S> out(emg.rows(), emg.cols());
  for (int i = 0; i < kEmgChannels; ++i) out.row((kEmgChannels - i) % kEmgChannels) = emg.row(i);
  return out;
}

/// Value of a uniform track at time t by linear interpolation, holding the end values outside.
inline void interpolate_track(const AlignedTrack& track, Timestamp t, double* out) {
  const Eigen::Index n = track.size();
  const double pos = (t - track.t0) * track.rate;
  const Eigen::Index ch = track.values.cols();
  if (pos <= 0.0 || n == 1) {
    for (Eigen::Index c = 0; c < ch; ++c) out[c] = track.values(0, c);
    return;
  }
  if (pos >= static_cast<double>(n - 1)) {
    for (Eigen::Index c = 0; c < ch; ++c) out[c] = track.values(n - 1, c);
    return;
  }
  auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const double w = pos - static_cast<double>(lo);
  if (w < 1e-9) {
    for (Eigen::Index c = 0; c < ch; ++c) out[c] = track.values(lo, c);
    return;
  }
  for (Eigen::Index c = 0; c < ch; ++c) {
    const double a = track.values(lo, c), b = track.values(lo + 1, c);
    out[c] = a + w * (b - a);
  }
}

/// Linear resampling of a uniform track onto a new rate over the same interval.
inline AlignedTrack resample_angles(const AlignedTrack& track, double new_rate) {
  require(track.size() >= 1, ErrorCode::invalid_argument, "resample_angles: empty track");
  require(track.size() >= 2, ErrorCode::invalid_argument, "resample_angles: need at least two samples");
  require(track.rate > 0.0 && new_rate > 0.0, ErrorCode::invalid_argument, "resample_angles: rates must be positive");
  const double span = static_cast<double>(track.size() - 1) / track.rate;
  const auto n = static_cast<Eigen::Index>(std::floor(span * new_rate + 1e-9)) + 1;
  AlignedTrack out;
  out.t0 = track.t0;
  out.rate = new_rate;
  out.sources = track.sources;
  out.values.resize(n, track.values.cols());
  for (Eigen::Index k = 0; k < n; ++k) interpolate_track(track, track.t0 + static_cast<double>(k) / new_rate, out.values.row(k).data());
  return out;
}

/// Per-frame angles of a world-orientation pose track.
inline AlignedTrack pose_angles(const AlignedTrack& pose_quat) {
  require(pose_quat.values.cols() == 4 * kJoints, ErrorCode::shape_mismatch, "pose track must have 84 channels");
  AlignedTrack out;
  out.t0 = pose_quat.t0;
  out.rate = pose_quat.rate;
  out.sources = pose_quat.sources;
  out.values.resize(pose_quat.size(), kPoseDims);
  for (Eigen::Index i = 0; i < pose_quat.size(); ++i) {
    const PoseFrame a = quat_to_angles(relative_to_palm(read_pose_row(pose_quat.values.row(i).data())));
    for (int k = 0; k < kPoseDims; ++k) out.values(i, k) = a[k];
  }
  return out;
}

inline std::size_t window_count(Eigen::Index n_emg, std::size_t stride) {
  if (n_emg < kWindowLen) return 0;
  return static_cast<std::size_t>(n_emg - kWindowLen) / stride + 1;
}

/// Target frame times: 32 frames at 25 Hz, the last one on the window end.
inline std::vector<Timestamp> target_times(Timestamp t_end) {
  return window_grid(t_end, kTargetFrames, kTargetRate);
}

/// EMG rows [n x 8] -> normalized window [8 x 256] ending at row `last`.
inline MatF emg_window(const AlignedTrack& emg, Eigen::Index last, bool left_hand = false) {
  require(emg.values.cols() == kEmgChannels, ErrorCode::shape_mismatch, "EMG track must have 8 channels");
  require(last >= kWindowLen - 1 && last < emg.size(), ErrorCode::insufficient_history, "window exceeds EMG track");
  MatF w = minmax_normalize(emg.values.middleRows(last - (kWindowLen - 1), kWindowLen)).transpose().cast<float>();
  return left_hand ? mirror_channels(w) : w;
}

/// Window pairs every `stride` EMG samples, starting with the first full window.
inline std::vector<WindowPair> make_windows(const SessionRecording& s, std::size_t stride) {
  require(stride >= 1, ErrorCode::invalid_argument, "stride must be positive");
  require(s.emg.rate == kEmgRate, ErrorCode::invalid_argument, "EMG track must be 200 Hz");
  require(s.emg.size() >= kWindowLen, ErrorCode::insufficient_history, "session shorter than one 1.28 s window");
  const AlignedTrack angles = pose_angles(s.pose_quat);
  const bool left = s.hand == Hand::left;
  const std::size_t count = window_count(s.emg.size(), stride);
  std::vector<WindowPair> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto last = static_cast<Eigen::Index>(kWindowLen - 1 + k * stride);
    WindowPair p;
    p.t_end = s.emg.time_at(last);
    p.emg = emg_window(s.emg, last, left);
    p.target.resize(kTargetFrames, kPoseDims);
    const auto times = target_times(p.t_end);
    double row[kPoseDims];
    for (int j = 0; j < kTargetFrames; ++j) {
      interpolate_track(angles, times[static_cast<std::size_t>(j)], row);
      for (int c = 0; c < kPoseDims; ++c) p.target(j, c) = static_cast<float>(row[c]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace alvi
