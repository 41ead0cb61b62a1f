#pragma once

// Seeded stand-in for the VR recording rig: procedural gesture trajectories
// and EMG whose mapping from pose is known exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "alvi/error.hpp"
#include "alvi/pose_types.hpp"
#include "alvi/session.hpp"
#include "alvi/skeleton.hpp"
#include "alvi/stream_core.hpp"

namespace alvi {

inline constexpr int kGestureCount = 72;
inline constexpr int kDynamicGestures = 45;
inline constexpr double kAngleMin = -0.26;
inline constexpr double kAngleMax = 1.92;
inline constexpr double kStaticRampSeconds = 0.5;
inline constexpr double kRestGapSeconds = 1.0;

enum class GestureKind : std::uint8_t { dynamic_motion = 0, static_hold = 1 };

struct GestureSpec {
  int gesture_id = 0;
  GestureKind kind = GestureKind::dynamic_motion;
  std::uint64_t param_seed = 0;
};

struct ScriptEntry {
  GestureSpec spec;
  double duration = 60.0;
};

using GestureScript = std::vector<ScriptEntry>;

/// Gestures 0..44 are dynamic, 45..71 static.
inline GestureSpec standard_gesture(int id) {
  require(id >= 0 && id < kGestureCount, ErrorCode::invalid_argument, "unknown gesture id " + std::to_string(id));
  return {id, id < kDynamicGestures ? GestureKind::dynamic_motion : GestureKind::static_hold,
          0x5EED0000ULL + static_cast<std::uint64_t>(id) * 7919ULL};
}

/// The first `count` standard gestures, each held for `duration` seconds.
inline GestureScript standard_script(int count = kGestureCount, double duration = 60.0) {
  require(count >= 1 && count <= kGestureCount, ErrorCode::invalid_argument, "gesture count must be in 1..72");
  require(duration > 0.0, ErrorCode::invalid_argument, "gesture duration must be positive");
  GestureScript s;
  for (int i = 0; i < count; ++i) s.push_back({standard_gesture(i), duration});
  return s;
}

/// Script that interleaves dynamic and static gestures, `count` entries.
inline GestureScript mixed_script(int count, double duration) {
  require(count >= 1 && count <= kGestureCount, ErrorCode::invalid_argument, "gesture count must be in 1..72");
  GestureScript s;
  int dyn = 0, stat = kDynamicGestures;
  for (int i = 0; i < count; ++i) {
    const bool take_static = (i % 3 == 2 && stat < kGestureCount) || dyn >= kDynamicGestures;
    s.push_back({standard_gesture(take_static ? stat++ : dyn++), duration});
  }
  return s;
}

namespace synth_detail {

inline bool is_abduction(int k) { return k % 4 == base_abduction; }

struct Harmonic {
  int order;
  double amplitude;
  double phase;
};

struct JointMotion {
  double center = 0.0;
  std::vector<Harmonic> harmonics;
};

struct DynamicPlan {
  double period = 1.0;
  std::array<JointMotion, kPoseDims> joints;
};

inline DynamicPlan dynamic_plan(const GestureSpec& spec) {
  std::mt19937_64 rng(spec.param_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DynamicPlan plan;
  plan.period = 1.0 + 3.0 * u(rng);
  std::array<bool, kFingers> active{};
  for (auto& a : active) a = u(rng) < 0.6;
  if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) active[static_cast<std::size_t>(spec.gesture_id % kFingers)] = true;
  for (int k = 0; k < kPoseDims; ++k) {
    JointMotion& jm = plan.joints[static_cast<std::size_t>(k)];
    const bool abd = is_abduction(k);
    jm.center = abd ? -0.08 + 0.16 * u(rng) : 0.3 + 0.9 * u(rng);
    if (!active[static_cast<std::size_t>(k / 4)]) continue;
    const int n = 1 + static_cast<int>(u(rng) * 3.0) % 3;
    const double budget = abd ? 0.15 : std::min({0.6, jm.center - kAngleMin, kAngleMax - jm.center});
    std::vector<double> w(static_cast<std::size_t>(n));
    double wsum = 0.0;
    for (auto& x : w) wsum += (x = 0.2 + u(rng));
    for (int h = 0; h < n; ++h)
      jm.harmonics.push_back({h + 1, budget * w[static_cast<std::size_t>(h)] / wsum, 2.0 * std::numbers::pi * u(rng)});
  }
  return plan;
}

inline PoseFrame static_target(const GestureSpec& spec) {
  std::mt19937_64 rng(spec.param_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PoseFrame t{};
  for (int k = 0; k < kPoseDims; ++k) t[static_cast<std::size_t>(k)] = is_abduction(k) ? -0.2 + 0.4 * u(rng) : 0.05 + 1.55 * u(rng);
  return t;
}

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace synth_detail

/// Fundamental period of a dynamic gesture (seconds).
inline double gesture_period(const GestureSpec& spec) { return synth_detail::dynamic_plan(spec).period; }

/// Pose at time t (seconds from gesture start).
inline PoseFrame gesture_pose(const GestureSpec& spec, double t) {
  require(spec.gesture_id >= 0 && spec.gesture_id < kGestureCount, ErrorCode::invalid_argument,
          "unknown gesture id " + std::to_string(spec.gesture_id));
  PoseFrame p{};
  if (spec.kind == GestureKind::static_hold) {
    const PoseFrame target = synth_detail::static_target(spec);
    const double s = synth_detail::smoothstep(t / kStaticRampSeconds);
    for (int k = 0; k < kPoseDims; ++k) p[static_cast<std::size_t>(k)] = s * target[static_cast<std::size_t>(k)];
    return p;
  }
  const auto plan = synth_detail::dynamic_plan(spec);
  const double w0 = 2.0 * std::numbers::pi / plan.period;
  for (int k = 0; k < kPoseDims; ++k) {
    const auto& jm = plan.joints[static_cast<std::size_t>(k)];
    double v = jm.center;
    for (const auto& h : jm.harmonics) v += h.amplitude * std::sin(w0 * h.order * t + h.phase);
    p[static_cast<std::size_t>(k)] = std::clamp(v, kAngleMin, kAngleMax);
  }
  return p;
}

/// Angle track [n x 20] sampled at i / rate for i < floor(duration * rate).
inline MatD gesture_trajectory(const GestureSpec& spec, double duration, double rate) {
  require(duration > 0.0 && rate > 0.0, ErrorCode::invalid_argument, "duration and rate must be positive");
  const auto n = static_cast<Eigen::Index>(std::floor(duration * rate + 1e-9));
  MatD out(n, kPoseDims);
  if (spec.kind == GestureKind::static_hold) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const PoseFrame p = gesture_pose(spec, static_cast<double>(i) / rate);
      for (int k = 0; k < kPoseDims; ++k) out(i, k) = p[static_cast<std::size_t>(k)];
    }
    return out;
  }
  const auto plan = synth_detail::dynamic_plan(spec);
  const double w0 = 2.0 * std::numbers::pi / plan.period;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    for (int k = 0; k < kPoseDims; ++k) {
      const auto& jm = plan.joints[static_cast<std::size_t>(k)];
      double v = jm.center;
      for (const auto& h : jm.harmonics) v += h.amplitude * std::sin(w0 * h.order * t + h.phase);
      out(i, k) = std::clamp(v, kAngleMin, kAngleMax);
    }
  }
  return out;
}

/// Linear mixing from joint displacement and velocity to eight muscle activations.
struct MuscleModel {
  MatD w_pos;  // [8 x 20]
  MatD w_vel;  // [8 x 20]
  PoseFrame rest_pose{};
  double noise_floor = 1.0;
  double bandwidth = 40.0;

  void validate() const {
    require(w_pos.rows() == kEmgChannels && w_pos.cols() == kPoseDims && w_vel.rows() == kEmgChannels &&
                w_vel.cols() == kPoseDims,
            ErrorCode::shape_mismatch, "muscle model matrices must be 8x20");
    require(w_pos.allFinite() && w_vel.allFinite(), ErrorCode::non_finite, "muscle model has non-finite weights");
    require(noise_floor >= 0.0 && bandwidth > 0.0, ErrorCode::invalid_argument, "noise_floor >= 0 and bandwidth > 0 required");
  }

  /// FNV-1a over the raw parameter bytes.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    mix(w_pos.data(), sizeof(double) * static_cast<std::size_t>(w_pos.size()));
    mix(w_vel.data(), sizeof(double) * static_cast<std::size_t>(w_vel.size()));
    mix(rest_pose.data(), sizeof(double) * rest_pose.size());
    mix(&noise_floor, sizeof noise_floor);
    mix(&bandwidth, sizeof bandwidth);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

/// Weights drawn once from a seeded standard normal, scaled by 10; rest pose zero.
inline MuscleModel default_muscle_model(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MuscleModel m;
  m.w_pos.resize(kEmgChannels, kPoseDims);
  m.w_vel.resize(kEmgChannels, kPoseDims);
  for (Eigen::Index i = 0; i < m.w_pos.size(); ++i) m.w_pos.data()[i] = 10.0 * n(rng);
  for (Eigen::Index i = 0; i < m.w_vel.size(); ++i) m.w_vel.data()[i] = 10.0 * n(rng);
  return m;
}

struct EmgSynthOptions {
  bool clip_and_quantize = true;  // 8-bit device output
};

/// Rectified activation per pose frame [n x 8].
inline MatD muscle_activation(const MatD& pose, double rate, const MuscleModel& model) {
  model.validate();
  require(pose.cols() == kPoseDims, ErrorCode::shape_mismatch, "pose track must have 20 columns");
  require(pose.allFinite(), ErrorCode::non_finite, "pose track has non-finite angles");
  const Eigen::Index n = pose.rows();
  MatD vel = MatD::Zero(n, kPoseDims);
  if (n >= 2) {
    vel.row(0) = (pose.row(1) - pose.row(0)) * rate;
    vel.row(n - 1) = (pose.row(n - 1) - pose.row(n - 2)) * rate;
    for (Eigen::Index i = 1; i + 1 < n; ++i) vel.row(i) = (pose.row(i + 1) - pose.row(i - 1)) * (0.5 * rate);
  }
  Eigen::RowVectorXd rest(kPoseDims);
  for (int k = 0; k < kPoseDims; ++k) rest(k) = model.rest_pose[static_cast<std::size_t>(k)];
  MatD disp = pose.rowwise() - rest;
  MatD act = disp * model.w_pos.transpose() + vel * model.w_vel.transpose();
  return act.cwiseMax(0.0);
}

/// EMG at 200 Hz from a 40 Hz angle track: activation-modulated band-limited
/// noise plus a white floor. Five EMG samples per pose frame.
inline MatD synth_emg(const MatD& pose, const MuscleModel& model, std::uint64_t seed, const EmgSynthOptions& opt = {}) {
  const MatD act = muscle_activation(pose, kPoseRate, model);
  const Eigen::Index n_pose = pose.rows();
  const auto up = static_cast<Eigen::Index>(kEmgRate / kPoseRate);
  const Eigen::Index n = n_pose * up;
  MatD emg(n, kEmgChannels);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a = std::exp(-2.0 * std::numbers::pi * model.bandwidth / kEmgRate);
  const double gain = std::sqrt((1.0 + a) / (1.0 - a));
  std::array<double, kEmgChannels> state{};
  for (auto& s : state) s = normal(rng) / gain;

  for (Eigen::Index j = 0; j < n; ++j) {
    const double pos = static_cast<double>(j) / static_cast<double>(up);
    const auto lo = std::min(static_cast<Eigen::Index>(pos), n_pose - 1);
    const auto hi = std::min(lo + 1, n_pose - 1);
    const double w = std::min(pos - static_cast<double>(lo), 1.0);
    for (int c = 0; c < kEmgChannels; ++c) {
      const double env = act(lo, c) + w * (act(hi, c) - act(lo, c));
      auto& s = state[static_cast<std::size_t>(c)];
      s = a * s + (1.0 - a) * normal(rng);
      double v = env * gain * s + model.noise_floor * normal(rng);
      if (opt.clip_and_quantize) v = std::round(std::clamp(v, -128.0, 127.0));
      emg(j, c) = v;
    }
  }
  return emg;
}

/// Wrist orientation over time; depends only on t so pose tracks are seed-independent.
inline Quat wrist_orientation(double t) {
  return Quat::rot_y(0.3 * std::sin(2.0 * std::numbers::pi * t / 7.3)) *
         Quat::rot_x(0.2 * std::sin(2.0 * std::numbers::pi * t / 5.1 + 1.0));
}

/// Concatenate the script's gestures with 1 s rest gaps (none before the
/// first), build world orientations and synthesize EMG.
inline SessionRecording generate_session(const GestureScript& script, const MuscleModel& model, std::uint64_t seed) {
  require(!script.empty(), ErrorCode::invalid_argument, "generate_session: empty script");
  model.validate();
  const auto gap = static_cast<Eigen::Index>(std::lround(kRestGapSeconds * kPoseRate));

  std::vector<MatD> parts;
  std::vector<Annotation> annotations;
  Eigen::Index total = 0;
  for (std::size_t g = 0; g < script.size(); ++g) {
    require(script[g].duration > 0.0, ErrorCode::invalid_argument, "gesture durations must be positive");
    MatD traj = gesture_trajectory(script[g].spec, script[g].duration, kPoseRate);
    if (g > 0) {
      const MatD& prev = parts.back();
      MatD blend(gap, kPoseDims);
      for (Eigen::Index k = 0; k < gap; ++k) {
        const double u = static_cast<double>(k + 1) / static_cast<double>(gap + 1);
        if (u < 0.5)
          blend.row(k) = prev.row(prev.rows() - 1) * (1.0 - synth_detail::smoothstep(2.0 * u));
        else
          blend.row(k) = traj.row(0) * synth_detail::smoothstep(2.0 * u - 1.0);
      }
      total += gap;
      parts.push_back(std::move(blend));
    }
    const double t_start = static_cast<double>(total) / kPoseRate;
    annotations.push_back({script[g].spec.gesture_id, t_start, t_start + static_cast<double>(traj.rows()) / kPoseRate});
    total += traj.rows();
    parts.push_back(std::move(traj));
  }

  MatD angles(total, kPoseDims);
  Eigen::Index row = 0;
  for (const auto& p : parts) {
    angles.middleRows(row, p.rows()) = p;
    row += p.rows();
  }

  SessionRecording s;
  s.seed = seed;
  s.model_hash = model.hash();
  s.annotations = std::move(annotations);

  s.truth_angles.t0 = 0.0;
  s.truth_angles.rate = kPoseRate;
  s.truth_angles.sources = {kTruthAnglesStreamId};
  s.truth_angles.values = angles;

  s.pose_quat.t0 = 0.0;
  s.pose_quat.rate = kPoseRate;
  s.pose_quat.sources = {kPoseQuatStreamId};
  s.pose_quat.values.resize(total, 4 * kJoints);
  for (Eigen::Index i = 0; i < total; ++i) {
    PoseFrame a;
    for (int k = 0; k < kPoseDims; ++k) a[static_cast<std::size_t>(k)] = angles(i, k);
    write_pose_row(angles_to_quat(a, wrist_orientation(static_cast<double>(i) / kPoseRate)), s.pose_quat.values.row(i).data());
  }

  s.emg.t0 = 0.0;
  s.emg.rate = kEmgRate;
  s.emg.sources = {kEmgStreamId};
  s.emg.values = synth_emg(angles, model, seed);
  return s;
}

}  // namespace alvi
