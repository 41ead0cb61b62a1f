#pragma once

// Canonical hand skeleton shared by the pose generator and the angle extractor.
//
// Joint order: palm, then for each finger (thumb, index, middle, ring, little)
// the base, mid, tip and end segments. Segment orientations are expressed in
// the world frame; each finger's base hangs off the palm through a fixed rest
// rotation. Flexion is a rotation about the segment's local +X axis (positive
// toward the palm); base abduction is a rotation about the local +Z axis
// applied before flexion.

#include <array>

#include "alvi/pose_types.hpp"
#include "alvi/quat.hpp"

namespace alvi {

inline constexpr int kFingers = 5;
inline constexpr int kSegmentsPerFinger = 4;

using QuatPose = std::array<Quat, kJoints>;

enum AngleSlot : int { base_flexion = 0, base_abduction = 1, mid_flexion = 2, tip_flexion = 3 };

inline constexpr int joint_index(int finger, int segment) { return 1 + finger * kSegmentsPerFinger + segment; }
inline constexpr int angle_index(int finger, int slot) { return finger * 4 + slot; }

/// Palm-frame rest orientation of each finger's base segment.
inline const std::array<Quat, kFingers>& finger_rest() {
  static const std::array<Quat, kFingers> rest = {
      Quat::rot_z(0.8) * Quat::rot_y(-0.6),  // thumb
      Quat::rot_z(0.12),
      Quat::identity(),
      Quat::rot_z(-0.1),
      Quat::rot_z(-0.22),
  };
  return rest;
}

/// World orientations of all 21 segments for the given angles and palm orientation.
inline QuatPose angles_to_quat(const PoseFrame& angles, const Quat& palm = Quat::identity()) {
  QuatPose q;
  q[0] = palm;
  for (int f = 0; f < kFingers; ++f) {
    const Quat base = palm * finger_rest()[f] * Quat::rot_z(angles[angle_index(f, base_abduction)]) *
                      Quat::rot_x(angles[angle_index(f, base_flexion)]);
    const Quat mid = base * Quat::rot_x(angles[angle_index(f, mid_flexion)]);
    const Quat tip = mid * Quat::rot_x(angles[angle_index(f, tip_flexion)]);
    q[joint_index(f, 0)] = base;
    q[joint_index(f, 1)] = mid;
    q[joint_index(f, 2)] = tip;
    q[joint_index(f, 3)] = tip;
  }
  return q;
}

inline void write_pose_row(const QuatPose& q, double* row) {
  for (int j = 0; j < kJoints; ++j) {
    row[4 * j + 0] = q[j].w;
    row[4 * j + 1] = q[j].x;
    row[4 * j + 2] = q[j].y;
    row[4 * j + 3] = q[j].z;
  }
}

inline QuatPose read_pose_row(const double* row) {
  QuatPose q;
  for (int j = 0; j < kJoints; ++j) q[j] = {row[4 * j], row[4 * j + 1], row[4 * j + 2], row[4 * j + 3]};
  return q;
}

}  // namespace alvi
