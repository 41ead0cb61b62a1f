#pragma once

#include <array>

#include "alvi/stream_core.hpp"
#include "alvi/tensor.hpp"

namespace alvi {

inline constexpr int kEmgChannels = 8;
inline constexpr int kWindowLen = 256;
inline constexpr int kTargetFrames = 32;
inline constexpr int kPoseDims = 20;
inline constexpr int kJoints = 21;
inline constexpr double kEmgRate = 200.0;
inline constexpr double kPoseRate = 40.0;
inline constexpr double kTargetRate = 25.0;

/// 20 joint angles in radians: [base-flexion, base-abduction, mid-flexion, tip-flexion]
/// for thumb, index, middle, ring, little.
using PoseFrame = std::array<double, kPoseDims>;

/// One training example: EMG [8 x 256] in [-1, 1] and the pose track [32 x 20] over the same span.
struct WindowPair {
  MatF emg;
  MatF target;
  Timestamp t_end = 0.0;

  bool well_formed() const {
    return emg.rows() == kEmgChannels && emg.cols() == kWindowLen && target.rows() == kTargetFrames &&
           target.cols() == kPoseDims && emg.allFinite() && target.allFinite() &&
           emg.minCoeff() >= -1.0f && emg.maxCoeff() <= 1.0f;
  }

  bool operator==(const WindowPair& o) const {
    return t_end == o.t_end && emg.rows() == o.emg.rows() && emg.cols() == o.emg.cols() &&
           target.rows() == o.target.rows() && target.cols() == o.target.cols() &&
           (emg.array() == o.emg.array()).all() && (target.array() == o.target.array()).all();
  }
};

}  // namespace alvi
