#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alvi/stream_core.hpp"

namespace alvi {

enum class Hand : std::uint8_t { right = 0, left = 1 };

struct Annotation {
  int gesture_id = 0;
  Timestamp t_start = 0.0;
  Timestamp t_end = 0.0;
  bool operator==(const Annotation&) const = default;
};

/// A synchronized recording: EMG at 200 Hz, world-frame segment orientations
/// at 40 Hz, and the generator's own angle track for ground truth.
struct SessionRecording {
  AlignedTrack emg;           // [n x 8]
  AlignedTrack pose_quat;     // [m x 84], 21 quaternions (w, x, y, z)
  AlignedTrack truth_angles;  // [m x 20]; empty when not generated
  std::vector<Annotation> annotations;
  std::uint64_t seed = 0;
  std::string model_hash;
  Hand hand = Hand::right;

  double duration() const { return emg.duration(); }
};

// Stream ids used in session files and on the wire.
inline constexpr std::uint16_t kEmgStreamId = 1;
inline constexpr std::uint16_t kPoseQuatStreamId = 2;
inline constexpr std::uint16_t kTruthAnglesStreamId = 3;
inline constexpr std::uint16_t kPoseOutStreamId = 4;

}  // namespace alvi
