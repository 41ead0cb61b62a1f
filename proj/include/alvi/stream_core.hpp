#pragma once

// Timestamped multi-channel streams on a single session clock, and the
// buffer that aligns them onto shared sampling grids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "alvi/error.hpp"
#include "alvi/tensor.hpp"

namespace alvi {

/// Seconds since session start.
using Timestamp = double;

enum class StreamKind : std::uint8_t { emg = 0, pose_quat = 1, pose_angles = 2 };

inline int expected_channels(StreamKind k) {
  switch (k) {
    case StreamKind::emg: return 8;
    case StreamKind::pose_quat: return 84;
    case StreamKind::pose_angles: return 20;
  }
  return 0;
}

inline const char* to_string(StreamKind k) {
  switch (k) {
    case StreamKind::emg: return "emg";
    case StreamKind::pose_quat: return "pose_quat";
    case StreamKind::pose_angles: return "pose_angles";
  }
  return "?";
}

inline StreamKind stream_kind_from_string(const std::string& s) {
  if (s == "emg") return StreamKind::emg;
  if (s == "pose_quat") return StreamKind::pose_quat;
  if (s == "pose_angles") return StreamKind::pose_angles;
  fail(ErrorCode::invalid_argument, "unknown stream kind '" + s + "'");
}

struct StreamInfo {
  std::uint16_t stream_id = 0;
  std::string name;
  int channel_count = 0;
  double nominal_rate = 0.0;
  StreamKind kind = StreamKind::emg;

  void validate() const {
    require(channel_count > 0, ErrorCode::invalid_argument, "channel_count must be positive");
    require(nominal_rate > 0.0, ErrorCode::invalid_argument, "nominal_rate must be positive");
    require(channel_count == expected_channels(kind), ErrorCode::invalid_argument,
            std::string("channel_count does not match kind ") + to_string(kind));
  }
};

/// A block of consecutive samples on one stream; sample i is at t0 + i / rate.
struct SampleChunk {
  std::uint16_t stream_id = 0;
  Timestamp t0 = 0.0;
  float rate = 0.0f;
  MatF samples;  // [n_samples x channel_count]

  Eigen::Index n_samples() const { return samples.rows(); }
  Eigen::Index channel_count() const { return samples.cols(); }
  double duration() const { return static_cast<double>(samples.rows()) / rate; }
  Timestamp t_end() const { return t0 + duration(); }

  bool operator==(const SampleChunk& o) const {
    return stream_id == o.stream_id && t0 == o.t0 && rate == o.rate &&
           samples.rows() == o.samples.rows() && samples.cols() == o.samples.cols() &&
           (samples.array() == o.samples.array()).all();
  }
};

/// Samples on a uniform grid t0 + i / rate with no gaps.
struct AlignedTrack {
  Timestamp t0 = 0.0;
  double rate = 0.0;
  MatD values;  // [n x channels]
  std::vector<std::uint16_t> sources;

  Eigen::Index size() const { return values.rows(); }
  Timestamp time_at(Eigen::Index i) const { return t0 + static_cast<double>(i) / rate; }
  double duration() const { return static_cast<double>(values.rows()) / rate; }
};

struct PushResult {
  bool accepted = false;
  std::string diagnostic;
  explicit operator bool() const { return accepted; }
};

/// Uniform grid of n timestamps ending at t_end with the given rate.
inline std::vector<Timestamp> window_grid(Timestamp t_end, std::size_t n, double rate) {
  std::vector<Timestamp> ts(n);
  for (std::size_t k = 0; k < n; ++k) ts[k] = t_end - static_cast<double>(n - 1 - k) / rate;
  return ts;
}

/// Holds recent samples for a set of registered streams.
///
/// One writer per stream and any number of readers. Readers take a shared lock
/// so every read sees whole chunks only.
class StreamBuffer {
 public:
  static constexpr double kTimeTolerance = 1e-9;

  explicit StreamBuffer(double horizon_s = 120.0) : horizon_(horizon_s) {
    require(horizon_s > 0.0, ErrorCode::invalid_argument, "horizon must be positive");
  }

  void register_stream(const StreamInfo& info) {
    info.validate();
    std::unique_lock lock(mu_);
    require(!streams_.count(info.stream_id), ErrorCode::invalid_argument,
            "stream id " + std::to_string(info.stream_id) + " already registered");
    streams_[info.stream_id].info = info;
  }

  bool has_stream(std::uint16_t id) const {
    std::shared_lock lock(mu_);
    return streams_.count(id) != 0;
  }

  StreamInfo info(std::uint16_t id) const {
    std::shared_lock lock(mu_);
    return stream(id).info;
  }

  double horizon() const { return horizon_; }

  PushResult push_chunk(const SampleChunk& chunk) {
    std::unique_lock lock(mu_);
    auto it = streams_.find(chunk.stream_id);
    if (it == streams_.end())
      return {false, "unknown stream id " + std::to_string(chunk.stream_id)};
    Stream& s = it->second;
    if (chunk.samples.rows() < 1) return {false, "chunk has no samples"};
    if (chunk.samples.cols() != s.info.channel_count)
      return {false, "chunk has " + std::to_string(chunk.samples.cols()) + " channels, stream has " +
                         std::to_string(s.info.channel_count)};
    if (!(chunk.rate > 0.0f) || !std::isfinite(chunk.t0) || chunk.t0 < 0.0)
      return {false, "chunk rate/t0 invalid"};
    if (s.has_data && chunk.t0 + kTimeTolerance < s.end)
      return {false, "non-monotonic timestamp: chunk t0 " + std::to_string(chunk.t0) +
                         " precedes stream end " + std::to_string(s.end)};

    const bool gap = s.has_data && chunk.t0 > s.end + kTimeTolerance;
    const double period = 1.0 / static_cast<double>(chunk.rate);
    for (Eigen::Index i = 0; i < chunk.samples.rows(); ++i) {
      s.times.push_back(chunk.t0 + static_cast<double>(i) * period);
      s.breaks.push_back(i == 0 && gap);
      for (Eigen::Index c = 0; c < chunk.samples.cols(); ++c) s.values.push_back(chunk.samples(i, c));
    }
    s.end = chunk.t_end();
    s.has_data = true;
    evict(s);
    return {true, {}};
  }

  /// End time (exclusive) of the most recent chunk on a stream.
  Timestamp end_time(std::uint16_t id) const {
    std::shared_lock lock(mu_);
    const Stream& s = stream(id);
    return s.has_data ? s.end : 0.0;
  }

  /// Timestamp of the oldest retained sample.
  Timestamp start_time(std::uint16_t id) const {
    std::shared_lock lock(mu_);
    const Stream& s = stream(id);
    return s.times.empty() ? 0.0 : s.times.front();
  }

  std::size_t sample_count(std::uint16_t id) const {
    std::shared_lock lock(mu_);
    return stream(id).times.size();
  }

  /// The n samples ending at t_end on a grid with the given rate. Values are
  /// copied verbatim where the grid hits a stored sample, otherwise linearly
  /// interpolated per channel.
  MatF sample_window(std::uint16_t id, Timestamp t_end, std::size_t n, double rate) const {
    require(n >= 1, ErrorCode::invalid_argument, "window length must be positive");
    require(rate > 0.0, ErrorCode::invalid_argument, "rate must be positive");
    std::shared_lock lock(mu_);
    const Stream& s = stream(id);
    const auto grid = window_grid(t_end, n, rate);
    MatF out(static_cast<Eigen::Index>(n), s.info.channel_count);
    std::vector<double> row(static_cast<std::size_t>(s.info.channel_count));
    for (std::size_t k = 0; k < n; ++k) {
      interpolate(s, grid[k], row, ErrorCode::insufficient_history);
      for (int c = 0; c < s.info.channel_count; ++c) out(static_cast<Eigen::Index>(k), c) = static_cast<float>(row[c]);
    }
    return out;
  }

  /// Resample several streams onto the common grid t0 + k / rate, k = 0..floor((t1 - t0) * rate).
  AlignedTrack align(const std::vector<std::uint16_t>& ids, Timestamp t0, Timestamp t1, double rate) const {
    require(t1 >= t0, ErrorCode::invalid_argument, "align: t1 < t0");
    require(rate > 0.0, ErrorCode::invalid_argument, "align: rate must be positive");
    require(!ids.empty(), ErrorCode::invalid_argument, "align: no streams");
    std::shared_lock lock(mu_);
    int total_channels = 0;
    for (auto id : ids) total_channels += stream(id).info.channel_count;
    const auto n = static_cast<Eigen::Index>(std::floor((t1 - t0) * rate + 1e-9)) + 1;

    AlignedTrack track;
    track.t0 = t0;
    track.rate = rate;
    track.sources = ids;
    track.values.resize(n, total_channels);
    int col = 0;
    for (auto id : ids) {
      const Stream& s = stream(id);
      std::vector<double> row(static_cast<std::size_t>(s.info.channel_count));
      for (Eigen::Index k = 0; k < n; ++k) {
        interpolate(s, t0 + static_cast<double>(k) / rate, row, ErrorCode::coverage_gap);
        for (int c = 0; c < s.info.channel_count; ++c) track.values(k, col + c) = row[c];
      }
      col += s.info.channel_count;
    }
    return track;
  }

 private:
  struct Stream {
    StreamInfo info;
    std::deque<double> times;
    std::deque<bool> breaks;  // true where a gap precedes the sample
    std::deque<float> values;
    Timestamp end = 0.0;
    bool has_data = false;
  };

  const Stream& stream(std::uint16_t id) const {
    auto it = streams_.find(id);
    if (it == streams_.end()) fail(ErrorCode::unknown_stream, "unknown stream id " + std::to_string(id));
    return it->second;
  }

  void evict(Stream& s) const {
    const double cutoff = s.end - horizon_;
    const auto ch = static_cast<std::size_t>(s.info.channel_count);
    std::size_t drop = 0;
    while (drop < s.times.size() && s.times[drop] < cutoff - kTimeTolerance) ++drop;
    if (drop == 0) return;
    s.times.erase(s.times.begin(), s.times.begin() + static_cast<std::ptrdiff_t>(drop));
    s.breaks.erase(s.breaks.begin(), s.breaks.begin() + static_cast<std::ptrdiff_t>(drop));
    s.values.erase(s.values.begin(), s.values.begin() + static_cast<std::ptrdiff_t>(drop * ch));
    if (!s.breaks.empty()) s.breaks.front() = false;
  }

  static void interpolate(const Stream& s, Timestamp t, std::vector<double>& row, ErrorCode missing) {
    const auto ch = static_cast<std::size_t>(s.info.channel_count);
    if (s.times.empty() || t < s.times.front() - kTimeTolerance || t > s.times.back() + kTimeTolerance)
      fail(missing, "stream " + std::to_string(s.info.stream_id) + " does not cover t=" + std::to_string(t));
    // First sample with time >= t - tol.
    auto it = std::lower_bound(s.times.begin(), s.times.end(), t - kTimeTolerance);
    auto hi = static_cast<std::size_t>(it - s.times.begin());
    if (std::abs(s.times[hi] - t) <= kTimeTolerance) {
      for (std::size_t c = 0; c < ch; ++c) row[c] = s.values[hi * ch + c];
      return;
    }
    if (hi == 0) fail(missing, "stream does not cover t=" + std::to_string(t));
    if (s.breaks[hi])
      fail(ErrorCode::coverage_gap, "stream " + std::to_string(s.info.stream_id) + " has a gap at t=" + std::to_string(t));
    const std::size_t lo = hi - 1;
    const double w = (t - s.times[lo]) / (s.times[hi] - s.times[lo]);
    for (std::size_t c = 0; c < ch; ++c) {
      const double a = s.values[lo * ch + c];
      const double b = s.values[hi * ch + c];
      row[c] = a + w * (b - a);
    }
  }

  double horizon_;
  mutable std::shared_mutex mu_;
  std::map<std::uint16_t, Stream> streams_;
};

}  // namespace alvi
