#pragma once

// Streaming inference: 200 Hz EMG in, EMA-smoothed 25 Hz pose frames out.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "alvi/error.hpp"
#include "alvi/handformer.hpp"
#include "alvi/pose_types.hpp"
#include "alvi/preprocess.hpp"
#include "alvi/session.hpp"
#include "alvi/stream_core.hpp"

namespace alvi {

struct EngineConfig {
  double in_rate = kEmgRate;
  double out_rate = kTargetRate;
  int window_len = kWindowLen;
  double ema_alpha = 0.5;
  double deadline_ms = 40.0;
  std::size_t timing_history = 4096;

  int hop() const { return static_cast<int>(std::lround(in_rate / out_rate)); }

  void validate() const {
    require(in_rate > 0 && out_rate > 0, ErrorCode::invalid_argument, "engine rates must be positive");
    require(std::abs(in_rate / out_rate - hop()) < 1e-9 && hop() >= 1, ErrorCode::invalid_argument,
            "in_rate / out_rate must be an integer");
    require(window_len > 0, ErrorCode::invalid_argument, "window_len must be positive");
    require(ema_alpha > 0 && ema_alpha <= 1, ErrorCode::invalid_argument, "ema_alpha must lie in (0, 1]");
    require(deadline_ms > 0, ErrorCode::invalid_argument, "deadline must be positive");
  }
};

struct EmittedFrame {
  Timestamp t = 0;
  PoseFrame angles{};
  std::uint64_t version = 0;
};

inline PoseFrame ema_smooth(const PoseFrame& prev, const PoseFrame& next, double alpha) {
  require(alpha > 0 && alpha <= 1, ErrorCode::invalid_argument, "ema alpha must lie in (0, 1]");
  PoseFrame out;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = alpha * next[k] + (1.0 - alpha) * prev[k];
  return out;
}

struct EngineStats {
  std::uint64_t frames_emitted = 0;
  std::uint64_t frames_dropped = 0;
  std::uint64_t ticks = 0;
  std::uint64_t deadline_overruns = 0;
  std::uint64_t model_version = 0;
  std::uint64_t swaps = 0;
  double tick_ms_p50 = 0, tick_ms_p99 = 0, tick_ms_max = 0;
  /// One output period: a frame describes the window ending at its timestamp
  /// and is superseded one period later.
  double algorithmic_latency_ms = 40.0;
  double latency_budget_ms = 51.2;
  double deadline_ms = 40.0;

  bool within_deadline() const { return tick_ms_p99 < deadline_ms; }
  double headroom_ms() const { return latency_budget_ms - algorithmic_latency_ms; }
};

class RealtimeEngine {
 public:
  explicit RealtimeEngine(ModelSnapshot model, EngineConfig cfg = {}) : cfg_(cfg), model_(std::move(model)) {
    cfg_.validate();
    require(model_ != nullptr, ErrorCode::invalid_argument, "engine needs a model");
    model_cfg_ = model_->config;
    require(model_->config.window_len == cfg_.window_len && model_->config.channels == kEmgChannels, ErrorCode::config_mismatch,
            "model window does not match the engine");
    ring_ = MatF::Zero(kEmgChannels, cfg_.window_len);
    stats_.model_version = model_->version;
    stats_.algorithmic_latency_ms = 1000.0 / cfg_.out_rate;
    stats_.deadline_ms = cfg_.deadline_ms;
  }

  const EngineConfig& config() const { return cfg_; }

  /// Takes effect from the next tick; must be called from the ingest thread.
  void set_ema_alpha(double alpha) {
    require(alpha > 0 && alpha <= 1, ErrorCode::invalid_argument, "ema_alpha must lie in (0, 1]");
    cfg_.ema_alpha = alpha;
  }

  /// Queue a snapshot for the next tick boundary. A newer pending snapshot
  /// replaces an older one. Incompatible snapshots are rejected here.
  void post_snapshot(ModelSnapshot s) {
    require(s != nullptr, ErrorCode::invalid_argument, "null snapshot");
    require(s->config.shape_compatible(model_config()), ErrorCode::config_mismatch, "snapshot configuration does not match the engine");
    std::lock_guard lock(slot_mu_);
    pending_ = std::move(s);
  }

  /// Swap immediately; must be called from the ingest thread between ticks.
  std::uint64_t swap_weights(ModelSnapshot s) {
    require(s != nullptr, ErrorCode::invalid_argument, "null snapshot");
    require(s->config.shape_compatible(model_config()), ErrorCode::config_mismatch, "snapshot configuration does not match the engine");
    install(std::move(s));
    return current_version();
  }

  std::uint64_t current_version() const {
    std::lock_guard lock(stats_mu_);
    return stats_.model_version;
  }

  ModelSnapshot model() const { return model_; }

  std::vector<EmittedFrame> ingest(const SampleChunk& chunk) {
    require(chunk.samples.cols() == kEmgChannels, ErrorCode::shape_mismatch, "engine expects 8-channel EMG chunks");
    require(std::abs(chunk.rate - cfg_.in_rate) < 1e-6 * cfg_.in_rate, ErrorCode::invalid_argument, "chunk rate does not match engine input rate");
    const double dt = 1.0 / cfg_.in_rate;
    if (received_ > 0)
      require(chunk.t0 > last_t_ + 0.5 * dt, ErrorCode::non_monotonic, "chunk starts before the previous chunk ended");
    std::vector<EmittedFrame> out;
    for (Eigen::Index i = 0; i < chunk.samples.rows(); ++i) {
      const Eigen::Index col = static_cast<Eigen::Index>(received_ % static_cast<std::uint64_t>(cfg_.window_len));
      for (int c = 0; c < kEmgChannels; ++c) ring_(c, col) = static_cast<float>(minmax_normalize(static_cast<double>(chunk.samples(i, c))));
      ++received_;
      last_t_ = chunk.t0 + static_cast<double>(i) * dt;
      const auto n = static_cast<std::uint64_t>(cfg_.window_len);
      if (received_ >= n && (received_ - n) % static_cast<std::uint64_t>(cfg_.hop()) == 0)
        if (auto f = tick()) out.push_back(*f);
    }
    return out;
  }

  /// Latest 256-sample window in time order, normalized.
  MatF current_window() const {
    const auto n = static_cast<Eigen::Index>(cfg_.window_len);
    MatF w(kEmgChannels, n);
    const Eigen::Index start = static_cast<Eigen::Index>(received_ % static_cast<std::uint64_t>(n));
    w.leftCols(n - start) = ring_.rightCols(n - start);
    w.rightCols(start) = ring_.leftCols(start);
    return w;
  }

  std::uint64_t samples_received() const { return received_; }

  EngineStats latency_report() const {
    std::lock_guard lock(stats_mu_);
    EngineStats s = stats_;
    if (!tick_ms_.empty()) {
      std::vector<double> v(tick_ms_.begin(), tick_ms_.end());
      std::sort(v.begin(), v.end());
      auto q = [&v](double p) { return v[static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()))) - 1]; };
      s.tick_ms_p50 = q(0.5);
      s.tick_ms_p99 = q(0.99);
      s.tick_ms_max = v.back();
    }
    return s;
  }

  std::vector<double> tick_times_ms() const {
    std::lock_guard lock(stats_mu_);
    return {tick_ms_.begin(), tick_ms_.end()};
  }

 private:
  const ModelConfig& model_config() const { return model_cfg_; }

  void install(ModelSnapshot s) {
    model_ = std::move(s);
    std::lock_guard lock(stats_mu_);
    stats_.model_version = model_->version;
    ++stats_.swaps;
  }

  std::optional<EmittedFrame> tick() {
    {
      ModelSnapshot next;
      {
        std::lock_guard lock(slot_mu_);
        next.swap(pending_);
      }
      if (next) install(std::move(next));
    }
    const ModelSnapshot model = model_;
    const auto start = std::chrono::steady_clock::now();
    std::optional<PoseFrame> raw;
    try {
      const MatF pred = forward(*model, current_window());
      PoseFrame f;
      bool finite = true;
      for (int k = 0; k < kPoseDims; ++k) {
        f[k] = pred(pred.rows() - 1, k);
        finite = finite && std::isfinite(f[k]);
      }
      if (finite) raw = f;
    } catch (const std::exception&) {
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const bool overrun = ms > cfg_.deadline_ms;

    std::optional<EmittedFrame> out;
    if (raw && !overrun) {
      smoothed_ = have_prev_ ? ema_smooth(smoothed_, *raw, cfg_.ema_alpha) : *raw;
      have_prev_ = true;
      out = EmittedFrame{last_t_, smoothed_, model->version};
    }
    std::lock_guard lock(stats_mu_);
    ++stats_.ticks;
    if (overrun) ++stats_.deadline_overruns;
    if (out)
      ++stats_.frames_emitted;
    else
      ++stats_.frames_dropped;
    tick_ms_.push_back(ms);
    if (tick_ms_.size() > cfg_.timing_history) tick_ms_.pop_front();
    return out;
  }

  EngineConfig cfg_;
  ModelConfig model_cfg_;
  ModelSnapshot model_;
  MatF ring_;
  std::uint64_t received_ = 0;
  Timestamp last_t_ = 0;
  PoseFrame smoothed_{};
  bool have_prev_ = false;

  std::mutex slot_mu_;
  ModelSnapshot pending_;

  mutable std::mutex stats_mu_;
  EngineStats stats_;
  std::deque<double> tick_ms_;
};

/// Pose frames as a 25 Hz pose_angles chunk for publication.
inline SampleChunk frames_to_chunk(const std::vector<EmittedFrame>& frames, double rate = kTargetRate,
                                   std::uint16_t stream_id = kPoseOutStreamId) {
  require(!frames.empty(), ErrorCode::invalid_argument, "no frames to publish");
  SampleChunk c;
  c.stream_id = stream_id;
  c.t0 = frames.front().t;
  c.rate = static_cast<float>(rate);
  c.samples.resize(static_cast<Eigen::Index>(frames.size()), kPoseDims);
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (int k = 0; k < kPoseDims; ++k) c.samples(static_cast<Eigen::Index>(i), k) = static_cast<float>(frames[i].angles[k]);
  return c;
}

}  // namespace alvi
