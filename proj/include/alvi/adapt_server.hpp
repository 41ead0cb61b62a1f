#pragma once

// Closed-loop adaptation: buffer window pairs, fine-tune every tick interval
// on a mix of recent and historical data, publish versioned snapshots.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "alvi/error.hpp"
#include "alvi/handformer.hpp"
#include "alvi/session_io.hpp"
#include "alvi/weights_io.hpp"

namespace alvi {

struct AdaptationPolicy {
  double tick_interval = 10.0;
  int steps_per_tick = 50;
  int batch_size = 16;
  double mix_ratio = 0.5;
  /// Five minutes of windows at the default 5 pairs per second.
  std::size_t recent_capacity = 1500;
  std::uint64_t seed = 0;

  void validate() const {
    require(tick_interval > 0, ErrorCode::invalid_argument, "tick_interval must be positive");
    require(steps_per_tick >= 1, ErrorCode::invalid_argument, "steps_per_tick must be at least 1");
    require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be at least 1");
    require(mix_ratio >= 0 && mix_ratio <= 1, ErrorCode::invalid_argument, "mix_ratio must lie in [0, 1]");
    require(recent_capacity >= 1, ErrorCode::invalid_argument, "recent_capacity must be at least 1");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdaptationPolicy, tick_interval, steps_per_tick, batch_size, mix_ratio,
                                                recent_capacity, seed)

struct SubmitResult {
  std::size_t accepted = 0;
  std::vector<std::string> diagnostics;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t recent_capacity = 1500) : capacity_(recent_capacity) {
    require(capacity_ >= 1, ErrorCode::invalid_argument, "recent capacity must be at least 1");
  }

  SubmitResult submit(const std::vector<WindowPair>& pairs) {
    SubmitResult r;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (!pairs[i].well_formed()) {
        r.diagnostics.push_back("pair " + std::to_string(i) + " is malformed (shape, range or non-finite values)");
        continue;
      }
      recent_.push_back(pairs[i]);
      ++r.accepted;
      if (recent_.size() > capacity_) {
        historical_.push_back(std::move(recent_.front()));
        recent_.pop_front();
      }
    }
    accepted_ += r.accepted;
    return r;
  }

  void add_historical(std::vector<WindowPair> pairs) {
    for (auto& p : pairs)
      if (p.well_formed()) historical_.push_back(std::move(p));
  }

  /// Move the current session into the historical store.
  void close_session() {
    for (auto& p : recent_) historical_.push_back(std::move(p));
    recent_.clear();
  }

  const std::deque<WindowPair>& recent() const { return recent_; }
  const std::vector<WindowPair>& historical() const { return historical_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t total_accepted() const { return accepted_; }

  std::vector<WindowPair> all_pairs() const {
    std::vector<WindowPair> out(historical_.begin(), historical_.end());
    out.insert(out.end(), recent_.begin(), recent_.end());
    return out;
  }

  /// A batch with round(mix_ratio * n) draws from recent and the rest from
  /// historical, or all from recent while the historical store is empty.
  std::vector<WindowPair> sample_batch(std::size_t n, double mix_ratio, Rng& rng) const {
    require(!recent_.empty(), ErrorCode::invalid_argument, "cannot sample from an empty recent buffer");
    const std::size_t from_recent = historical_.empty() ? n : static_cast<std::size_t>(std::lround(mix_ratio * static_cast<double>(n)));
    std::uniform_int_distribution<std::size_t> pick_recent(0, recent_.size() - 1);
    std::vector<WindowPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < from_recent; ++i) out.push_back(recent_[pick_recent(rng)]);
    if (from_recent < n) {
      std::uniform_int_distribution<std::size_t> pick_hist(0, historical_.size() - 1);
      for (std::size_t i = from_recent; i < n; ++i) out.push_back(historical_[pick_hist(rng)]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<WindowPair> recent_;
  std::vector<WindowPair> historical_;
  std::size_t accepted_ = 0;
};

enum class TickStatus { applied, skipped_empty, rolled_back };

inline const char* to_string(TickStatus s) {
  switch (s) {
    case TickStatus::applied: return "applied";
    case TickStatus::skipped_empty: return "skipped_empty";
    case TickStatus::rolled_back: return "rolled_back";
  }
  return "?";
}

struct TickResult {
  TickStatus status = TickStatus::skipped_empty;
  std::uint64_t version = 0;
  double mean_loss = 0.0;
  int steps = 0;
  std::string diagnostic;
};

/// Fires once per elapsed interval of whatever clock drives it.
class TickScheduler {
 public:
  explicit TickScheduler(double interval, double start = 0.0) : interval_(interval), next_(start + interval) {
    require(interval > 0, ErrorCode::invalid_argument, "tick interval must be positive");
  }

  /// Number of ticks due at `now`. With catch_up false at most one tick fires
  /// and missed intervals are skipped.
  int advance(double now, bool catch_up = true) {
    int due = 0;
    while (now + 1e-9 >= next_) {
      ++due;
      next_ += interval_;
    }
    if (!catch_up && due > 1) {
      missed_ += static_cast<std::uint64_t>(due - 1);
      due = 1;
    }
    return due;
  }

  double next_due() const { return next_; }
  std::uint64_t missed() const { return missed_; }

 private:
  double interval_;
  double next_;
  std::uint64_t missed_ = 0;
};

/// Simulated clock: time only moves when told to.
class SimClock {
 public:
  double now() const { return t_; }
  void advance(double dt) {
    require(dt >= 0, ErrorCode::invalid_argument, "clock cannot run backwards");
    t_ += dt;
  }
  void set(double t) {
    require(t >= t_, ErrorCode::invalid_argument, "clock cannot run backwards");
    t_ = t;
  }

 private:
  double t_ = 0.0;
};

class SteadyClock {
 public:
  SteadyClock() : start_(std::chrono::steady_clock::now()) {}
  double now() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

class AdaptServer {
 public:
  using SnapshotListener = std::function<void(const ModelSnapshot&)>;
  /// Invoked before every optimizer step inside a tick; used for fault injection.
  using StepHook = std::function<void(ModelState&, std::vector<WindowPair>&, int step)>;

  AdaptServer(ModelState initial, AdaptationPolicy policy = {}, std::string snapshot_dir = {})
      : policy_((policy.validate(), policy)),
        buffer_(policy.recent_capacity),
        state_(std::move(initial)),
        rng_(policy.seed),
        snapshot_dir_(std::move(snapshot_dir)) {
    latest_ = std::make_shared<const ModelState>(state_);
    if (!snapshot_dir_.empty()) std::filesystem::create_directories(snapshot_dir_);
  }

  const AdaptationPolicy& policy() const { return policy_; }

  SubmitResult submit(const std::vector<WindowPair>& pairs) {
    std::lock_guard lock(buffer_mu_);
    return buffer_.submit(pairs);
  }

  void add_historical(std::vector<WindowPair> pairs) {
    std::lock_guard lock(buffer_mu_);
    buffer_.add_historical(std::move(pairs));
  }

  void load_history(const std::string& path) { add_historical(decode_replay_history(read_file(path))); }

  void save_history(const std::string& path) const {
    std::lock_guard lock(buffer_mu_);
    write_file(path, encode_replay_history(buffer_.all_pairs()));
  }

  std::size_t recent_size() const {
    std::lock_guard lock(buffer_mu_);
    return buffer_.recent().size();
  }
  std::size_t historical_size() const {
    std::lock_guard lock(buffer_mu_);
    return buffer_.historical().size();
  }
  std::size_t total_accepted() const {
    std::lock_guard lock(buffer_mu_);
    return buffer_.total_accepted();
  }

  ModelSnapshot latest() const {
    std::lock_guard lock(latest_mu_);
    return latest_;
  }

  /// Snapshot of a given version still held in memory or on disk.
  ModelSnapshot snapshot(std::uint64_t version) const {
    {
      std::lock_guard lock(latest_mu_);
      for (const auto& s : history_)
        if (s->version == version) return s;
      if (latest_->version == version) return latest_;
    }
    if (!snapshot_dir_.empty()) {
      const auto path = snapshot_path(version);
      if (std::filesystem::exists(path)) return std::make_shared<const ModelState>(load_weights_file(path));
    }
    return nullptr;
  }

  std::vector<std::uint64_t> available_versions() const {
    std::lock_guard lock(latest_mu_);
    std::vector<std::uint64_t> v;
    for (const auto& s : history_) v.push_back(s->version);
    if (v.empty() || v.back() != latest_->version) v.push_back(latest_->version);
    return v;
  }

  void on_snapshot(SnapshotListener l) {
    std::lock_guard lock(latest_mu_);
    listeners_.push_back(std::move(l));
  }

  void clear_listeners() {
    std::lock_guard lock(latest_mu_);
    listeners_.clear();
  }

  void set_step_hook(StepHook h) { step_hook_ = std::move(h); }

  std::string snapshot_path(std::uint64_t version) const {
    return (std::filesystem::path(snapshot_dir_) / ("model_v" + std::to_string(version) + ".alvw")).string();
  }

  /// One adaptation tick. Only one tick may run at a time.
  TickResult adaptation_tick() {
    std::lock_guard tick_lock(tick_mu_);
    ++ticks_;
    TickResult r;
    r.version = state_.version;
    {
      std::lock_guard lock(buffer_mu_);
      if (buffer_.recent().empty()) {
        r.status = TickStatus::skipped_empty;
        r.diagnostic = "recent buffer empty";
        return r;
      }
    }
    const ModelState checkpoint = state_;
    try {
      double sum = 0;
      for (int step = 0; step < policy_.steps_per_tick; ++step) {
        std::vector<WindowPair> batch;
        {
          std::lock_guard lock(buffer_mu_);
          batch = buffer_.sample_batch(static_cast<std::size_t>(policy_.batch_size), policy_.mix_ratio, rng_);
        }
        if (step_hook_) step_hook_(state_, batch, step);
        sum += finetune_step(state_, batch);
        ++r.steps;
      }
      r.mean_loss = sum / policy_.steps_per_tick;
    } catch (const Error& e) {
      state_ = checkpoint;
      r.status = TickStatus::rolled_back;
      r.version = state_.version;
      r.diagnostic = e.what();
      ++rollbacks_;
      return r;
    }
    ++state_.version;
    r.status = TickStatus::applied;
    r.version = state_.version;
    publish(std::make_shared<const ModelState>(state_));
    return r;
  }

  std::uint64_t rollbacks() const { return rollbacks_; }
  /// Ticks started so far, counted before the tick publishes anything.
  std::uint64_t ticks() const { return ticks_.load(); }

  /// The current training state (not thread-safe against a running tick).
  const ModelState& state() const { return state_; }

 private:
  void publish(ModelSnapshot s) {
    if (!snapshot_dir_.empty()) save_weights_file(*s, snapshot_path(s->version));
    std::vector<SnapshotListener> ls;
    {
      std::lock_guard lock(latest_mu_);
      history_.push_back(latest_);
      if (history_.size() > 16) history_.erase(history_.begin());
      latest_ = s;
      ls = listeners_;
    }
    for (auto& l : ls) l(s);
  }

  AdaptationPolicy policy_;
  mutable std::mutex buffer_mu_;
  ReplayBuffer buffer_;
  std::mutex tick_mu_;
  ModelState state_;
  Rng rng_;
  std::string snapshot_dir_;
  StepHook step_hook_;
  std::uint64_t rollbacks_ = 0;
  std::atomic<std::uint64_t> ticks_{0};

  mutable std::mutex latest_mu_;
  ModelSnapshot latest_;
  std::vector<ModelSnapshot> history_;
  std::vector<SnapshotListener> listeners_;
};

}  // namespace alvi
