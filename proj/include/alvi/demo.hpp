#pragma once

// Demo orchestrator: a live synthetic EMG source, the realtime engine, an
// in-process adaptation server and a websocket bridge for the dashboard.
//
// Events (server -> browser):
//   {"type":"pose","t":s,"angles":[20],"v":N}
//   {"type":"metrics","t":s,"correlation":r,"error_deg":e,"emitted":n,"dropped":n,"window":n}
//   {"type":"model_version","v":N}
//   {"type":"gesture_state","t":s,"id":N,"active":bool}
// Commands (browser -> server), each answered by exactly one ack or reject:
//   finetune_now | swap_model {v} | start_gesture {id} | stop_gesture | set_alpha {alpha}

#include <poll.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "alvi/adapt_server.hpp"
#include "alvi/evalkit.hpp"
#include "alvi/net.hpp"
#include "alvi/preprocess.hpp"
#include "alvi/realtime.hpp"
#include "alvi/synthgen.hpp"
#include "alvi/websocket.hpp"

namespace alvi {

struct DemoOptions {
  std::uint16_t port = 7343;
  std::uint64_t seed = 0;
  std::uint64_t muscle_seed = 1;
  double segment_seconds = 10.0;
  std::size_t pair_stride = 40;
  std::size_t metrics_window = 125;
  double duration = 0.0;  // seconds of stream; 0 runs until stopped
  bool paced = true;      // false: run on stream time as fast as possible
  bool loopback_only = false;
  EngineConfig engine;
  AdaptationPolicy policy;
  std::string snapshot_dir;
};

/// Continuous synthetic source: the current gesture (or rest) rendered in
/// segments, streamed as 8-sample EMG chunks with matching truth angles.
class LiveSource {
 public:
  LiveSource(MuscleModel model, std::uint64_t seed, double segment_seconds)
      : model_(std::move(model)), seed_(seed), segment_(segment_seconds) {}

  void set_gesture(int id) {
    require(id >= -1 && id < kGestureCount, ErrorCode::invalid_argument, "unknown gesture id " + std::to_string(id));
    gesture_ = id;
    emg_.resize(0, kEmgChannels);
    pos_ = 0;
  }
  int gesture() const { return gesture_; }

  /// Next chunk of `n` EMG samples; truth angles at 200 Hz are appended to `truth`.
  SampleChunk next(int n, std::vector<PoseFrame>& truth) {
    SampleChunk c;
    c.stream_id = kEmgStreamId;
    c.rate = static_cast<float>(kEmgRate);
    c.t0 = static_cast<double>(emitted_) / kEmgRate;
    c.samples.resize(n, kEmgChannels);
    for (int i = 0; i < n; ++i) {
      if (pos_ >= emg_.rows()) render();
      c.samples.row(i) = emg_.row(pos_).cast<float>();
      const Eigen::Index pf = pos_ * static_cast<Eigen::Index>(kPoseRate) / static_cast<Eigen::Index>(kEmgRate);
      const double frac = static_cast<double>(pos_ % 5) / 5.0;
      const Eigen::Index pn = std::min(pf + 1, angles_.rows() - 1);
      PoseFrame p;
      for (int k = 0; k < kPoseDims; ++k) p[k] = angles_(pf, k) + frac * (angles_(pn, k) - angles_(pf, k));
      truth.push_back(p);
      ++pos_;
      ++emitted_;
    }
    return c;
  }

 private:
  void render() {
    if (gesture_ < 0)
      angles_ = MatD::Zero(static_cast<Eigen::Index>(segment_ * kPoseRate), kPoseDims);
    else
      angles_ = gesture_trajectory(standard_gesture(gesture_), segment_, kPoseRate);
    emg_ = synth_emg(angles_, model_, seed_ + 7919 * ++segments_);
    pos_ = 0;
  }

  MuscleModel model_;
  std::uint64_t seed_;
  double segment_;
  int gesture_ = -1;
  MatD angles_, emg_;
  Eigen::Index pos_ = 0;
  std::uint64_t emitted_ = 0;
  std::uint64_t segments_ = 0;
};

class DemoBridge {
 public:
  DemoBridge(ModelState model, DemoOptions opt)
      : opt_(std::move(opt)),
        server_(model, opt_.policy, opt_.snapshot_dir),
        engine_(std::make_shared<const ModelState>(model), opt_.engine),
        source_(default_muscle_model(opt_.muscle_seed), opt_.seed, opt_.segment_seconds),
        scheduler_(opt_.policy.tick_interval) {
    listener_ = net::listen_tcp(opt_.port, opt_.loopback_only);
    net::set_nonblocking(listener_.fd());
    server_.on_snapshot([this](const ModelSnapshot& s) { engine_.post_snapshot(s); });
    worker_ = std::thread([this] { worker_loop(); });
  }

  ~DemoBridge() {
    {
      std::lock_guard lock(job_mu_);
      quit_ = true;
    }
    job_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
    server_.clear_listeners();
  }

  std::uint16_t port() const { return net::local_port(listener_.fd()); }
  const RealtimeEngine& engine() const { return engine_; }
  AdaptServer& server() { return server_; }

  void run(const std::atomic<bool>& stop) {
    using clock = std::chrono::steady_clock;
    const int hop = engine_.config().hop();
    const auto period = std::chrono::duration<double>(hop / engine_.config().in_rate);
    auto next_chunk = clock::now();
    double stream_t = 0;
    while (!stop.load() && (opt_.duration <= 0 || stream_t < opt_.duration)) {
      if (!opt_.paced) {
        poll_network(0);
        stream_t = step(hop);
        continue;
      }
      const auto now = clock::now();
      const int wait_ms = now >= next_chunk ? 0 : static_cast<int>(std::chrono::duration<double, std::milli>(next_chunk - now).count());
      poll_network(wait_ms);
      if (clock::now() < next_chunk) continue;
      next_chunk += std::chrono::duration_cast<clock::duration>(period);
      stream_t = step(hop);
    }
  }

 private:
  struct WsClient {
    net::Socket sock;
    std::string in;
    bool upgraded = false;
  };

  struct Job {
    int fd = -1;
  };

  double step(int hop) {
    std::vector<PoseFrame> truth;
    const SampleChunk chunk = source_.next(hop, truth);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      emg_hist_.push_back(chunk.samples.row(static_cast<Eigen::Index>(i)));
      truth_hist_.push_back(truth[i]);
    }
    while (emg_hist_.size() > static_cast<std::size_t>(kWindowLen)) {
      emg_hist_.pop_front();
      truth_hist_.pop_front();
    }
    samples_ += static_cast<std::uint64_t>(hop);
    const double t_end = chunk.t_end() - 1.0 / kEmgRate;

    const auto v_before = engine_.current_version();
    const auto frames = engine_.ingest(chunk);
    if (engine_.current_version() != v_before) broadcast({{"type", "model_version"}, {"v", engine_.current_version()}});
    for (const auto& f : frames) {
      broadcast({{"type", "pose"}, {"t", f.t}, {"angles", f.angles}, {"v", f.version}});
      recent_pred_.push_back(f.angles);
      recent_truth_.push_back(truth_hist_.back());
      if (recent_pred_.size() > opt_.metrics_window) {
        recent_pred_.pop_front();
        recent_truth_.pop_front();
      }
    }

    if (emg_hist_.size() == static_cast<std::size_t>(kWindowLen) && samples_ % opt_.pair_stride < static_cast<std::uint64_t>(hop))
      submit_pair(t_end);

    if (samples_ % static_cast<std::uint64_t>(kEmgRate) < static_cast<std::uint64_t>(hop)) {
      send_metrics(t_end);
      broadcast({{"type", "gesture_state"}, {"t", t_end}, {"id", source_.gesture()}, {"active", source_.gesture() >= 0}});
    }

    schedule(scheduler_.advance(t_end, false));
    flush_replies();
    return t_end;
  }

  void submit_pair(double t_end) {
    WindowPair p;
    p.t_end = t_end;
    p.emg.resize(kEmgChannels, kWindowLen);
    for (int j = 0; j < kWindowLen; ++j)
      for (int c = 0; c < kEmgChannels; ++c) p.emg(c, j) = static_cast<float>(minmax_normalize(static_cast<double>(emg_hist_[j](c))));
    p.target.resize(kTargetFrames, kPoseDims);
    const auto times = target_times(t_end);
    for (int f = 0; f < kTargetFrames; ++f) {
      // Sample index within the history whose timestamp matches the frame time.
      const double back = (t_end - times[static_cast<std::size_t>(f)]) * kEmgRate;
      const auto idx = static_cast<std::ptrdiff_t>(kWindowLen - 1) - static_cast<std::ptrdiff_t>(std::lround(back));
      const auto& a = truth_hist_[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(idx, 0, kWindowLen - 1))];
      for (int k = 0; k < kPoseDims; ++k) p.target(f, k) = static_cast<float>(a[k]);
    }
    server_.submit({p});
  }

  void send_metrics(double t) {
    if (recent_pred_.size() < 2) return;
    std::vector<double> ps, ts;
    double err = 0;
    int contributing = 0;
    double corr = 0;
    for (int k = 0; k < kPoseDims; ++k) {
      ps.clear();
      ts.clear();
      for (std::size_t i = 0; i < recent_pred_.size(); ++i) {
        ps.push_back(recent_pred_[i][k]);
        ts.push_back(recent_truth_[i][k]);
        err += std::abs(recent_pred_[i][k] - recent_truth_[i][k]);
      }
      const auto r = pearson(ps, ts);
      if (!r.degenerate) {
        corr += r.r;
        ++contributing;
      }
    }
    const auto st = engine_.latency_report();
    broadcast({{"type", "metrics"},
               {"t", t},
               {"correlation", contributing ? corr / contributing : 0.0},
               {"error_deg", rad_to_deg(err / static_cast<double>(recent_pred_.size() * kPoseDims))},
               {"emitted", st.frames_emitted},
               {"dropped", st.frames_dropped},
               {"tick_ms_p99", st.tick_ms_p99},
               {"window", recent_pred_.size()}});
  }

  void schedule(int n, int reply_fd = -1) {
    if (n <= 0) return;
    {
      std::lock_guard lock(job_mu_);
      for (int i = 0; i < n; ++i) jobs_.push_back(Job{reply_fd});
    }
    job_cv_.notify_one();
  }

  void worker_loop() {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(job_mu_);
        job_cv_.wait(lock, [this] { return quit_ || !jobs_.empty(); });
        if (quit_) return;
        job = jobs_.front();
        jobs_.pop_front();
      }
      const TickResult r = server_.adaptation_tick();
      if (job.fd < 0) continue;
      nlohmann::json j;
      if (r.status == TickStatus::applied)
        j = {{"type", "ack"}, {"cmd", "finetune_now"}, {"version", r.version}, {"loss", r.mean_loss}};
      else
        j = {{"type", "reject"}, {"cmd", "finetune_now"}, {"reason", r.diagnostic}, {"status", to_string(r.status)}, {"version", r.version}};
      std::lock_guard lock(reply_mu_);
      replies_.emplace_back(job.fd, j.dump());
    }
  }

  void flush_replies() {
    std::vector<std::pair<int, std::string>> rs;
    {
      std::lock_guard lock(reply_mu_);
      rs.swap(replies_);
    }
    for (auto& [fd, body] : rs) send_to(fd, body);
  }

  void send_to(int fd, const std::string& text) {
    auto it = clients_.find(fd);
    if (it == clients_.end() || !it->second.upgraded) return;
    const std::string f = ws::encode_frame(ws::Opcode::text, text);
    if (!net::send_all(fd, f.data(), f.size())) dead_.push_back(fd);
  }

  void broadcast(const nlohmann::json& j) {
    const std::string f = ws::encode_frame(ws::Opcode::text, j.dump());
    for (auto& [fd, c] : clients_)
      if (c.upgraded && !net::send_all(fd, f.data(), f.size())) dead_.push_back(fd);
  }

  void handle_command(int fd, const std::string& text) {
    auto reject = [&](const std::string& cmd, const std::string& reason, nlohmann::json extra = nlohmann::json::object()) {
      extra["type"] = "reject";
      extra["cmd"] = cmd;
      extra["reason"] = reason;
      send_to(fd, extra.dump());
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      reject("", "command is not JSON");
      return;
    }
    const std::string type = j.is_object() ? j.value("type", "") : "";
    try {
      if (type == "finetune_now") {
        schedule(1, fd);
      } else if (type == "swap_model") {
        const auto v = j.at("v").get<std::uint64_t>();
        const auto cur = engine_.current_version();
        if (v == cur) {
          send_to(fd, nlohmann::json{{"type", "ack"}, {"cmd", type}, {"version", cur}, {"noop", true}}.dump());
          return;
        }
        auto snap = server_.snapshot(v);
        if (!snap) {
          reject(type, "unknown version", {{"available", server_.available_versions()}});
          return;
        }
        engine_.swap_weights(snap);
        broadcast({{"type", "model_version"}, {"v", engine_.current_version()}});
        send_to(fd, nlohmann::json{{"type", "ack"}, {"cmd", type}, {"version", engine_.current_version()}, {"noop", false}}.dump());
      } else if (type == "start_gesture") {
        const int id = j.at("id").get<int>();
        if (id < 0 || id >= kGestureCount) {
          reject(type, "gesture id out of range", {{"range", {0, kGestureCount - 1}}});
          return;
        }
        source_.set_gesture(id);
        send_to(fd, nlohmann::json{{"type", "ack"}, {"cmd", type}, {"id", id}}.dump());
        broadcast({{"type", "gesture_state"}, {"id", id}, {"active", true}});
      } else if (type == "stop_gesture") {
        source_.set_gesture(-1);
        send_to(fd, nlohmann::json{{"type", "ack"}, {"cmd", type}, {"id", -1}}.dump());
        broadcast({{"type", "gesture_state"}, {"id", -1}, {"active", false}});
      } else if (type == "set_alpha") {
        const double a = j.at("alpha").get<double>();
        if (!(a > 0 && a <= 1)) {
          reject(type, "alpha must lie in (0, 1]");
          return;
        }
        engine_.set_ema_alpha(a);
        send_to(fd, nlohmann::json{{"type", "ack"}, {"cmd", type}, {"alpha", a}}.dump());
      } else {
        reject(type, "unknown command");
      }
    } catch (const nlohmann::json::exception& e) {
      reject(type, std::string("bad arguments: ") + e.what());
    } catch (const Error& e) {
      reject(type, e.what());
    }
  }

  bool service(WsClient& c) {
    Bytes buf;
    const ssize_t k = net::read_some(c.sock.fd(), buf);
    if (k == 0) return false;
    if (k < 0) return true;
    c.in.append(buf.begin(), buf.end());
    if (!c.upgraded) {
      std::size_t used = 0;
      std::optional<ws::HttpRequest> req;
      try {
        req = ws::parse_request(c.in, &used);
      } catch (const Error&) {
        return false;
      }
      if (!req) return c.in.size() < 16384;
      c.in.erase(0, used);
      if (req->path != "/ws" || !req->header("Sec-WebSocket-Key")) {
        const std::string resp = "HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
        net::send_all(c.sock.fd(), resp.data(), resp.size());
        return false;
      }
      const std::string resp = ws::handshake_response(*req);
      if (!net::send_all(c.sock.fd(), resp.data(), resp.size())) return false;
      c.upgraded = true;
      const std::string hello =
          ws::encode_frame(ws::Opcode::text, nlohmann::json{{"type", "model_version"}, {"v", engine_.current_version()}}.dump());
      net::send_all(c.sock.fd(), hello.data(), hello.size());
    }
    try {
      while (auto f = ws::decode_frame(c.in)) {
        if (f->op == ws::Opcode::close) {
          const std::string bye = ws::encode_frame(ws::Opcode::close, "");
          net::send_all(c.sock.fd(), bye.data(), bye.size());
          return false;
        }
        if (f->op == ws::Opcode::ping) {
          const std::string pong = ws::encode_frame(ws::Opcode::pong, f->payload);
          net::send_all(c.sock.fd(), pong.data(), pong.size());
        } else if (f->op == ws::Opcode::text) {
          handle_command(c.sock.fd(), f->payload);
        }
      }
    } catch (const Error&) {
      return false;
    }
    return true;
  }

  void poll_network(int timeout_ms) {
    std::vector<pollfd> fds;
    fds.push_back({listener_.fd(), POLLIN, 0});
    for (auto& [fd, c] : clients_) fds.push_back({fd, POLLIN, 0});
    ::poll(fds.data(), fds.size(), std::max(0, timeout_ms));
    if (fds[0].revents & POLLIN)
      for (;;) {
        net::Socket s = net::accept_tcp(listener_.fd());
        if (!s.valid()) break;
        const int fd = s.fd();
        clients_.emplace(fd, WsClient{std::move(s), {}, false});
      }
    for (std::size_t i = 1; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      auto it = clients_.find(fds[i].fd);
      if (it != clients_.end() && !service(it->second)) dead_.push_back(fds[i].fd);
    }
    flush_replies();
    for (int fd : dead_) clients_.erase(fd);
    dead_.clear();
  }

  DemoOptions opt_;
  AdaptServer server_;
  RealtimeEngine engine_;
  LiveSource source_;
  TickScheduler scheduler_;
  net::Socket listener_;
  std::map<int, WsClient> clients_;
  std::vector<int> dead_;

  std::deque<Eigen::RowVectorXf> emg_hist_;
  std::deque<PoseFrame> truth_hist_;
  std::deque<PoseFrame> recent_pred_, recent_truth_;
  std::uint64_t samples_ = 0;

  std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::deque<Job> jobs_;
  bool quit_ = false;
  std::thread worker_;

  std::mutex reply_mu_;
  std::vector<std::pair<int, std::string>> replies_;
};

}  // namespace alvi
