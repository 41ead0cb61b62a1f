#pragma once

// TCP front end for AdaptServer speaking the framed wire protocol.
//
// Clients send pair_submit, subscribe and control frames. Subscribers get the
// latest snapshot on subscribe and every new snapshot as a weights frame.
// Control bodies are JSON objects with a "cmd" field:
//   status | finetune_now | save_history | advance {"seconds": s} (simulated clock only)
// and are answered with a control frame {"ok": bool, ...}.

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "alvi/adapt_server.hpp"
#include "alvi/net.hpp"
#include "alvi/weights_io.hpp"

namespace alvi {

struct ServiceOptions {
  std::uint16_t port = 7342;
  bool sim_clock = false;
  bool loopback_only = false;
  std::string history_path;
};

inline WeightsBlob snapshot_message(const ModelState& s) { return WeightsBlob{s.version, save_weights(s)}; }

class AdaptService {
 public:
  AdaptService(AdaptServer& server, ServiceOptions opt)
      : server_(server), opt_(std::move(opt)), scheduler_(server.policy().tick_interval) {
    listener_ = net::listen_tcp(opt_.port, opt_.loopback_only);
    net::set_nonblocking(listener_.fd());
    int p[2];
    if (::pipe(p) != 0) net::sys_fail("pipe");
    wake_rd_ = net::Socket(p[0]);
    wake_wr_ = net::Socket(p[1]);
    net::set_nonblocking(wake_rd_.fd());
    server_.on_snapshot([this](const ModelSnapshot& s) {
      {
        std::lock_guard lock(out_mu_);
        pending_snapshots_.push_back(s);
      }
      wake();
    });
    worker_ = std::thread([this] { worker_loop(); });
  }

  ~AdaptService() {
    {
      std::lock_guard lock(job_mu_);
      quit_ = true;
    }
    job_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
    server_.clear_listeners();
  }

  std::uint16_t port() const { return net::local_port(listener_.fd()); }

  std::uint64_t ticks_fired() const { return server_.ticks(); }

  /// Serve until `stop` becomes true.
  void run(const std::atomic<bool>& stop) {
    while (!stop.load()) {
      std::vector<pollfd> fds;
      fds.push_back({listener_.fd(), POLLIN, 0});
      fds.push_back({wake_rd_.fd(), POLLIN, 0});
      for (auto& [fd, c] : clients_) fds.push_back({fd, POLLIN, 0});
      ::poll(fds.data(), fds.size(), 100);

      if (fds[0].revents & POLLIN)
        for (;;) {
          net::Socket s = net::accept_tcp(listener_.fd());
          if (!s.valid()) break;
          const int fd = s.fd();
          Client c;
          c.sock = std::move(s);
          clients_.emplace(fd, std::move(c));
        }
      if (fds[1].revents & POLLIN) {
        char drain[256];
        while (::read(wake_rd_.fd(), drain, sizeof drain) > 0) {
        }
      }
      std::vector<int> dead;
      for (std::size_t i = 2; i < fds.size(); ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        if (!service_client(fds[i].fd)) dead.push_back(fds[i].fd);
      }
      for (int fd : dead) clients_.erase(fd);

      if (!opt_.sim_clock) schedule(scheduler_.advance(wall_.now(), false));
      flush_outbox();
    }
    if (!opt_.history_path.empty()) server_.save_history(opt_.history_path);
  }

 private:
  struct Client {
    net::Socket sock;
    FrameReader reader{};
    bool subscribed = false;
    std::uint64_t sent_version = 0;
    bool sent_any = false;
  };

  struct Job {
    int reply_fd = -1;  // -1: scheduled tick, no reply
  };

  void wake() {
    const char b = 1;
    [[maybe_unused]] auto n = ::write(wake_wr_.fd(), &b, 1);
  }

  void schedule(int n) {
    if (n <= 0) return;
    {
      std::lock_guard lock(job_mu_);
      for (int i = 0; i < n; ++i) jobs_.push_back(Job{});
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
      if (job.reply_fd >= 0) {
        nlohmann::json j = {{"ok", r.status == TickStatus::applied}, {"cmd", "finetune_now"}, {"status", to_string(r.status)},
                            {"version", r.version}, {"loss", r.mean_loss}};
        if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
        std::lock_guard lock(out_mu_);
        pending_replies_.emplace_back(job.reply_fd, j.dump());
      }
      wake();
    }
  }

  void send_snapshot(Client& c, const ModelSnapshot& s) {
    if (c.sent_any && s->version <= c.sent_version) return;
    if (net::send_message(c.sock.fd(), snapshot_message(*s))) {
      c.sent_version = s->version;
      c.sent_any = true;
    }
  }

  void flush_outbox() {
    std::vector<ModelSnapshot> snaps;
    std::vector<std::pair<int, std::string>> replies;
    {
      std::lock_guard lock(out_mu_);
      snaps.swap(pending_snapshots_);
      replies.swap(pending_replies_);
    }
    for (const auto& s : snaps)
      for (auto& [fd, c] : clients_)
        if (c.subscribed) send_snapshot(c, s);
    for (auto& [fd, body] : replies)
      if (auto it = clients_.find(fd); it != clients_.end()) net::send_message(fd, ControlMsg{body});
  }

  void reply(int fd, const nlohmann::json& j) { net::send_message(fd, ControlMsg{j.dump()}); }

  void handle_control(int fd, const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      reply(fd, {{"ok", false}, {"error", "control body is not JSON"}});
      return;
    }
    const std::string cmd = j.value("cmd", "");
    if (cmd == "status") {
      reply(fd, {{"ok", true},
                 {"cmd", cmd},
                 {"version", server_.latest()->version},
                 {"recent", server_.recent_size()},
                 {"historical", server_.historical_size()},
                 {"accepted", server_.total_accepted()},
                 {"ticks", server_.ticks()},
                 {"rollbacks", server_.rollbacks()}});
    } else if (cmd == "finetune_now") {
      {
        std::lock_guard lock(job_mu_);
        jobs_.push_back(Job{fd});
      }
      job_cv_.notify_one();
    } else if (cmd == "save_history") {
      if (opt_.history_path.empty()) {
        reply(fd, {{"ok", false}, {"cmd", cmd}, {"error", "no history path configured"}});
        return;
      }
      server_.save_history(opt_.history_path);
      reply(fd, {{"ok", true}, {"cmd", cmd}, {"path", opt_.history_path}});
    } else if (cmd == "advance") {
      if (!opt_.sim_clock) {
        reply(fd, {{"ok", false}, {"cmd", cmd}, {"error", "clock is not simulated"}});
        return;
      }
      sim_.advance(j.value("seconds", 0.0));
      const int n = scheduler_.advance(sim_.now());
      schedule(n);
      reply(fd, {{"ok", true}, {"cmd", cmd}, {"now", sim_.now()}, {"ticks_scheduled", n}});
    } else {
      reply(fd, {{"ok", false}, {"cmd", cmd}, {"error", "unknown command"}});
    }
  }

  bool service_client(int fd) {
    auto it = clients_.find(fd);
    if (it == clients_.end()) return false;
    Client& c = it->second;
    Bytes buf;
    const ssize_t k = net::read_some(fd, buf);
    if (k == 0) return false;
    if (k < 0) return true;
    c.reader.feed(buf);
    try {
      while (auto m = c.reader.next()) {
        if (auto* ps = std::get_if<PairSubmit>(&*m)) {
          const auto r = server_.submit(ps->pairs);
          if (opt_.sim_clock && !ps->pairs.empty()) {
            double t = sim_.now();
            for (const auto& p : ps->pairs) t = std::max(t, p.t_end);
            sim_.set(t);
            schedule(scheduler_.advance(sim_.now()));
          }
          if (!r.diagnostics.empty())
            reply(fd, {{"ok", false}, {"cmd", "pair_submit"}, {"accepted", r.accepted}, {"diagnostics", r.diagnostics}});
        } else if (std::get_if<Subscribe>(&*m)) {
          c.subscribed = true;
          send_snapshot(c, server_.latest());
        } else if (auto* ctl = std::get_if<ControlMsg>(&*m)) {
          handle_control(fd, ctl->body);
        } else {
          reply(fd, {{"ok", false}, {"error", "unexpected message type for the adaptation service"}});
        }
      }
    } catch (const Error& e) {
      reply(fd, {{"ok", false}, {"error", e.what()}});
      return false;
    }
    return true;
  }

  AdaptServer& server_;
  ServiceOptions opt_;
  TickScheduler scheduler_;
  SimClock sim_;
  SteadyClock wall_;
  net::Socket listener_, wake_rd_, wake_wr_;
  std::map<int, Client> clients_;

  std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::deque<Job> jobs_;
  bool quit_ = false;
  std::thread worker_;

  std::mutex out_mu_;
  std::vector<ModelSnapshot> pending_snapshots_;
  std::vector<std::pair<int, std::string>> pending_replies_;
};

}  // namespace alvi
