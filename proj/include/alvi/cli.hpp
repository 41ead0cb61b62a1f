#pragma once

// Command-line entry points. Exit codes: 0 success, 2 usage, 3 runtime failure.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "alvi/adapt_service.hpp"
#include "alvi/config.hpp"
#include "alvi/demo.hpp"
#include "alvi/evalkit.hpp"
#include "alvi/net.hpp"
#include "alvi/realtime.hpp"
#include "alvi/session_io.hpp"
#include "alvi/synthgen.hpp"
#include "alvi/training.hpp"
#include "alvi/weights_io.hpp"

namespace alvi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

struct Options {
  std::string verb;
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string model;
  std::vector<std::string> sessions;
  int port = -1;
  bool sim_clock = false;
  int steps = -1;
  int stride = -1;
  // verb-specific
  int gestures = -1;
  double duration = -1;
  std::string script;
  std::string hand;
  int batch = -1;
  bool fixed_batch = false;
  bool oracle = false;
  bool all_frames = false;
  bool json_out = false;
  std::string snapshot_dir;
  std::string history;
  std::string connect;
  int listen = -1;
  bool paced = false;
  double seconds = -1;
  int seeds = 1;
};

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline void install_signal_handlers() {
  std::signal(SIGINT, [](int) { stop_flag().store(true); });
  std::signal(SIGTERM, [](int) { stop_flag().store(true); });
}

inline AppConfig resolve_config(const Options& o) {
  AppConfig c = o.config_path.empty() ? AppConfig{} : load_config(o.config_path);
  if (o.seed_set) {
    c.model.seed = o.seed;
    c.train.seed = o.seed;
    c.policy.seed = o.seed;
  }
  if (o.stride > 0) c.train.stride = static_cast<std::size_t>(o.stride);
  if (o.batch > 0) c.train.batch_size = o.batch;
  if (o.gestures > 0) c.synth.gestures = o.gestures;
  if (o.duration > 0) c.synth.gesture_seconds = o.duration;
  if (!o.script.empty()) c.synth.script = o.script;
  if (!o.hand.empty()) c.synth.hand = o.hand;
  c.validate();
  return c;
}

inline std::vector<WindowPair> load_windows(const std::vector<std::string>& paths, std::size_t stride) {
  std::vector<WindowPair> all;
  for (const auto& p : paths) {
    auto w = make_windows(load_session(p), stride);
    all.insert(all.end(), w.begin(), w.end());
  }
  return all;
}

inline ModelState load_or_init(const std::string& path, const AppConfig& c) {
  if (path.empty()) return make_model(c.model, c.adam);
  ModelState s = load_weights_file(path);
  s.adam = c.adam;
  return s;
}

inline void print_loss(const char* stage, int step, double loss) { std::printf("%s step %d loss %.6f\n", stage, step, loss); }

inline int cmd_synth(const Options& o, const AppConfig& c) {
  const auto script = c.synth.script == "mixed" ? mixed_script(c.synth.gestures, c.synth.gesture_seconds)
                                                : standard_script(c.synth.gestures, c.synth.gesture_seconds);
  SessionRecording s = generate_session(script, default_muscle_model(c.synth.muscle_seed), o.seed);
  if (c.synth.hand == "left") s.hand = Hand::left;
  save_session(s, o.out);
  std::printf("wrote %s: %.1f s, %zu gestures, muscle model %s\n", o.out.c_str(), s.emg.duration(), s.annotations.size(),
              s.model_hash.c_str());
  return kExitOk;
}

inline int cmd_pretrain(const Options& o, const AppConfig& c) {
  ModelState s = load_or_init(o.model, c);
  const auto windows = emg_only(load_windows(o.sessions, c.train.stride));
  const int steps = o.steps >= 0 ? o.steps : c.train.mae_steps;
  Rng rng(c.train.seed);
  if (o.fixed_batch) {
    std::vector<MaeExample> batch;
    for (int k = 0; k < c.train.batch_size && k < static_cast<int>(windows.size()); ++k)
      batch.push_back({windows[static_cast<std::size_t>(k)], windows[static_cast<std::size_t>(k)],
                       sample_mask(static_cast<std::size_t>(s.config.token_count()), s.config.mask_ratio, rng)});
    const double first = mae_loss<float>(s.config, s.params, batch);
    double last = first;
    for (int i = 0; i < steps; ++i) {
      ParamSet<float> g = s.params.zeros_like();
      last = mae_loss<float>(s.config, s.params, batch, &g);
      adam_update(s, g);
      if (i % c.train.log_every == 0) print_loss("mae", i, last);
    }
    last = mae_loss<float>(s.config, s.params, batch);
    std::printf("fixed batch: initial %.6f final %.6f ratio %.3f\n", first, last, last / first);
  } else {
    const double last = pretrain(s, windows, steps, c.train.batch_size, rng, print_loss, c.train.log_every);
    std::printf("final loss %.6f\n", last);
  }
  save_weights_file(s, o.out);
  return kExitOk;
}

inline int cmd_train(const Options& o, const AppConfig& c) {
  ModelState s = make_model(c.model, c.adam);
  if (!o.model.empty()) {
    const ModelState pre = load_weights_file(o.model);
    require(pre.config.shape_compatible(s.config), ErrorCode::config_mismatch, "pretrained model does not match the configured model");
    load_encoder_from(s, pre);
  }
  const auto pairs = load_windows(o.sessions, c.train.stride);
  Rng rng(c.train.seed);
  const int steps = o.steps >= 0 ? o.steps : c.train.finetune_steps;
  const double last = finetune(s, pairs, steps, c.train.batch_size, rng, print_loss, c.train.log_every);
  std::printf("final loss %.6f on %zu windows\n", last, pairs.size());
  save_weights_file(s, o.out);
  return kExitOk;
}

inline int cmd_eval(const Options& o, const AppConfig& c) {
  const auto windows = load_windows(o.sessions, c.train.stride);
  const auto frames = o.all_frames ? FrameSelection::all_frames : FrameSelection::last_frame;
  EvalReport r;
  if (o.oracle) {
    r = evaluate_windows(windows, oracle_predictor(), frames);
  } else {
    const ModelState s = load_weights_file(o.model);
    r = evaluate_windows(windows, model_predictor(s), frames);
    r.model_version = s.version;
  }
  if (o.json_out)
    std::cout << nlohmann::json(r).dump(2) << "\n";
  else
    std::cout << format_report(r);
  if (!o.out.empty()) {
    std::ofstream f(o.out);
    f << nlohmann::json(r).dump(2) << "\n";
  }
  return kExitOk;
}

inline int cmd_serve_adapt(const Options& o, const AppConfig& c) {
  std::string snap_dir = o.snapshot_dir.empty() ? "snapshots" : o.snapshot_dir;
  AdaptServer server(load_or_init(o.model, c), c.policy, snap_dir);
  if (!o.history.empty() && std::filesystem::exists(o.history)) server.load_history(o.history);
  ServiceOptions so;
  so.port = static_cast<std::uint16_t>(o.port >= 0 ? o.port : 7342);
  so.sim_clock = o.sim_clock;
  so.history_path = o.history;
  AdaptService service(server, so);
  std::printf("adaptation service on port %u (%s clock), snapshots in %s\n", service.port(), o.sim_clock ? "simulated" : "wall",
              snap_dir.c_str());
  std::fflush(stdout);
  install_signal_handlers();
  service.run(stop_flag());
  return kExitOk;
}

/// Subscribes to an adaptation service and forwards snapshots to an engine.
class SnapshotSubscriber {
 public:
  SnapshotSubscriber(const std::string& host_port, RealtimeEngine& engine) : engine_(engine) {
    const auto colon = host_port.rfind(':');
    const std::string host = colon == std::string::npos ? "127.0.0.1" : host_port.substr(0, colon);
    const auto port = static_cast<std::uint16_t>(std::stoi(colon == std::string::npos ? host_port : host_port.substr(colon + 1)));
    sock_ = net::connect_tcp(host, port);
    net::send_message(sock_.fd(), Subscribe{"run-rt"});
    thread_ = std::thread([this] { loop(); });
  }
  ~SnapshotSubscriber() {
    stop_ = true;
    ::shutdown(sock_.fd(), SHUT_RDWR);
    if (thread_.joinable()) thread_.join();
  }
  std::uint64_t received() const { return received_.load(); }

 private:
  void loop() {
    FrameReader reader;
    std::uint64_t newest = 0;
    while (!stop_) {
      std::optional<Message> m;
      try {
        m = net::recv_message(sock_.fd(), reader, 200);
      } catch (const Error&) {
        return;
      }
      if (!m) continue;
      if (auto* w = std::get_if<WeightsBlob>(&*m)) {
        if (received_ > 0 && w->version <= newest) continue;
        try {
          engine_.post_snapshot(std::make_shared<const ModelState>(load_weights(w->data)));
          newest = w->version;
          ++received_;
        } catch (const Error& e) {
          std::fprintf(stderr, "snapshot v%llu rejected: %s\n", static_cast<unsigned long long>(w->version), e.what());
        }
      }
    }
  }

  RealtimeEngine& engine_;
  net::Socket sock_;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> received_{0};
};

inline void print_engine_stats(const RealtimeEngine& e) {
  const auto st = e.latency_report();
  std::printf("frames emitted %llu dropped %llu ticks %llu model v%llu\n", static_cast<unsigned long long>(st.frames_emitted),
              static_cast<unsigned long long>(st.frames_dropped), static_cast<unsigned long long>(st.ticks),
              static_cast<unsigned long long>(st.model_version));
  std::printf("tick ms p50 %.3f p99 %.3f max %.3f (deadline %.1f, overruns %llu)\n", st.tick_ms_p50, st.tick_ms_p99, st.tick_ms_max,
              st.deadline_ms, static_cast<unsigned long long>(st.deadline_overruns));
  std::printf("algorithmic latency %.1f ms of %.1f ms budget\n", st.algorithmic_latency_ms, st.latency_budget_ms);
}

inline int cmd_run_rt(const Options& o, const AppConfig& c) {
  RealtimeEngine engine(std::make_shared<const ModelState>(load_or_init(o.model, c)), c.engine);
  std::unique_ptr<SnapshotSubscriber> sub;
  if (!o.connect.empty()) sub = std::make_unique<SnapshotSubscriber>(o.connect, engine);
  std::vector<EmittedFrame> frames;
  auto consume = [&](const SampleChunk& chunk) {
    auto f = engine.ingest(chunk);
    frames.insert(frames.end(), f.begin(), f.end());
  };
  if (!o.sessions.empty()) {
    const SessionRecording s = load_session(o.sessions.front());
    const int hop = engine.config().hop();
    const auto start = std::chrono::steady_clock::now();
    for (Eigen::Index i = 0; i + hop <= s.emg.size(); i += hop) {
      SampleChunk chunk;
      chunk.stream_id = kEmgStreamId;
      chunk.t0 = s.emg.time_at(i);
      chunk.rate = static_cast<float>(s.emg.rate);
      chunk.samples = s.emg.values.middleRows(i, hop).cast<float>();
      if (s.hand == Hand::left) chunk.samples = mirror_channels<float>(chunk.samples.transpose()).transpose();
      consume(chunk);
      if (o.paced) std::this_thread::sleep_until(start + std::chrono::duration<double>(static_cast<double>(i + hop) / s.emg.rate));
      if (stop_flag().load()) break;
    }
  } else if (o.listen >= 0) {
    install_signal_handlers();
    net::Socket l = net::listen_tcp(static_cast<std::uint16_t>(o.listen));
    std::printf("waiting for an EMG stream on port %u\n", net::local_port(l.fd()));
    std::fflush(stdout);
    net::Socket peer = net::accept_tcp(l.fd());
    FrameReader reader;
    while (!stop_flag().load()) {
      bool closed = false;
      auto m = net::recv_message(peer.fd(), reader, 500, &closed);
      if (closed) break;
      if (!m) continue;
      if (auto* chunk = std::get_if<SampleChunk>(&*m)) {
        auto f = engine.ingest(*chunk);
        if (!f.empty()) net::send_message(peer.fd(), frames_to_chunk(f));
        frames.insert(frames.end(), f.begin(), f.end());
      }
    }
  } else {
    fail(ErrorCode::invalid_argument, "run-rt needs --session PATH or --listen PORT");
  }
  print_engine_stats(engine);
  if (!o.out.empty() && !frames.empty()) {
    Container ct;
    ct.header = {{"format", "alvs"}, {"kind", "pose_output"}, {"version", 1}, {"frames", frames.size()}};
    ct.frames.emplace_back(frames_to_chunk(frames));
    write_file(o.out, encode_container(ct));
  }
  return kExitOk;
}

inline int cmd_bench(const Options& o, const AppConfig& c) {
  const ModelState model = load_or_init(o.model, c);
  const double seconds = o.seconds > 0 ? o.seconds : 10.0;
  const SessionRecording s = generate_session(mixed_script(2, seconds / 2 + 1.0), default_muscle_model(c.synth.muscle_seed), o.seed);
  RealtimeEngine engine(std::make_shared<const ModelState>(model), c.engine);
  const int hop = engine.config().hop();
  for (Eigen::Index i = 0; i + hop <= s.emg.size(); i += hop) {
    SampleChunk chunk;
    chunk.stream_id = kEmgStreamId;
    chunk.t0 = s.emg.time_at(i);
    chunk.rate = static_cast<float>(s.emg.rate);
    chunk.samples = s.emg.values.middleRows(i, hop).cast<float>();
    engine.ingest(chunk);
  }
  std::printf("realtime engine, d_model %d, %d encoder layers\n", model.config.d_model, model.config.n_encoder_layers);
  print_engine_stats(engine);

  const auto pairs = make_windows(s, 40);
  ModelState m = model;
  const int steps = o.steps > 0 ? o.steps : 5;
  std::vector<WindowPair> batch(pairs.begin(), pairs.begin() + std::min<std::ptrdiff_t>(c.train.batch_size, static_cast<std::ptrdiff_t>(pairs.size())));
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < steps; ++i) finetune_step(m, batch);
  const double ft = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / steps;
  Rng rng(0);
  t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < steps; ++i) mae_step(m, emg_only(batch), rng);
  const double mae = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / steps;
  std::printf("finetune step %.1f ms, mae step %.1f ms (batch %zu)\n", ft, mae, batch.size());
  return kExitOk;
}

inline int cmd_demo(const Options& o, const AppConfig& c) {
  DemoOptions d;
  d.port = static_cast<std::uint16_t>(o.port >= 0 ? o.port : 7343);
  d.seed = o.seed;
  d.muscle_seed = c.synth.muscle_seed;
  d.engine = c.engine;
  d.policy = c.policy;
  d.paced = !o.sim_clock;
  d.duration = o.seconds > 0 ? o.seconds : 0.0;
  d.snapshot_dir = o.snapshot_dir;
  d.pair_stride = c.train.stride;
  DemoBridge bridge(load_or_init(o.model, c), d);
  std::printf("demo bridge on ws://127.0.0.1:%u/ws (%s clock)\n", bridge.port(), o.sim_clock ? "simulated" : "wall");
  std::fflush(stdout);
  install_signal_handlers();
  bridge.run(stop_flag());
  print_engine_stats(bridge.engine());
  return kExitOk;
}

inline int run(int argc, char** argv) {
  CLI::App app{"alvi: synthetic sEMG to hand pose pipeline"};
  app.require_subcommand(1);
  Options o;
  auto common = [&o](CLI::App* sc) {
    sc->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sc->add_option_function<std::uint64_t>("--seed", [&o](const std::uint64_t& v) { o.seed = v; o.seed_set = true; }, "random seed");
  };
  auto with_sessions = [&o](CLI::App* sc, bool required) {
    auto* opt = sc->add_option("--session", o.sessions, "session file(s)")->check(CLI::ExistingFile);
    if (required) opt->required();
    sc->add_option("--stride", o.stride, "window stride in EMG samples")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic session");
  common(synth);
  synth->add_option("--out", o.out, "output session file")->required();
  synth->add_option("--gestures", o.gestures, "number of gestures")->check(CLI::Range(1, kGestureCount));
  synth->add_option("--duration", o.duration, "seconds per gesture")->check(CLI::PositiveNumber);
  synth->add_option("--script", o.script, "standard or mixed")->check(CLI::IsMember({"standard", "mixed"}));
  synth->add_option("--hand", o.hand, "right or left")->check(CLI::IsMember({"right", "left"}));

  auto* pre = app.add_subcommand("pretrain", "masked-autoencoder pretraining");
  common(pre);
  with_sessions(pre, true);
  pre->add_option("--out", o.out, "output weights file")->required();
  pre->add_option("--model", o.model, "initial weights")->check(CLI::ExistingFile);
  pre->add_option("--steps", o.steps, "optimizer steps")->check(CLI::NonNegativeNumber);
  pre->add_option("--batch", o.batch, "batch size")->check(CLI::PositiveNumber);
  pre->add_flag("--fixed-batch", o.fixed_batch, "train on one fixed batch and report the loss ratio");

  auto* train = app.add_subcommand("train", "supervised L1 fine-tuning");
  common(train);
  with_sessions(train, true);
  train->add_option("--out", o.out, "output weights file")->required();
  train->add_option("--model", o.model, "pretrained weights (encoder is loaded)")->check(CLI::ExistingFile);
  train->add_option("--steps", o.steps, "optimizer steps")->check(CLI::NonNegativeNumber);
  train->add_option("--batch", o.batch, "batch size")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "evaluate a model on sessions");
  common(ev);
  with_sessions(ev, true);
  ev->add_option("--model", o.model, "weights file")->check(CLI::ExistingFile);
  ev->add_flag("--oracle", o.oracle, "score the ground truth against itself");
  ev->add_flag("--all-frames", o.all_frames, "score all 32 frames instead of the last");
  ev->add_flag("--json", o.json_out, "print JSON");
  ev->add_option("--out", o.out, "write the JSON report here");

  auto* serve = app.add_subcommand("serve-adapt", "run the adaptation service");
  common(serve);
  serve->add_option("--port", o.port, "TCP port (default 7342)")->check(CLI::Range(0, 65535));
  serve->add_option("--model", o.model, "initial weights")->check(CLI::ExistingFile);
  serve->add_flag("--sim-clock", o.sim_clock, "drive ticks from submitted data time");
  serve->add_option("--snapshot-dir", o.snapshot_dir, "directory for model_v*.alvw");
  serve->add_option("--history", o.history, "historical replay store (loaded at start, saved at exit)");

  auto* rt = app.add_subcommand("run-rt", "run the realtime engine");
  common(rt);
  with_sessions(rt, false);
  rt->add_option("--model", o.model, "weights file")->check(CLI::ExistingFile);
  rt->add_option("--listen", o.listen, "accept an EMG stream on this port")->check(CLI::Range(0, 65535));
  rt->add_option("--connect", o.connect, "adaptation service host:port to subscribe to");
  rt->add_option("--out", o.out, "write emitted frames to a container file");
  rt->add_flag("--paced", o.paced, "replay at wall-clock speed");

  auto* bench = app.add_subcommand("bench", "latency and throughput");
  common(bench);
  bench->add_option("--model", o.model, "weights file")->check(CLI::ExistingFile);
  bench->add_option("--seconds", o.seconds, "seconds of EMG to replay")->check(CLI::PositiveNumber);
  bench->add_option("--steps", o.steps, "training steps to time")->check(CLI::PositiveNumber);

  auto* demo = app.add_subcommand("demo", "synthetic feed + engine + adaptation + dashboard bridge");
  common(demo);
  demo->add_option("--port", o.port, "websocket port (default 7343)")->check(CLI::Range(0, 65535));
  demo->add_option("--model", o.model, "initial weights")->check(CLI::ExistingFile);
  demo->add_flag("--sim-clock", o.sim_clock, "run the feed as fast as possible on stream time");
  demo->add_option("--seconds", o.seconds, "stop after this much stream time")->check(CLI::PositiveNumber);
  demo->add_option("--snapshot-dir", o.snapshot_dir, "directory for model_v*.alvw");
  demo->add_option("--stride", o.stride, "pair stride in EMG samples")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    const AppConfig c = [&] {
      try {
        return resolve_config(o);
      } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        throw CLI::ValidationError("config", e.what());
      }
    }();
    if (synth->parsed()) return cmd_synth(o, c);
    if (pre->parsed()) return cmd_pretrain(o, c);
    if (train->parsed()) return cmd_train(o, c);
    if (ev->parsed()) {
      if (!o.oracle && o.model.empty()) {
        std::fprintf(stderr, "error: eval needs --model or --oracle\n");
        return kExitUsage;
      }
      return cmd_eval(o, c);
    }
    if (serve->parsed()) return cmd_serve_adapt(o, c);
    if (rt->parsed()) return cmd_run_rt(o, c);
    if (bench->parsed()) return cmd_bench(o, c);
    if (demo->parsed()) return cmd_demo(o, c);
  } catch (const CLI::ValidationError&) {
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace alvi::cli
