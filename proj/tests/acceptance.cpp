// Acceptance run: one PASS/FAIL line per primary criterion.
//
// Usage: alvi_acceptance [criterion ...]   (default: all of 1..10)

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "alvi/adapt_server.hpp"
#include "alvi/cli.hpp"
#include "alvi/evalkit.hpp"
#include "alvi/grad_check.hpp"
#include "alvi/realtime.hpp"
#include "alvi/training.hpp"
#include "test_util.hpp"

using namespace alvi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

#define CHECK_OR_FAIL(cond, msg)               \
  do {                                         \
    if (!(cond)) return Outcome{false, (msg)}; \
  } while (0)

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<SampleChunk> emg_chunks(const SessionRecording& s, int per_chunk = 8) {
  std::vector<SampleChunk> out;
  for (Eigen::Index i = 0; i + per_chunk <= s.emg.size(); i += per_chunk)
    out.push_back({kEmgStreamId, i / kEmgRate, static_cast<float>(kEmgRate), s.emg.values.middleRows(i, per_chunk).cast<float>()});
  return out;
}

bool same_state(const ModelState& a, const ModelState& b) { return a.version == b.version && bit_identical(a, b); }

Outcome shape_pipeline() {
  const auto t0 = std::chrono::steady_clock::now();
  const SessionRecording s = generate_session(mixed_script(5, 11.2), default_muscle_model(1), 11);
  CHECK_OR_FAIL(std::abs(s.duration() - 60.0) < 0.01, "session is not 60 s");
  const auto windows = make_windows(s, 40);
  const ModelState m = make_model(StudyConfig{}.model);
  for (const auto& w : windows) {
    const MatF p = forward(m, w.emg);
    CHECK_OR_FAIL(p.rows() == 32 && p.cols() == 20, fmt("prediction shape %ldx%ld", (long)p.rows(), (long)p.cols()));
  }
  const EvalReport r = evaluate_windows(windows, model_predictor(m));
  const double secs = seconds_since(t0);
  CHECK_OR_FAIL(secs < 30.0, fmt("took %.1f s", secs));
  return {true, fmt("%zu windows of 32x20, eval corr %.3f, %.1f s", windows.size(), r.mean_correlation, secs)};
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::vector<MatF> ws;
  for (int i = 0; i < 2; ++i) ws.push_back(test::random_matrix(8, 256, rng));
  double worst[2] = {0, 0};
  for (int k = 0; k < 2; ++k) {
    ModelConfig c = tiny_config();
    c.seed = 3 + k;
    const ModelState s = make_model(c);
    GradCheckOptions opt;
    opt.loss = k == 0 ? CheckedLoss::l1 : CheckedLoss::mae;
    opt.seed = 4 + k;
    const auto r = grad_check(s, tie_free_batch(s, ws, 2 + k), opt);
    worst[k] = r.max_rel_error;
    CHECK_OR_FAIL(r.max_rel_error < 1e-4, fmt("%s max rel error %.3g at %s", k ? "mae" : "l1", r.max_rel_error, r.worst_param.c_str()));
  }
  const double secs = seconds_since(t0);
  CHECK_OR_FAIL(secs < 120.0, fmt("took %.1f s", secs));
  return {true, fmt("l1 %.2e, mae %.2e, %.1f s", worst[0], worst[1], secs)};
}

Outcome mae_mechanics() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2);
  const TokenMask mask = sample_mask(256, 0.7, rng);
  const auto masked = static_cast<std::size_t>(std::count(mask.masked.begin(), mask.masked.end(), true));
  CHECK_OR_FAIL(masked == 179, fmt("%zu masked tokens", masked));

  ModelConfig mc = StudyConfig{}.model;
  mc.init_std = 0.02;
  ModelState s = make_model(mc, AdamConfig{1e-3});
  const auto pairs = make_windows(generate_session(mixed_script(2, 5.0), default_muscle_model(1), 5), 200);
  std::vector<MaeExample> ex;
  for (int i = 0; i < 4; ++i) ex.push_back({pairs[i].emg, pairs[i].emg, sample_mask(256, 0.7, rng)});

  // Perturb the targets of visible tokens only.
  std::vector<MaeExample> perturbed = ex;
  for (auto& e : perturbed) {
    MatF tok = tokenize<float>(e.target, s.config);
    for (Eigen::Index t = 0; t < tok.rows(); ++t)
      if (!e.mask.masked[static_cast<std::size_t>(t)]) tok.row(t).array() += 0.5f;
    e.target = detokenize(tok, s.config);
  }
  const double a = mae_loss<float>(s.config, s.params, ex, nullptr), b = mae_loss<float>(s.config, s.params, perturbed, nullptr);
  CHECK_OR_FAIL(a == b, fmt("loss moved from %.9g to %.9g", a, b));

  double first = 0, last = 0;
  for (int k = 0; k < 200; ++k) {
    ParamSet<float> g = s.params.zeros_like();
    last = mae_loss<float>(s.config, s.params, ex, &g);
    if (k == 0) first = last;
    adam_update(s, g);
  }
  const double secs = seconds_since(t0);
  CHECK_OR_FAIL(last <= 0.5 * first, fmt("loss %.4f -> %.4f", first, last));
  CHECK_OR_FAIL(secs < 120.0, fmt("took %.1f s", secs));
  return {true, fmt("179/256 masked, visible-target invariant, loss %.4f -> %.4f (%.0f%%), %.1f s", first, last,
                    100.0 * (1.0 - last / first), secs)};
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const SessionRecording s = generate_session(mixed_script(4, 5.0), default_muscle_model(1), 5);
  const auto all = make_windows(s, 40);
  std::vector<WindowPair> pairs;
  for (std::size_t i = 0; i < 8; ++i) pairs.push_back(all[i * all.size() / 8]);
  ModelConfig c = test::toy_config(1);
  c.init_std = 0.0;
  ModelState m = make_model(c, AdamConfig{1e-3});
  int step = 0;
  double loss = mean_l1(m, pairs);
  while (step < 2000 && loss >= 0.05) {
    finetune_step(m, pairs);
    ++step;
    loss = mean_l1(m, pairs);
  }
  const double secs = seconds_since(t0);
  CHECK_OR_FAIL(loss < 0.05, fmt("L1 %.4f rad after %d steps", loss, step));
  CHECK_OR_FAIL(secs < 300.0, fmt("took %.1f s", secs));
  return {true, fmt("L1 %.4f rad after %d steps, %.1f s", loss, step, secs)};
}

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const StudyConfig cfg;
  int passing = 0;
  std::ostringstream os;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const StudyResult r = run_study(cfg, seed);
    const bool ok = r.report.passes(0.7, 15.0);
    passing += ok;
    os << fmt(" seed%llu corr %.3f err %.1fdeg%s", static_cast<unsigned long long>(seed), r.report.mean_correlation,
              r.report.mean_angular_error_deg, ok ? "" : "(x)");
    std::printf("  seed %llu: corr %.3f, err %.2f deg, %zu train windows, %.0f s\n", static_cast<unsigned long long>(seed),
                r.report.mean_correlation, r.report.mean_angular_error_deg, r.train_windows, r.seconds);
    std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  CHECK_OR_FAIL(passing >= 4, fmt("%d/5 seeds pass:", passing) + os.str());
  CHECK_OR_FAIL(secs < 1200.0, fmt("took %.0f s", secs));
  return {true, fmt("%d/5 seeds pass,", passing) + os.str() + fmt(", %.0f s", secs)};
}

Outcome realtime_cadence() {
  const SessionRecording s = generate_session(mixed_script(2, 6.0), default_muscle_model(1), 6);
  const auto chunks = emg_chunks(s);
  RealtimeEngine e(std::make_shared<const ModelState>(make_model(test::toy_config(1))));
  // 32 chunks = 256 samples of warm-up, then 250 chunks = 10 s.
  std::size_t warm = 0;
  for (int i = 0; i < 32; ++i) warm += e.ingest(chunks[i]).size();
  std::vector<EmittedFrame> frames;
  for (int i = 32; i < 282; ++i) {
    auto f = e.ingest(chunks[i]);
    frames.insert(frames.end(), f.begin(), f.end());
  }
  CHECK_OR_FAIL(warm == 1, fmt("%zu frames during warm-up", warm));
  CHECK_OR_FAIL(frames.size() == 250, fmt("%zu frames in 10 s", frames.size()));
  double worst = 0;
  for (std::size_t i = 1; i < frames.size(); ++i) worst = std::max(worst, std::abs(frames[i].t - frames[i - 1].t - 0.04));
  CHECK_OR_FAIL(worst < 1e-9, fmt("grid deviation %.3g s", worst));
  const EngineStats st = e.latency_report();
  CHECK_OR_FAIL(st.frames_dropped == 0, fmt("%llu frames dropped", static_cast<unsigned long long>(st.frames_dropped)));
  CHECK_OR_FAIL(st.tick_ms_p99 < 40.0, fmt("p99 tick %.2f ms", st.tick_ms_p99));
  return {true, fmt("250 frames on a 40 ms grid, p50 %.2f ms, p99 %.2f ms, max %.2f ms", st.tick_ms_p50, st.tick_ms_p99, st.tick_ms_max)};
}

Outcome hot_swap() {
  const SessionRecording s = generate_session(mixed_script(2, 6.0), default_muscle_model(1), 7);
  const auto chunks = emg_chunks(s);
  auto v1 = std::make_shared<ModelState>(make_model(test::toy_config(1)));
  v1->version = 1;
  auto v2 = std::make_shared<ModelState>(make_model(test::toy_config(2)));
  v2->version = 2;
  EngineConfig cfg;
  RealtimeEngine plain(v1, cfg), swapped(v1, cfg);
  std::vector<EmittedFrame> a, b;
  const std::size_t swap_at = 150;
  std::size_t frames_before_swap = 0;
  for (std::size_t i = 0; i < 282; ++i) {
    if (i == swap_at) {
      swapped.post_snapshot(v2);
      frames_before_swap = b.size();
    }
    auto fa = plain.ingest(chunks[i]);
    auto fb = swapped.ingest(chunks[i]);
    a.insert(a.end(), fa.begin(), fa.end());
    b.insert(b.end(), fb.begin(), fb.end());
  }
  const EngineStats st = swapped.latency_report();
  CHECK_OR_FAIL(st.frames_dropped == 0 && b.size() == a.size() && b.size() == 251,
                fmt("%zu frames with swap, %zu without, %llu dropped", b.size(), a.size(), static_cast<unsigned long long>(st.frames_dropped)));
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::uint64_t expect = i < frames_before_swap ? 1 : 2;
    CHECK_OR_FAIL(b[i].version == expect, fmt("frame %zu has version %llu", i, static_cast<unsigned long long>(b[i].version)));
    if (i < frames_before_swap) CHECK_OR_FAIL(b[i].angles == a[i].angles, fmt("frame %zu differs before the swap", i));
  }
  std::size_t changed = 0;
  for (std::size_t i = frames_before_swap; i < b.size(); ++i) changed += b[i].angles != a[i].angles;
  CHECK_OR_FAIL(changed == b.size() - frames_before_swap, fmt("only %zu post-swap frames changed", changed));
  return {true, fmt("251 frames, 0 dropped, %zu on v1 then %zu on v2, all post-swap outputs changed", frames_before_swap,
                    b.size() - frames_before_swap)};
}

Outcome adaptation_loop() {
  const auto muscles = default_muscle_model(1);
  const auto session = generate_session(mixed_script(6, 10.0), muscles, 41);
  const auto pairs = make_windows(session, 40);
  const auto held_out = make_windows(generate_session(mixed_script(3, 5.0), muscles, 42), 40);
  AdaptationPolicy policy;
  policy.steps_per_tick = 20;
  policy.batch_size = 8;
  AdaptServer server(make_model(test::toy_config(1)), policy);
  SimClock clock;
  TickScheduler sched(policy.tick_interval);
  std::map<int, std::vector<WindowPair>> by_second;
  for (const auto& p : pairs) by_second[static_cast<int>(p.t_end)].push_back(p);

  const double before = mean_l1(*server.latest(), held_out);
  int ticks_at_30 = -1, ticks = 0;
  std::uint64_t last = 0;
  for (int sec = 0; sec < 60; ++sec) {
    if (by_second.count(sec)) server.submit(by_second[sec]);
    clock.advance(1.0);
    for (int n = sched.advance(clock.now()); n > 0; --n) {
      const TickResult r = server.adaptation_tick();
      CHECK_OR_FAIL(r.status == TickStatus::applied, std::string("tick ") + to_string(r.status));
      CHECK_OR_FAIL(r.version > last, "version did not increase");
      last = r.version;
      ++ticks;
    }
    if (sec == 29) ticks_at_30 = ticks;
  }
  CHECK_OR_FAIL(ticks_at_30 == 3, fmt("%d ticks in 30 s", ticks_at_30));
  CHECK_OR_FAIL(ticks == 6, fmt("%d ticks in 60 s", ticks));
  const double after = mean_l1(*server.latest(), held_out);
  CHECK_OR_FAIL(after <= before, fmt("held-out L1 %.4f -> %.4f", before, after));

  const ModelState checkpoint = server.state();
  const ModelSnapshot published = server.latest();
  server.set_step_hook([](ModelState&, std::vector<WindowPair>& batch, int step) {
    if (step == 2) batch[0].target(0, 0) = std::numeric_limits<float>::quiet_NaN();
  });
  const TickResult failed = server.adaptation_tick();
  CHECK_OR_FAIL(failed.status == TickStatus::rolled_back, "faulty tick was not rolled back");
  CHECK_OR_FAIL(same_state(server.state(), checkpoint) && server.latest() == published, "rollback is not bit-exact");
  return {true, fmt("3 ticks at 30 s, 6 at 60 s, versions 1..6, held-out L1 %.4f -> %.4f rad, failed tick restored bit-exactly",
                    before, after)};
}

Outcome codec_persistence() {
  std::mt19937_64 rng(99);
  for (int k = 0; k < 10000; ++k) {
    const Message m = test::random_message(rng);
    const Bytes b = encode_message(m);
    const Message back = decode_message(b);
    CHECK_OR_FAIL(back.index() == m.index() && encode_message(back) == b, fmt("message %d did not round-trip", k));
  }
  ModelState s = make_model(test::toy_config(3));
  finetune_step(s, test::random_pairs(2, 4));
  s.version = 5;
  const ModelState loaded = load_weights(save_weights(s));
  CHECK_OR_FAIL(same_state(s, loaded) && loaded.step == s.step, "weights differ after reload");

  const auto dir = std::filesystem::temp_directory_path() / "alvi_acceptance";
  std::filesystem::create_directories(dir);
  auto synth = [&](const std::string& name) {
    std::string a0 = "alvi", a1 = "synth", a2 = "--seed", a3 = "7", a4 = "--out", a5 = (dir / name).string();
    char* argv[] = {a0.data(), a1.data(), a2.data(), a3.data(), a4.data(), a5.data()};
    const int rc = cli::run(6, argv);
    std::ifstream f(dir / name, std::ios::binary);
    return std::make_pair(rc, std::string(std::istreambuf_iterator<char>(f), {}));
  };
  const auto a = synth("a.alvs"), b = synth("b.alvs");
  std::filesystem::remove_all(dir);
  CHECK_OR_FAIL(a.first == 0 && b.first == 0, "synth failed");
  CHECK_OR_FAIL(!a.second.empty() && a.second == b.second, "synth --seed 7 files differ");
  return {true, fmt("10^4 fuzzed messages, weights bit-exact, synth files identical (%zu bytes)", a.second.size())};
}

Outcome preprocessing() {
  CHECK_OR_FAIL(minmax_normalize(-128) == -1.0 && minmax_normalize(-0.5) == 0.0 && minmax_normalize(127) == 1.0, "min-max fixed points");
  std::mt19937_64 rng(10);
  const MatF w = test::random_matrix(8, 256, rng);
  CHECK_OR_FAIL((mirror_channels(mirror_channels(w)).array() == w.array()).all(), "mirror is not an involution");
  double worst = 0;
  for (int k = 0; k < 2000; ++k) {
    const PoseFrame a = test::random_angles(rng);
    const PoseFrame back = quat_to_angles(relative_to_palm(angles_to_quat(a, test::random_unit_quat(rng))));
    for (int i = 0; i < kPoseDims; ++i) worst = std::max(worst, std::abs(back[i] - a[i]));
  }
  CHECK_OR_FAIL(worst < 1e-6, fmt("angle inversion error %.3g rad", worst));
  AlignedTrack t{0.0, 40.0, MatD(401, 20), {}};
  for (Eigen::Index i = 0; i < 401; ++i) t.values.row(i).setConstant(std::sin(2 * std::numbers::pi * static_cast<double>(i) / 40.0));
  const AlignedTrack r = resample_angles(t, 25.0);
  double sine = 0;
  for (Eigen::Index k = 0; k < r.size(); ++k)
    sine = std::max(sine, std::abs(r.values(k, 0) - std::sin(2 * std::numbers::pi * static_cast<double>(k) / 25.0)));
  CHECK_OR_FAIL(sine < 0.01, fmt("resampling error %.4f", sine));
  return {true, fmt("min-max exact, mirror involution, inversion %.2e rad, resampling %.4f of amplitude", worst, sine)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"shape/pipeline contract", shape_pipeline},
      {"gradient fidelity", gradient_fidelity},
      {"MAE mechanics", mae_mechanics},
      {"overfit sanity", overfit},
      {"end-to-end synthetic study", end_to_end},
      {"real-time cadence", realtime_cadence},
      {"hot swap", hot_swap},
      {"adaptation loop", adaptation_loop},
      {"codec/persistence", codec_persistence},
      {"preprocessing oracles", preprocessing},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
