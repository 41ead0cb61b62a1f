#pragma once

// Training loops built on the single-step primitives, plus the end-to-end
// synthetic study (two training sessions, one held-out session).

#include <chrono>
#include <functional>
#include <random>
#include <vector>

#include <json.hpp>

#include "alvi/evalkit.hpp"
#include "alvi/handformer.hpp"
#include "alvi/preprocess.hpp"
#include "alvi/synthgen.hpp"

namespace alvi {

struct TrainConfig {
  int mae_steps = 1000;
  int finetune_steps = 3000;
  int batch_size = 8;
  std::size_t stride = 40;
  std::uint64_t seed = 0;
  int log_every = 250;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, mae_steps, finetune_steps, batch_size, stride, seed, log_every)

using TrainLog = std::function<void(const char* stage, int step, double loss)>;

/// MAE pretraining on uniformly drawn windows; returns the last loss.
inline double pretrain(ModelState& s, const std::vector<MatF>& windows, int steps, int batch, Rng& rng,
                       const TrainLog& log = {}, int log_every = 250) {
  require(!windows.empty(), ErrorCode::invalid_argument, "pretrain: no windows");
  std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
  double loss = 0;
  for (int i = 0; i < steps; ++i) {
    std::vector<MatF> b;
    for (int k = 0; k < batch; ++k) b.push_back(windows[pick(rng)]);
    loss = mae_step(s, b, rng);
    if (log && (i % log_every == 0 || i + 1 == steps)) log("mae", i, loss);
  }
  return loss;
}

/// Supervised L1 fine-tuning on uniformly drawn pairs; returns the last loss.
inline double finetune(ModelState& s, const std::vector<WindowPair>& pairs, int steps, int batch, Rng& rng,
                       const TrainLog& log = {}, int log_every = 250) {
  require(!pairs.empty(), ErrorCode::invalid_argument, "finetune: no pairs");
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  double loss = 0;
  for (int i = 0; i < steps; ++i) {
    std::vector<WindowPair> b;
    for (int k = 0; k < batch; ++k) b.push_back(pairs[pick(rng)]);
    loss = finetune_step(s, b);
    if (log && (i % log_every == 0 || i + 1 == steps)) log("finetune", i, loss);
  }
  return loss;
}

inline std::vector<MatF> emg_only(const std::vector<WindowPair>& pairs) {
  std::vector<MatF> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.emg);
  return out;
}

/// Settings of the end-to-end study. The defaults are sized for a single
/// CPU core: five seeds fit in the time budget of the acceptance run.
struct StudyConfig {
  ModelConfig model = [] {
    ModelConfig m;
    m.d_model = 32;
    m.n_heads = 4;
    m.n_encoder_layers = 2;
    m.n_decoder_layers = 1;
    m.mae_decoder_depth = 1;
    m.init_std = 0.0;
    return m;
  }();
  AdamConfig adam = [] {
    AdamConfig a;
    a.lr = 1e-3;
    return a;
  }();
  TrainConfig train;
  int gestures = 12;
  double gesture_seconds = 20.0;
  std::uint64_t muscle_seed = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StudyConfig, model, adam, train, gestures, gesture_seconds, muscle_seed)

struct StudyResult {
  EvalReport report;
  double seconds = 0;
  std::size_t train_windows = 0;
  double final_mae_loss = 0, final_finetune_loss = 0;
};

/// Train on sessions seeded 100+seed and 200+seed, evaluate on 300+seed, all
/// from the same muscle model and gesture script.
inline StudyResult run_study(const StudyConfig& cfg, std::uint64_t seed, const TrainLog& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const MuscleModel muscles = default_muscle_model(cfg.muscle_seed);
  const GestureScript script = mixed_script(cfg.gestures, cfg.gesture_seconds);
  std::vector<WindowPair> train = make_windows(generate_session(script, muscles, 100 + seed), cfg.train.stride);
  const auto second = make_windows(generate_session(script, muscles, 200 + seed), cfg.train.stride);
  train.insert(train.end(), second.begin(), second.end());
  const SessionRecording held_out = generate_session(script, muscles, 300 + seed);

  ModelConfig mc = cfg.model;
  mc.seed = seed;
  ModelState s = make_model(mc, cfg.adam);
  Rng rng(seed);
  StudyResult r;
  r.train_windows = train.size();
  if (cfg.train.mae_steps > 0) {
    r.final_mae_loss = pretrain(s, emg_only(train), cfg.train.mae_steps, cfg.train.batch_size, rng, log, cfg.train.log_every);
    reset_optimizer(s);
  }
  r.final_finetune_loss = finetune(s, train, cfg.train.finetune_steps, cfg.train.batch_size, rng, log, cfg.train.log_every);
  r.report = evaluate_session(s, held_out, cfg.train.stride);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace alvi
