#pragma once

// Top-level JSON configuration with embedded defaults. Every section is
// optional; missing keys keep their defaults.
//
//   {"model": {...}, "adam": {...}, "engine": {...}, "policy": {...},
//    "train": {...}, "synth": {...}, "study": {...}}

#include <fstream>
#include <string>

#include <json.hpp>

#include "alvi/adapt_server.hpp"
#include "alvi/error.hpp"
#include "alvi/handformer.hpp"
#include "alvi/realtime.hpp"
#include "alvi/training.hpp"

namespace alvi {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EngineConfig, in_rate, out_rate, window_len, ema_alpha, deadline_ms, timing_history)

struct SynthConfig {
  int gestures = kGestureCount;
  double gesture_seconds = 60.0;
  std::uint64_t muscle_seed = 1;
  std::string script = "standard";  // standard | mixed
  std::string hand = "right";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, gestures, gesture_seconds, muscle_seed, script, hand)

struct AppConfig {
  ModelConfig model;
  AdamConfig adam;
  EngineConfig engine;
  AdaptationPolicy policy;
  TrainConfig train;
  SynthConfig synth;
  StudyConfig study;

  void validate() const {
    model.validate();
    engine.validate();
    policy.validate();
    require(adam.lr >= 0 && adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0,
            ErrorCode::invalid_argument, "adam settings out of range");
    require(train.batch_size >= 1 && train.stride >= 1 && train.mae_steps >= 0 && train.finetune_steps >= 0,
            ErrorCode::invalid_argument, "train settings out of range");
    require(synth.gestures >= 1 && synth.gesture_seconds > 0, ErrorCode::invalid_argument, "synth settings out of range");
    require(synth.script == "standard" || synth.script == "mixed", ErrorCode::invalid_argument, "synth.script must be standard or mixed");
    require(synth.hand == "right" || synth.hand == "left", ErrorCode::invalid_argument, "synth.hand must be right or left");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AppConfig, model, adam, engine, policy, train, synth, study)

inline AppConfig parse_config(const std::string& text) {
  AppConfig c;
  try {
    c = nlohmann::json::parse(text).get<AppConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

}  // namespace alvi
