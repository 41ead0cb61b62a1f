#include <gtest/gtest.h>

#include <filesystem>

#include "alvi/session_io.hpp"
#include "alvi/synthgen.hpp"
#include "alvi/weights_io.hpp"
#include "test_util.hpp"

using namespace alvi;

namespace {

ModelState trained_toy() {
  ModelState s = make_model(test::toy_config(3));
  const auto pairs = test::random_pairs(2, 5);
  finetune_step(s, pairs);
  finetune_step(s, pairs);
  s.version = 7;
  return s;
}

}  // namespace

TEST(Weights, SaveLoadIsBitExact) {
  const ModelState s = trained_toy();
  const Bytes b = save_weights(s);
  const ModelState back = load_weights(b);
  EXPECT_TRUE(bit_identical(s, back));
  EXPECT_EQ(back.version, 7u);
  EXPECT_EQ(back.step, 2u);
  EXPECT_EQ(back.config, s.config);
  EXPECT_EQ(back.adam, s.adam);
  EXPECT_EQ(save_weights(back), b);
}

TEST(Weights, PredictionsIdenticalAfterReload) {
  const ModelState s = trained_toy();
  const ModelState back = load_weights(save_weights(s));
  const auto pairs = test::random_pairs(1, 8);
  const MatF a = forward(s, pairs[0].emg), b = forward(back, pairs[0].emg);
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(Weights, ConfigMismatchRejected) {
  const ModelState s = trained_toy();
  ModelConfig other = s.config;
  other.d_model = 32;
  try {
    load_weights(save_weights(s), &other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::config_mismatch);
  }
  ModelConfig same_shape = s.config;
  same_shape.seed = 99;
  EXPECT_NO_THROW(load_weights(save_weights(s), &same_shape));
}

TEST(Weights, CorruptFilesRejected) {
  const Bytes b = save_weights(trained_toy());
  Bytes bad = b;
  bad[0] = 'X';
  EXPECT_THROW(load_weights(bad), Error);
  Bytes cut(b.begin(), b.end() - 3);
  EXPECT_THROW(load_weights(cut), Error);
  Bytes longer = b;
  longer.push_back(0);
  EXPECT_THROW(load_weights(longer), Error);
}

TEST(Session, RoundTripPreservesContent) {
  const SessionRecording s = generate_session(mixed_script(2, 2.0), default_muscle_model(1), 3);
  const SessionRecording back = decode_session(encode_session(s));
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(back.model_hash, s.model_hash);
  ASSERT_EQ(back.annotations.size(), 2u);
  EXPECT_EQ(back.annotations[1].gesture_id, s.annotations[1].gesture_id);
  ASSERT_EQ(back.emg.values.rows(), s.emg.values.rows());
  EXPECT_TRUE((back.emg.values.array() == s.emg.values.array()).all());
  EXPECT_TRUE(back.pose_quat.values.isApprox(s.pose_quat.values, 1e-6));
  EXPECT_EQ(back.emg.rate, 200.0);
  EXPECT_EQ(back.pose_quat.rate, 40.0);
}

TEST(Session, EncodingIsDeterministic) {
  const GestureScript script = mixed_script(3, 2.0);
  const Bytes a = encode_session(generate_session(script, default_muscle_model(1), 7));
  const Bytes b = encode_session(generate_session(script, default_muscle_model(1), 7));
  EXPECT_EQ(a, b);
}

TEST(Session, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "alvi_test_session.alvs";
  const SessionRecording s = generate_session(mixed_script(1, 2.0), default_muscle_model(1), 1);
  save_session(s, path.string());
  const SessionRecording back = load_session(path.string());
  EXPECT_EQ(encode_session(back), encode_session(decode_session(encode_session(s))));
  std::filesystem::remove(path);
  EXPECT_THROW(load_session(path.string()), Error);
}

TEST(Session, TruncatedContainerRejected) {
  const Bytes b = encode_session(generate_session(mixed_script(1, 2.0), default_muscle_model(1), 1));
  Bytes cut(b.begin(), b.end() - 10);
  EXPECT_THROW(decode_session(cut), Error);
}

TEST(ReplayHistory, RoundTrip) {
  const auto pairs = test::random_pairs(600, 12);
  const auto back = decode_replay_history(encode_replay_history(pairs));
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(back[i], pairs[i]);
}
