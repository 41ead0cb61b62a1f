#include <gtest/gtest.h>

#include "alvi/handformer.hpp"
#include "alvi/preprocess.hpp"
#include "test_util.hpp"

using namespace alvi;

namespace {

MatF random_window(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return test::random_matrix(8, 256, rng);
}

}  // namespace

TEST(Tokenize, Bijection) {
  const MatF w = random_window(1);
  const MatF t = tokenize(w);
  ASSERT_EQ(t.rows(), 256);
  ASSERT_EQ(t.cols(), 8);
  EXPECT_TRUE((detokenize(t).array() == w.array()).all());
  for (int c : {0, 3, 7})
    for (int j : {0, 13, 31})
      for (int k = 0; k < 8; ++k) EXPECT_EQ(t(c * 32 + j, k), w(c, 8 * j + k));
}

TEST(Tokenize, ConstantWindowGivesIdenticalTokens) {
  const MatF t = tokenize(MatF::Constant(8, 256, 0.25f));
  EXPECT_TRUE((t.array() == 0.25f).all());
  EXPECT_EQ(ModelConfig{}.token_count(), 256);
  EXPECT_THROW(tokenize(MatF::Zero(8, 255)), Error);
}

TEST(Config, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.patch_time = 7;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.mask_ratio = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Init, TruncatedNormalScale) {
  ModelConfig c = test::toy_config(1);
  const ParamSet<float> p = init_params(c);
  std::vector<float> all;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.names[i].find(".w") != std::string::npos || p.names[i] == "dec.queries")
      all.insert(all.end(), p.tensors[i].data(), p.tensors[i].data() + p.tensors[i].size());
  double ss = 0;
  for (float v : all) {
    EXPECT_LE(std::abs(v), 0.04f);
    ss += v * v;
  }
  EXPECT_NEAR(std::sqrt(ss / all.size()), 0.0176, 0.002);
  EXPECT_TRUE((p["enc.0.ln1.g"].array() == 1.0f).all());
  EXPECT_TRUE((p["patch.b"].array() == 0.0f).all());
}

TEST(Init, FanInScale) {
  ModelConfig c = test::toy_config(1);
  c.init_std = 0.0;
  const ParamSet<float> p = init_params(c);
  const MatF& w = p["patch.w"];
  EXPECT_LE(w.cwiseAbs().maxCoeff(), 2.0f / std::sqrt(8.0f));
  EXPECT_GT(w.cwiseAbs().maxCoeff(), 0.2f);
  EXPECT_LE(p["dec.queries"].cwiseAbs().maxCoeff(), 0.04f);
}

TEST(Init, SeedDeterminesWeights) {
  const auto a = init_params(test::toy_config(4)), b = init_params(test::toy_config(4)), c = init_params(test::toy_config(5));
  EXPECT_TRUE((a["enc.0.attn.wq"].array() == b["enc.0.attn.wq"].array()).all());
  EXPECT_FALSE((a["enc.0.attn.wq"].array() == c["enc.0.attn.wq"].array()).all());
}

TEST(Mask, CountsAndReproducibility) {
  Rng a(3), b(3);
  const TokenMask m = sample_mask(256, 0.7, a);
  EXPECT_EQ(m.masked_count(), 179u);
  EXPECT_EQ(m.masked, sample_mask(256, 0.7, b).masked);
  EXPECT_EQ(sample_mask(256, 0.5, a).masked_count(), 128u);
  EXPECT_THROW(sample_mask(256, 0.0, a), Error);
}

TEST(Mask, UniformCoverage) {
  Rng rng(8);
  std::vector<int> hits(256, 0);
  for (int k = 0; k < 2000; ++k) {
    const TokenMask m = sample_mask(256, 0.7, rng);
    for (int i = 0; i < 256; ++i) hits[i] += m.masked[i];
  }
  for (int h : hits) EXPECT_NEAR(h / 2000.0, 0.7, 0.06);
}

TEST(Encode, OutputLengths) {
  const ModelConfig c = test::toy_config();
  const ParamSet<float> p = init_params(c);
  const MatF w = random_window(2);
  EXPECT_EQ(encode<float>(c, p, w).rows(), 256);
  Rng rng(1);
  const TokenMask m = sample_mask(256, 0.7, rng);
  const MatF lat = encode<float>(c, p, w, &m);
  EXPECT_EQ(lat.rows(), 77);
  EXPECT_EQ(lat.cols(), c.d_model);
  EXPECT_TRUE((encode<float>(c, p, w).array() == encode<float>(c, p, w).array()).all());
}

TEST(Decode, ShapeIndependentOfLatentCount) {
  const ModelConfig c = test::toy_config();
  const ParamSet<float> p = init_params(c);
  for (int n : {1, 77, 256}) {
    const MatF out = decode<float>(c, p, MatF::Ones(n, c.d_model) * 0.1f);
    EXPECT_EQ(out.rows(), 32);
    EXPECT_EQ(out.cols(), 20);
  }
  MatF bad = MatF::Zero(4, c.d_model);
  bad(0, 0) = std::nanf("");
  EXPECT_THROW(decode<float>(c, p, bad), Error);
}

TEST(Decode, AttentionIndependentOfHead) {
  const ModelState s = make_model(test::toy_config(2));
  ModelState zero_head = s;
  zero_head.params["head.w"].setZero();
  zero_head.params["head.b"].setZero();
  const MatF w = random_window(3);
  std::vector<MatF> a, b;
  forward(s, w, &a);
  const MatF out = forward(zero_head, w, &b);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_FALSE(a.empty());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE((a[i].array() == b[i].array()).all());
  EXPECT_TRUE((out.array() == 0.0f).all());
}

TEST(Forward, AttentionRowsAreDistributions) {
  const ModelState s = make_model(test::toy_config(2));
  std::vector<MatF> log;
  forward(s, random_window(4), &log);
  // 1 encoder layer, 1 decoder layer with cross + self, 2 heads each.
  ASSERT_EQ(log.size(), 6u);
  for (const auto& p : log) {
    EXPECT_GE(p.minCoeff(), 0.0f);
    for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0f, 1e-5);
  }
  EXPECT_EQ(log[0].rows(), 256);
  EXPECT_EQ(log[2].rows(), 32);
  EXPECT_EQ(log[2].cols(), 256);
  EXPECT_EQ(log[4].cols(), 32);
}

TEST(Forward, ShapeFinitenessAndBatch) {
  const ModelState s = make_model(test::toy_config(2));
  std::vector<MatF> ws = {random_window(5), random_window(6), random_window(7)};
  const auto outs = forward_batch(s, ws);
  ASSERT_EQ(outs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(outs[i].rows(), 32);
    EXPECT_EQ(outs[i].cols(), 20);
    EXPECT_TRUE(outs[i].allFinite());
    EXPECT_TRUE((outs[i].array() == forward(s, ws[i]).array()).all());
  }
  MatF bad = ws[0];
  bad(2, 9) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(forward(s, bad), Error);
  EXPECT_THROW(forward(s, MatF::Zero(7, 256)), Error);
}

TEST(FinetuneLoss, ExactAndOffsetTargets) {
  const ModelState s = make_model(test::toy_config(2));
  WindowPair p;
  p.emg = random_window(8);
  p.target = forward(s, p.emg);
  EXPECT_NEAR(finetune_loss<float>(s.config, s.params, {p}), 0.0, 1e-9);
  p.target.array() += 0.1f;
  EXPECT_NEAR(finetune_loss<float>(s.config, s.params, {p}), 0.1, 1e-6);
}

TEST(MaeLoss, InvariantToVisibleTargets) {
  const ModelState s = make_model(test::toy_config(2));
  Rng rng(5);
  MaeExample ex{random_window(9), MatF(), sample_mask(256, 0.7, rng)};
  ex.target = ex.input;
  const double base = mae_loss<float>(s.config, s.params, {ex});
  EXPECT_GE(base, 0.0);
  MaeExample perturbed = ex;
  MatF tok = tokenize(perturbed.target);
  for (auto k : ex.mask.visible_indices()) tok.row(k).array() += 0.5f;
  perturbed.target = detokenize(tok);
  EXPECT_EQ(mae_loss<float>(s.config, s.params, {perturbed}), base);
  MatF tok2 = tokenize(ex.target);
  tok2.row(ex.mask.masked_indices()[0]).array() += 0.5f;
  MaeExample changed = ex;
  changed.target = detokenize(tok2);
  EXPECT_NE(mae_loss<float>(s.config, s.params, {changed}), base);
}

TEST(Optimizer, ZeroLearningRateLeavesWeightsUnchanged) {
  AdamConfig a;
  a.lr = 0.0;
  ModelState s = make_model(test::toy_config(2), a);
  const ParamSet<float> before = s.params;
  finetune_step(s, test::random_pairs(2, 1));
  Rng rng(1);
  mae_step(s, {random_window(1)}, rng);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE((before.tensors[i].array() == s.params.tensors[i].array()).all());
  EXPECT_EQ(s.step, 2u);
}

TEST(Optimizer, NonFiniteStepLeavesStateUnchanged) {
  ModelState s = make_model(test::toy_config(2));
  const ParamSet<float> before = s.params;
  auto pairs = test::random_pairs(1, 2);
  pairs[0].target(0, 0) = std::nanf("");
  EXPECT_THROW(finetune_step(s, pairs), Error);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE((before.tensors[i].array() == s.params.tensors[i].array()).all());
  EXPECT_EQ(s.step, 0u);
  ParamSet<float> g = s.params.zeros_like();
  g.tensors[3](0, 0) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(adam_update(s, g), Error);
  EXPECT_EQ(s.step, 0u);
}

TEST(Training, MaeFixedBatchHalvesLoss) {
  ModelState s = make_model(test::toy_config(1), AdamConfig{1e-3});
  const auto pairs = make_windows(generate_session(mixed_script(2, 5.0), default_muscle_model(1), 5), 200);
  Rng rng(2);
  std::vector<MaeExample> ex;
  for (int i = 0; i < 2; ++i) ex.push_back({pairs[i].emg, pairs[i].emg, sample_mask(256, 0.7, rng)});
  double first = 0, last = 0;
  for (int k = 0; k < 200; ++k) {
    ParamSet<float> g = s.params.zeros_like();
    last = mae_loss<float>(s.config, s.params, ex, &g);
    if (k == 0) first = last;
    adam_update(s, g);
  }
  EXPECT_LE(last, 0.5 * first);
}

TEST(Training, DifferentWindowsGiveDifferentOutputsAfterTraining) {
  ModelState s = make_model(test::toy_config(1), AdamConfig{1e-3});
  const auto pairs = test::random_pairs(4, 3);
  for (int k = 0; k < 100; ++k) finetune_step(s, pairs);
  const MatF a = forward(s, pairs[0].emg), b = forward(s, pairs[1].emg);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-3f);
}

TEST(EncoderTransfer, CopiesOnlyEncoder) {
  const ModelState pre = make_model(test::toy_config(1));
  ModelState dst = make_model(test::toy_config(2));
  load_encoder_from(dst, pre);
  EXPECT_TRUE((dst.params["enc.0.attn.wq"].array() == pre.params["enc.0.attn.wq"].array()).all());
  EXPECT_TRUE((dst.params["patch.w"].array() == pre.params["patch.w"].array()).all());
  EXPECT_FALSE((dst.params["dec.queries"].array() == pre.params["dec.queries"].array()).all());
  ModelConfig other = test::toy_config(1);
  other.d_model = 32;
  ModelState wrong = make_model(other);
  EXPECT_THROW(load_encoder_from(wrong, pre), Error);
}

TEST(Training, ResetOptimizerKeepsParameters) {
  ModelState s = make_model(test::toy_config(1), AdamConfig{1e-3});
  finetune_step(s, test::random_pairs(2, 5));
  s.version = 4;
  const ParamSet<float> before = s.params;
  reset_optimizer(s);
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(s.version, 4u);
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    EXPECT_TRUE((s.params.tensors[i].array() == before.tensors[i].array()).all());
    EXPECT_EQ(s.adam_m.tensors[i].cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ(s.adam_v.tensors[i].cwiseAbs().maxCoeff(), 0.0f);
  }
}
