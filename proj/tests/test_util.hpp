#pragma once

#include <random>

#include "alvi/handformer.hpp"
#include "alvi/pose_types.hpp"
#include "alvi/quat.hpp"
#include "alvi/stream_core.hpp"
#include "alvi/synthgen.hpp"
#include "alvi/wire.hpp"

namespace alvi::test {

inline MatF random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  MatF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Quat random_unit_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

inline PoseFrame random_angles(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(kAngleMin, kAngleMax);
  PoseFrame a;
  for (auto& v : a) v = u(rng);
  return a;
}

inline WindowPair random_pair(std::mt19937_64& rng, double t_end = 1.28) {
  WindowPair p;
  p.emg = random_matrix(kEmgChannels, kWindowLen, rng);
  p.target = random_matrix(kTargetFrames, kPoseDims, rng, -0.26f, 1.92f);
  p.t_end = t_end;
  return p;
}

inline std::vector<WindowPair> random_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<WindowPair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_pair(rng, 1.28 + 0.2 * static_cast<double>(i)));
  return out;
}

/// Small model used wherever a test only needs the mechanics.
inline ModelConfig toy_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.ffn_multiplier = 2;
  c.mae_decoder_depth = 1;
  c.seed = seed;
  return c;
}

/// Random message of any type with random shapes; float payloads include
/// arbitrary bit patterns so the codec is checked bit-for-bit.
inline Message random_message(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto raw_floats = [&](MatF& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(rng());
      m.data()[i] = pick(0, 9) == 0 ? std::bit_cast<float>(bits) : std::uniform_real_distribution<float>(-200.0f, 200.0f)(rng);
    }
  };
  auto text = [&](int max_len) {
    std::string s(static_cast<std::size_t>(pick(0, max_len)), '\0');
    for (auto& ch : s) ch = static_cast<char>(pick(0, 255));
    return s;
  };
  switch (pick(0, 4)) {
    case 0: {
      SampleChunk c;
      c.stream_id = static_cast<std::uint16_t>(pick(0, 65535));
      c.t0 = std::uniform_real_distribution<double>(0.0, 1e5)(rng);
      c.rate = std::uniform_real_distribution<float>(1.0f, 2000.0f)(rng);
      c.samples.resize(pick(1, 40), pick(1, 90));
      raw_floats(c.samples);
      return c;
    }
    case 1: {
      WeightsBlob b;
      b.version = rng();
      b.data.resize(static_cast<std::size_t>(pick(0, 300)));
      for (auto& x : b.data) x = static_cast<std::uint8_t>(pick(0, 255));
      return b;
    }
    case 2: return ControlMsg{text(200)};
    case 3: {
      PairSubmit ps;
      const int n = pick(0, 2);
      for (int i = 0; i < n; ++i) {
        WindowPair p;
        p.t_end = std::uniform_real_distribution<double>(0.0, 1e4)(rng);
        p.emg.resize(pick(0, 8), pick(0, 64));
        p.target.resize(pick(0, 32), pick(0, 20));
        raw_floats(p.emg);
        raw_floats(p.target);
        ps.pairs.push_back(std::move(p));
      }
      return ps;
    }
    default: return Subscribe{text(40)};
  }
}

inline StreamInfo emg_info(std::uint16_t id = 1) { return {id, "emg", 8, 200.0, StreamKind::emg}; }

}  // namespace alvi::test
