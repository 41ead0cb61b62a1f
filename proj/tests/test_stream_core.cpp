#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "alvi/stream_core.hpp"
#include "test_util.hpp"

using namespace alvi;

namespace {

SampleChunk constant_chunk(std::uint16_t id, double t0, int n, float rate, float value, int channels = 8) {
  SampleChunk c;
  c.stream_id = id;
  c.t0 = t0;
  c.rate = rate;
  c.samples = MatF::Constant(n, channels, value);
  return c;
}

SampleChunk ramp_chunk(std::uint16_t id, double t0, int n, float rate, int channels = 8) {
  SampleChunk c = constant_chunk(id, t0, n, rate, 0.0f, channels);
  for (int i = 0; i < n; ++i) c.samples.row(i).setConstant(static_cast<float>(t0 + i / static_cast<double>(rate)));
  return c;
}

}  // namespace

TEST(StreamInfo, ChannelCountMustMatchKind) {
  EXPECT_NO_THROW((StreamInfo{1, "emg", 8, 200.0, StreamKind::emg}.validate()));
  EXPECT_NO_THROW((StreamInfo{2, "pose", 84, 40.0, StreamKind::pose_quat}.validate()));
  EXPECT_NO_THROW((StreamInfo{3, "angles", 20, 25.0, StreamKind::pose_angles}.validate()));
  EXPECT_THROW((StreamInfo{1, "emg", 7, 200.0, StreamKind::emg}.validate()), Error);
  EXPECT_THROW((StreamInfo{1, "emg", 8, 0.0, StreamKind::emg}.validate()), Error);
}

TEST(StreamBuffer, DuplicateRegistrationRejected) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  EXPECT_THROW(b.register_stream(test::emg_info()), Error);
}

TEST(StreamBuffer, FirstChunkEndTime) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  ASSERT_TRUE(b.push_chunk(constant_chunk(1, 0.0, 8, 200.0f, 0.1f)));
  EXPECT_NEAR(b.end_time(1), 0.04, 1e-12);
}

TEST(StreamBuffer, EarlierChunkRejectedAndBufferUnchanged) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  ASSERT_TRUE(b.push_chunk(constant_chunk(1, 0.0, 8, 200.0f, 0.1f)));
  const auto r = b.push_chunk(constant_chunk(1, 0.02, 8, 200.0f, 0.9f));
  EXPECT_FALSE(r);
  EXPECT_NE(r.diagnostic.find("non-monotonic"), std::string::npos);
  EXPECT_NEAR(b.end_time(1), 0.04, 1e-12);
  EXPECT_EQ(b.sample_count(1), 8u);
  const MatF w = b.sample_window(1, 0.035, 8, 200.0);
  EXPECT_TRUE((w.array() == 0.1f).all());
}

TEST(StreamBuffer, UnknownStreamRejected) {
  StreamBuffer b;
  const auto r = b.push_chunk(constant_chunk(9, 0.0, 8, 200.0f, 0.0f));
  EXPECT_FALSE(r);
  EXPECT_NE(r.diagnostic.find("unknown"), std::string::npos);
  try {
    b.sample_window(9, 1.0, 4, 200.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_stream);
  }
}

TEST(StreamBuffer, WrongChannelCountRejected) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  EXPECT_FALSE(b.push_chunk(constant_chunk(1, 0.0, 8, 200.0f, 0.0f, 7)));
}

TEST(StreamBuffer, TenThousandChunksAccumulateDuration) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  double t = 0.0;
  long double oracle = 0.0L;
  for (int k = 0; k < 10000; ++k) {
    const int n = 1 + (k * 7919) % 13;
    ASSERT_TRUE(b.push_chunk(constant_chunk(1, t, n, 200.0f, 0.0f)));
    t += n / 200.0;
    oracle += static_cast<long double>(n) / 200.0L;
  }
  EXPECT_NEAR(b.end_time(1), static_cast<double>(oracle), 1e-9);
}

TEST(StreamBuffer, ConstantWindow) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  for (int k = 0; k < 64; ++k) ASSERT_TRUE(b.push_chunk(constant_chunk(1, k * 0.04, 8, 200.0f, 0.5f)));
  const MatF w = b.sample_window(1, 2.0, 256, 200.0);
  EXPECT_TRUE((w.array() == 0.5f).all());
  const MatF off_grid = b.sample_window(1, 1.9931, 100, 137.0);
  EXPECT_TRUE((off_grid.array() == 0.5f).all());
}

TEST(StreamBuffer, RampMidpointInterpolation) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  ASSERT_TRUE(b.push_chunk(ramp_chunk(1, 0.0, 400, 200.0f)));
  const double t = 0.5 + 0.5 / 200.0;
  const MatF w = b.sample_window(1, t, 1, 200.0);
  const float expect = 0.5f * (static_cast<float>(0.5) + static_cast<float>(0.505));
  EXPECT_NEAR(w(0, 0), expect, 1e-6);
}

TEST(StreamBuffer, WindowIsExactCopyOnCoincidentGrid) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  std::mt19937_64 rng(3);
  SampleChunk c;
  c.stream_id = 1;
  c.t0 = 0.0;
  c.rate = 200.0f;
  c.samples = test::random_matrix(600, 8, rng);
  ASSERT_TRUE(b.push_chunk(c));
  const MatF w = b.sample_window(1, 599 / 200.0, 256, 200.0);
  ASSERT_EQ(w.rows(), 256);
  EXPECT_TRUE((w.array() == c.samples.bottomRows(256).array()).all());
}

TEST(StreamBuffer, WindowSpan) {
  const auto grid = window_grid(5.0, 256, 200.0);
  ASSERT_EQ(grid.size(), 256u);
  EXPECT_NEAR(grid.back() - grid.front() + 1.0 / 200.0, 1.28, 1e-12);
}

TEST(StreamBuffer, InsufficientHistoryNeverPartial) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  ASSERT_TRUE(b.push_chunk(constant_chunk(1, 0.0, 100, 200.0f, 0.2f)));
  try {
    b.sample_window(1, 99 / 200.0, 256, 200.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_history);
  }
  EXPECT_EQ(b.sample_window(1, 99 / 200.0, 100, 200.0).rows(), 100);
}

TEST(StreamBuffer, HorizonEvictionKeepsRecentSamples) {
  StreamBuffer b(2.0);
  b.register_stream(test::emg_info());
  for (int k = 0; k < 250; ++k) ASSERT_TRUE(b.push_chunk(ramp_chunk(1, k * 0.04, 8, 200.0f)));
  const double now = b.end_time(1);
  EXPECT_NEAR(now, 10.0, 1e-9);
  EXPECT_LE(b.start_time(1), now - 2.0 + 1e-9);
  EXPECT_GT(b.start_time(1), 1.0);
  EXPECT_NO_THROW(b.sample_window(1, now - 0.005, 400, 200.0));
}

TEST(StreamBuffer, AlignIdentityOnOwnGrid) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  std::mt19937_64 rng(5);
  SampleChunk c;
  c.stream_id = 1;
  c.t0 = 0.0;
  c.rate = 200.0f;
  c.samples = test::random_matrix(400, 8, rng);
  ASSERT_TRUE(b.push_chunk(c));
  const AlignedTrack t = b.align({1}, 0.0, 399 / 200.0, 200.0);
  ASSERT_EQ(t.size(), 400);
  EXPECT_TRUE((t.values.cast<float>().array() == c.samples.array()).all());
}

TEST(StreamBuffer, AlignEmgAndPoseOnto25Hz) {
  StreamBuffer b;
  b.register_stream(test::emg_info(1));
  b.register_stream({2, "angles", 20, 40.0, StreamKind::pose_angles});
  std::mt19937_64 rng(11);
  SampleChunk e{1, 0.0, 200.0f, test::random_matrix(1000, 8, rng)};
  SampleChunk p{2, 0.0, 40.0f, test::random_matrix(200, 20, rng)};
  ASSERT_TRUE(b.push_chunk(e));
  ASSERT_TRUE(b.push_chunk(p));
  const AlignedTrack t = b.align({1, 2}, 0.1, 4.9, 25.0);
  ASSERT_EQ(t.values.cols(), 28);
  ASSERT_EQ(t.size(), 121);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    const double tk = 0.1 + k / 25.0;
    auto oracle = [&](const MatF& m, double rate, int c) {
      const double pos = tk * rate;
      const auto lo = static_cast<Eigen::Index>(std::floor(pos + 1e-12));
      const double w = std::max(0.0, pos - lo);
      const auto hi = std::min<Eigen::Index>(lo + 1, m.rows() - 1);
      return (1 - w) * m(lo, c) + w * m(hi, c);
    };
    for (int c = 0; c < 8; ++c) worst = std::max(worst, std::abs(t.values(k, c) - oracle(e.samples, 200.0, c)));
    for (int c = 0; c < 20; ++c) worst = std::max(worst, std::abs(t.values(k, 8 + c) - oracle(p.samples, 40.0, c)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(StreamBuffer, AlignSubsetGridIsExact) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  std::mt19937_64 rng(2);
  SampleChunk c{1, 0.0, 200.0f, test::random_matrix(800, 8, rng)};
  ASSERT_TRUE(b.push_chunk(c));
  const AlignedTrack t = b.align({1}, 0.0, 3.5, 25.0);
  for (Eigen::Index k = 0; k < t.size(); ++k)
    for (int ch = 0; ch < 8; ++ch) EXPECT_EQ(static_cast<float>(t.values(k, ch)), c.samples(8 * k, ch));
}

TEST(StreamBuffer, AlignErrors) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  ASSERT_TRUE(b.push_chunk(constant_chunk(1, 0.0, 200, 200.0f, 0.0f)));
  EXPECT_THROW(b.align({1}, 0.5, 0.4, 25.0), Error);
  try {
    b.align({1}, 0.0, 3.0, 25.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::coverage_gap);
  }
}

TEST(StreamBuffer, ConcurrentWriterAndReaderSeeWholeChunks) {
  StreamBuffer b;
  b.register_stream(test::emg_info());
  ASSERT_TRUE(b.push_chunk(constant_chunk(1, 0.0, 8, 200.0f, 0.0f)));
  std::atomic<bool> done{false};
  std::thread writer([&] {
    for (int k = 1; k < 2000; ++k) b.push_chunk(constant_chunk(1, k * 0.04, 8, 200.0f, static_cast<float>(k)));
    done = true;
  });
  int torn = 0;
  while (!done) {
    const double end = b.end_time(1);
    const MatF w = b.sample_window(1, end - 0.005, 8, 200.0);
    if (w(0, 0) != w(7, 0)) ++torn;
  }
  writer.join();
  EXPECT_EQ(torn, 0);
}
