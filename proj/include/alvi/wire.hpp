#pragma once

// Length-delimited binary frames shared by every transport in the pipeline.
//
//   "ALVI" | version 0x01 | type u8 | payload length u32 LE | payload
//
// All multi-byte fields are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "alvi/error.hpp"
#include "alvi/pose_types.hpp"
#include "alvi/stream_core.hpp"

namespace alvi {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kWireVersion = 0x01;
inline constexpr std::size_t kFrameHeaderSize = 10;

enum class MessageType : std::uint8_t {
  chunk = 0x01,
  weights = 0x02,      // snapshot push
  control = 0x03,
  pair_submit = 0x04,
  subscribe = 0x05,
};

/// A serialized weights file plus the model version it carries.
struct WeightsBlob {
  std::uint64_t version = 0;
  Bytes data;
  bool operator==(const WeightsBlob&) const = default;
};

/// Free-form control message; the body is JSON text or empty.
struct ControlMsg {
  std::string body;
  bool operator==(const ControlMsg&) const = default;
};

struct PairSubmit {
  std::vector<WindowPair> pairs;
  bool operator==(const PairSubmit&) const = default;
};

struct Subscribe {
  std::string client;
  bool operator==(const Subscribe&) const = default;
};

using Message = std::variant<SampleChunk, WeightsBlob, ControlMsg, PairSubmit, Subscribe>;

inline MessageType message_type(const Message& m) {
  return std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SampleChunk>) return MessageType::chunk;
        else if constexpr (std::is_same_v<T, WeightsBlob>) return MessageType::weights;
        else if constexpr (std::is_same_v<T, ControlMsg>) return MessageType::control;
        else if constexpr (std::is_same_v<T, PairSubmit>) return MessageType::pair_submit;
        else return MessageType::subscribe;
      },
      m);
}

namespace wire_detail {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void floats(const MatF& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) f32(m.data()[i]);
  }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes& out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, ErrorCode short_code) : in_(in), short_code_(short_code) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    const auto n = u32();
    auto s = raw(n);
    return std::string(s.begin(), s.end());
  }
  MatF floats(Eigen::Index rows, Eigen::Index cols) {
    need(static_cast<std::size_t>(rows * cols) * 4);
    MatF m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f32();
    return m;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail(short_code_, "need " + std::to_string(n) + " bytes, have " + std::to_string(in_.size() - pos_));
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  ErrorCode short_code_;
};

inline void write_pair(Writer& w, const WindowPair& p) {
  w.f64(p.t_end);
  w.u16(static_cast<std::uint16_t>(p.emg.rows()));
  w.u16(static_cast<std::uint16_t>(p.emg.cols()));
  w.u16(static_cast<std::uint16_t>(p.target.rows()));
  w.u16(static_cast<std::uint16_t>(p.target.cols()));
  w.floats(p.emg);
  w.floats(p.target);
}

inline WindowPair read_pair(Reader& r) {
  WindowPair p;
  p.t_end = r.f64();
  const auto er = r.u16(), ec = r.u16(), tr = r.u16(), tc = r.u16();
  p.emg = r.floats(er, ec);
  p.target = r.floats(tr, tc);
  return p;
}

inline Bytes encode_payload(const Message& msg) {
  Bytes out;
  Writer w(out);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SampleChunk>) {
          w.u16(v.stream_id);
          w.f64(v.t0);
          w.f32(v.rate);
          w.u32(static_cast<std::uint32_t>(v.samples.rows()));
          w.u16(static_cast<std::uint16_t>(v.samples.cols()));
          w.floats(v.samples);
        } else if constexpr (std::is_same_v<T, WeightsBlob>) {
          w.u64(v.version);
          w.raw(v.data);
        } else if constexpr (std::is_same_v<T, ControlMsg>) {
          w.raw(std::span(reinterpret_cast<const std::uint8_t*>(v.body.data()), v.body.size()));
        } else if constexpr (std::is_same_v<T, PairSubmit>) {
          w.u32(static_cast<std::uint32_t>(v.pairs.size()));
          for (const auto& p : v.pairs) write_pair(w, p);
        } else {
          w.raw(std::span(reinterpret_cast<const std::uint8_t*>(v.client.data()), v.client.size()));
        }
      },
      msg);
  return out;
}

inline Message decode_payload(MessageType type, std::span<const std::uint8_t> payload) {
  // Inside a frame whose length is already known, running short means the
  // declared length disagrees with the content.
  Reader r(payload, ErrorCode::length_mismatch);
  Message out;
  switch (type) {
    case MessageType::chunk: {
      SampleChunk c;
      c.stream_id = r.u16();
      c.t0 = r.f64();
      c.rate = r.f32();
      const auto n = r.u32();
      const auto ch = r.u16();
      if (static_cast<std::uint64_t>(n) * ch * 4 != r.remaining())
        fail(ErrorCode::length_mismatch, "chunk sample block size disagrees with header");
      c.samples = r.floats(n, ch);
      out = std::move(c);
      break;
    }
    case MessageType::weights: {
      WeightsBlob b;
      b.version = r.u64();
      auto rest = r.raw(r.remaining());
      b.data.assign(rest.begin(), rest.end());
      out = std::move(b);
      break;
    }
    case MessageType::control: {
      auto rest = r.raw(r.remaining());
      out = ControlMsg{std::string(rest.begin(), rest.end())};
      break;
    }
    case MessageType::pair_submit: {
      PairSubmit ps;
      const auto n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) ps.pairs.push_back(read_pair(r));
      out = std::move(ps);
      break;
    }
    case MessageType::subscribe: {
      auto rest = r.raw(r.remaining());
      out = Subscribe{std::string(rest.begin(), rest.end())};
      break;
    }
    default:
      fail(ErrorCode::unknown_message, "unknown message type " + std::to_string(static_cast<int>(type)));
  }
  if (r.remaining() != 0) fail(ErrorCode::length_mismatch, "trailing bytes in payload");
  return out;
}

inline bool known_type(std::uint8_t t) { return t >= 0x01 && t <= 0x05; }

struct FrameHeader {
  MessageType type;
  std::uint32_t length;
};

inline FrameHeader parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) fail(ErrorCode::truncated, "frame shorter than header");
  if (std::memcmp(bytes.data(), "ALVI", 4) != 0) fail(ErrorCode::bad_magic, "frame does not start with ALVI");
  if (bytes[4] != kWireVersion) fail(ErrorCode::bad_magic, "unsupported wire version " + std::to_string(bytes[4]));
  if (!known_type(bytes[5])) fail(ErrorCode::unknown_message, "unknown message type " + std::to_string(bytes[5]));
  Reader r(bytes.subspan(6, 4), ErrorCode::truncated);
  return {static_cast<MessageType>(bytes[5]), r.u32()};
}

}  // namespace wire_detail

/// Serialize a message into one complete frame.
inline Bytes encode_message(const Message& msg) {
  Bytes payload = wire_detail::encode_payload(msg);
  Bytes out;
  out.reserve(kFrameHeaderSize + payload.size());
  out.insert(out.end(), {'A', 'L', 'V', 'I', kWireVersion, static_cast<std::uint8_t>(message_type(msg))});
  wire_detail::Writer w(out);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

/// Parse exactly one frame. Throws Error on malformed input.
inline Message decode_message(std::span<const std::uint8_t> bytes) {
  const auto h = wire_detail::parse_header(bytes);
  const std::size_t total = kFrameHeaderSize + h.length;
  if (bytes.size() < total) fail(ErrorCode::truncated, "frame truncated: need " + std::to_string(total) + " bytes, have " + std::to_string(bytes.size()));
  if (bytes.size() > total) fail(ErrorCode::length_mismatch, "bytes beyond declared frame length");
  return wire_detail::decode_payload(h.type, bytes.subspan(kFrameHeaderSize, h.length));
}

/// Incremental frame extraction from a byte stream.
class FrameReader {
 public:
  explicit FrameReader(std::size_t max_frame = 256u << 20) : max_frame_(max_frame) {}

  void feed(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

  /// Next complete message, if one is buffered.
  std::optional<Message> next() {
    if (buf_.size() < kFrameHeaderSize) return std::nullopt;
    const auto h = wire_detail::parse_header(buf_);
    if (h.length > max_frame_) fail(ErrorCode::length_mismatch, "frame exceeds size limit");
    const std::size_t total = kFrameHeaderSize + h.length;
    if (buf_.size() < total) return std::nullopt;
    Message m = decode_message(std::span(buf_.data(), total));
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(total));
    return m;
  }

  std::size_t buffered() const { return buf_.size(); }

 private:
  Bytes buf_;
  std::size_t max_frame_;
};

}  // namespace alvi
