#pragma once

// Container files: "ALVS" | header length u32 LE | JSON header | wire frames.
//
// Session files carry one frame per chunk for each stream; replay-history
// files carry pair_submit frames.

#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "alvi/error.hpp"
#include "alvi/session.hpp"
#include "alvi/wire.hpp"

namespace alvi {

using json = nlohmann::json;

struct Container {
  json header;
  std::vector<Message> frames;
};

inline Bytes encode_container(const Container& c) {
  Bytes out = {'A', 'L', 'V', 'S'};
  const std::string h = c.header.dump();
  wire_detail::Writer w(out);
  w.u32(static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  for (const auto& m : c.frames) {
    Bytes f = encode_message(m);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

inline Container decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) fail(ErrorCode::truncated, "container shorter than its header");
  if (std::memcmp(bytes.data(), "ALVS", 4) != 0) fail(ErrorCode::bad_magic, "not an ALVS container");
  wire_detail::Reader r(bytes.subspan(4), ErrorCode::truncated);
  const auto hlen = r.u32();
  auto hbytes = r.raw(hlen);
  Container c;
  try {
    c.header = json::parse(hbytes.begin(), hbytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt_file, std::string("container header is not valid JSON: ") + e.what());
  }
  std::size_t pos = 8 + hlen;
  while (pos < bytes.size()) {
    const auto h = wire_detail::parse_header(bytes.subspan(pos));
    const std::size_t total = kFrameHeaderSize + h.length;
    if (bytes.size() - pos < total) fail(ErrorCode::truncated, "container frame truncated");
    c.frames.push_back(decode_message(bytes.subspan(pos, total)));
    pos += total;
  }
  return c;
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorCode::io, "short write to " + path);
}

namespace session_detail {

inline json stream_json(std::uint16_t id, const char* name, StreamKind kind, const AlignedTrack& t) {
  return {{"stream_id", id},     {"name", name},         {"kind", to_string(kind)},
          {"channel_count", t.values.cols()}, {"nominal_rate", t.rate}, {"t0", t.t0},
          {"samples", t.size()}};
}

inline void append_chunks(std::vector<Message>& frames, std::uint16_t id, const AlignedTrack& t) {
  const auto per_chunk = static_cast<Eigen::Index>(std::max(1.0, t.rate));  // one second per chunk
  for (Eigen::Index start = 0; start < t.size(); start += per_chunk) {
    const Eigen::Index n = std::min(per_chunk, t.size() - start);
    SampleChunk c;
    c.stream_id = id;
    c.t0 = t.time_at(start);
    c.rate = static_cast<float>(t.rate);
    c.samples = t.values.middleRows(start, n).cast<float>();
    frames.emplace_back(std::move(c));
  }
}

}  // namespace session_detail

inline Bytes encode_session(const SessionRecording& s) {
  Container c;
  json streams = json::array();
  streams.push_back(session_detail::stream_json(kEmgStreamId, "emg", StreamKind::emg, s.emg));
  streams.push_back(session_detail::stream_json(kPoseQuatStreamId, "pose_quat", StreamKind::pose_quat, s.pose_quat));
  if (s.truth_angles.size() > 0)
    streams.push_back(session_detail::stream_json(kTruthAnglesStreamId, "truth_angles", StreamKind::pose_angles, s.truth_angles));
  json ann = json::array();
  for (const auto& a : s.annotations) ann.push_back({{"gesture_id", a.gesture_id}, {"t_start", a.t_start}, {"t_end", a.t_end}});
  c.header = {{"format", "alvs"}, {"kind", "session"}, {"version", 1},
              {"seed", s.seed},   {"model_hash", s.model_hash}, {"hand", s.hand == Hand::left ? "left" : "right"},
              {"streams", streams}, {"annotations", ann}};
  session_detail::append_chunks(c.frames, kEmgStreamId, s.emg);
  session_detail::append_chunks(c.frames, kPoseQuatStreamId, s.pose_quat);
  if (s.truth_angles.size() > 0) session_detail::append_chunks(c.frames, kTruthAnglesStreamId, s.truth_angles);
  return encode_container(c);
}

inline SessionRecording decode_session(std::span<const std::uint8_t> bytes) {
  Container c = decode_container(bytes);
  SessionRecording s;
  try {
    require(c.header.at("format") == "alvs" && c.header.at("kind") == "session", ErrorCode::corrupt_file, "not a session container");
    s.seed = c.header.at("seed").get<std::uint64_t>();
    s.model_hash = c.header.at("model_hash").get<std::string>();
    s.hand = c.header.value("hand", "right") == "left" ? Hand::left : Hand::right;
    for (const auto& a : c.header.at("annotations"))
      s.annotations.push_back({a.at("gesture_id").get<int>(), a.at("t_start").get<double>(), a.at("t_end").get<double>()});
    for (const auto& st : c.header.at("streams")) {
      const auto id = st.at("stream_id").get<std::uint16_t>();
      AlignedTrack* t = id == kEmgStreamId ? &s.emg : id == kPoseQuatStreamId ? &s.pose_quat : id == kTruthAnglesStreamId ? &s.truth_angles : nullptr;
      require(t != nullptr, ErrorCode::corrupt_file, "unexpected stream id " + std::to_string(id));
      t->t0 = st.at("t0").get<double>();
      t->rate = st.at("nominal_rate").get<double>();
      t->sources = {id};
      t->values.resize(st.at("samples").get<Eigen::Index>(), st.at("channel_count").get<Eigen::Index>());
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt_file, std::string("session header: ") + e.what());
  }
  std::map<std::uint16_t, Eigen::Index> filled;
  for (const auto& m : c.frames) {
    const auto* chunk = std::get_if<SampleChunk>(&m);
    require(chunk != nullptr, ErrorCode::corrupt_file, "session contains a non-chunk frame");
    AlignedTrack* t = chunk->stream_id == kEmgStreamId ? &s.emg : chunk->stream_id == kPoseQuatStreamId ? &s.pose_quat : &s.truth_angles;
    Eigen::Index& row = filled[chunk->stream_id];
    require(chunk->samples.cols() == t->values.cols() && row + chunk->samples.rows() <= t->values.rows(), ErrorCode::corrupt_file,
            "chunk does not fit its stream");
    t->values.middleRows(row, chunk->samples.rows()) = chunk->samples.cast<double>();
    row += chunk->samples.rows();
  }
  for (auto* t : {&s.emg, &s.pose_quat})
    require(filled[t->sources.empty() ? 0 : t->sources[0]] == t->values.rows(), ErrorCode::truncated, "session stream incomplete");
  return s;
}

inline void save_session(const SessionRecording& s, const std::string& path) { write_file(path, encode_session(s)); }
inline SessionRecording load_session(const std::string& path) { return decode_session(read_file(path)); }

/// Window pairs persisted as pair_submit frames of at most `per_frame` pairs.
inline Bytes encode_replay_history(const std::vector<WindowPair>& pairs, std::size_t per_frame = 256) {
  Container c;
  c.header = {{"format", "alvs"}, {"kind", "replay_history"}, {"version", 1}, {"pairs", pairs.size()}};
  for (std::size_t i = 0; i < pairs.size(); i += per_frame) {
    PairSubmit ps;
    ps.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(i),
                    pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), i + per_frame)));
    c.frames.emplace_back(std::move(ps));
  }
  return encode_container(c);
}

inline std::vector<WindowPair> decode_replay_history(std::span<const std::uint8_t> bytes) {
  Container c = decode_container(bytes);
  require(c.header.value("kind", "") == "replay_history", ErrorCode::corrupt_file, "not a replay history container");
  std::vector<WindowPair> out;
  for (auto& m : c.frames) {
    auto* ps = std::get_if<PairSubmit>(&m);
    require(ps != nullptr, ErrorCode::corrupt_file, "replay history contains a non-pair frame");
    for (auto& p : ps->pairs) out.push_back(std::move(p));
  }
  require(out.size() == c.header.value("pairs", out.size()), ErrorCode::truncated, "replay history incomplete");
  return out;
}

}  // namespace alvi
