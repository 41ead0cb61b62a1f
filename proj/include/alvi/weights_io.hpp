#pragma once

// Weights file:
//   "ALVW" | version u32 | config JSON (u32 length + bytes) | tensor count u32 |
//   per tensor: name (u32 length + UTF-8) | rank u8 | dims u32 each | f32 data
// All little-endian. Optimizer moments travel as tensors named adam.m/<p> and
// adam.v/<p>; the optimizer step lives in the JSON blob.

#include <cstring>
#include <string>

#include <json.hpp>

#include "alvi/error.hpp"
#include "alvi/handformer.hpp"
#include "alvi/session_io.hpp"
#include "alvi/wire.hpp"

namespace alvi {

inline Bytes save_weights(const ModelState& s) {
  Bytes out = {'A', 'L', 'V', 'W'};
  wire_detail::Writer w(out);
  w.u32(static_cast<std::uint32_t>(s.version));
  const json cfg = {{"model", s.config}, {"adam", s.adam}, {"step", s.step}};
  w.str(cfg.dump());
  w.u32(static_cast<std::uint32_t>(3 * s.params.size()));
  auto put = [&w](const std::string& name, const MatF& t) {
    w.str(name);
    w.u8(2);
    w.u32(static_cast<std::uint32_t>(t.rows()));
    w.u32(static_cast<std::uint32_t>(t.cols()));
    w.floats(t);
  };
  for (std::size_t i = 0; i < s.params.size(); ++i) put(s.params.names[i], s.params.tensors[i]);
  for (std::size_t i = 0; i < s.params.size(); ++i) put("adam.m/" + s.params.names[i], s.adam_m.tensors[i]);
  for (std::size_t i = 0; i < s.params.size(); ++i) put("adam.v/" + s.params.names[i], s.adam_v.tensors[i]);
  return out;
}

/// Parse a weights file. When `expected` is given, its shape-determining
/// fields must match the stored configuration.
inline ModelState load_weights(std::span<const std::uint8_t> bytes, const ModelConfig* expected = nullptr) {
  if (bytes.size() < 4) fail(ErrorCode::truncated, "weights file shorter than magic");
  if (std::memcmp(bytes.data(), "ALVW", 4) != 0) fail(ErrorCode::bad_magic, "not an ALVW weights file");
  wire_detail::Reader r(bytes.subspan(4), ErrorCode::truncated);
  ModelState s;
  s.version = r.u32();
  try {
    const json cfg = json::parse(r.str());
    s.config = cfg.at("model").get<ModelConfig>();
    s.adam = cfg.at("adam").get<AdamConfig>();
    s.step = cfg.at("step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt_file, std::string("weights config blob: ") + e.what());
  }
  if (expected && !expected->shape_compatible(s.config))
    fail(ErrorCode::config_mismatch, "weights were saved for a different model configuration (d_model " +
                                         std::to_string(s.config.d_model) + " vs " + std::to_string(expected->d_model) + ")");
  try {
    s.config.validate();
  } catch (const Error& e) {
    fail(ErrorCode::corrupt_file, e.what());
  }

  // Reference layout for shape checks.
  const ParamSet<float> layout = init_params(s.config);
  s.params = layout.zeros_like();
  s.adam_m = layout.zeros_like();
  s.adam_v = layout.zeros_like();

  const auto count = r.u32();
  require(count == 3 * layout.size(), ErrorCode::config_mismatch,
          "tensor count " + std::to_string(count) + " does not match configuration (" + std::to_string(3 * layout.size()) + ")");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const auto rank = r.u8();
    require(rank == 2, ErrorCode::corrupt_file, "tensor " + name + " has unsupported rank " + std::to_string(rank));
    const auto rows = r.u32(), cols = r.u32();
    ParamSet<float>* target = &s.params;
    std::string base = name;
    if (name.rfind("adam.m/", 0) == 0) {
      target = &s.adam_m;
      base = name.substr(7);
    } else if (name.rfind("adam.v/", 0) == 0) {
      target = &s.adam_v;
      base = name.substr(7);
    }
    require(layout.index.count(base) != 0, ErrorCode::config_mismatch, "unexpected tensor " + name);
    MatF& dst = (*target)[base];
    require(static_cast<Eigen::Index>(rows) == dst.rows() && static_cast<Eigen::Index>(cols) == dst.cols(),
            ErrorCode::config_mismatch, "tensor " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols));
    dst = r.floats(rows, cols);
  }
  if (r.remaining() != 0) fail(ErrorCode::corrupt_file, "trailing bytes after tensors");
  return s;
}

inline void save_weights_file(const ModelState& s, const std::string& path) { write_file(path, save_weights(s)); }

inline ModelState load_weights_file(const std::string& path, const ModelConfig* expected = nullptr) {
  return load_weights(read_file(path), expected);
}

/// Bitwise equality of every tensor, the configuration and the counters.
inline bool bit_identical(const ModelState& a, const ModelState& b) {
  if (!(a.config == b.config) || !(a.adam == b.adam) || a.step != b.step || a.version != b.version) return false;
  auto same = [](const ParamSet<float>& x, const ParamSet<float>& y) {
    if (x.names != y.names) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto& p = x.tensors[i];
      const auto& q = y.tensors[i];
      if (p.rows() != q.rows() || p.cols() != q.cols()) return false;
      if (std::memcmp(p.data(), q.data(), sizeof(float) * static_cast<std::size_t>(p.size())) != 0) return false;
    }
    return true;
  };
  return same(a.params, b.params) && same(a.adam_m, b.adam_m) && same(a.adam_v, b.adam_v);
}

}  // namespace alvi
