#pragma once

#include <stdexcept>
#include <string>

namespace alvi {

enum class ErrorCode {
  invalid_argument,
  unknown_stream,
  non_monotonic,
  insufficient_history,
  coverage_gap,
  bad_magic,
  truncated,
  unknown_message,
  length_mismatch,
  shape_mismatch,
  config_mismatch,
  corrupt_file,
  non_finite,
  io,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::unknown_stream: return "unknown_stream";
    case ErrorCode::non_monotonic: return "non_monotonic";
    case ErrorCode::insufficient_history: return "insufficient_history";
    case ErrorCode::coverage_gap: return "coverage_gap";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::unknown_message: return "unknown_message";
    case ErrorCode::length_mismatch: return "length_mismatch";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::config_mismatch: return "config_mismatch";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace alvi
