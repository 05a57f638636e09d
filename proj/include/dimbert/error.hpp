#pragma once

#include <stdexcept>
#include <string>

namespace dimbert {

// Error categories exposed unchanged through the C API as status codes.
enum class ErrorCode {
  invalid_argument,
  config,
  shape,
  contract,
  vocab,
  length,
  index,
  numeric,
  io,
  fingerprint,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::config: return "config";
    case ErrorCode::shape: return "shape";
    case ErrorCode::contract: return "contract";
    case ErrorCode::vocab: return "vocab";
    case ErrorCode::length: return "length";
    case ErrorCode::index: return "index";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::io: return "io";
    case ErrorCode::fingerprint: return "fingerprint";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace dimbert
