#pragma once

#include <stdexcept>
#include <string>

namespace moco {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  OutOfBounds,
  IoError,
  ParseError,
  NoConvergence,
  EmptyDataset,
};

/// Structured error carrying a machine-checkable code next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::OutOfBounds: return "out_of_bounds";
    case ErrorCode::IoError: return "io_error";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::NoConvergence: return "no_convergence";
    case ErrorCode::EmptyDataset: return "empty_dataset";
  }
  return "unknown";
}

inline void check(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) throw Error(code, message);
}

}  // namespace moco
