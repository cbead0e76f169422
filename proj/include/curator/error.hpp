#pragma once

#include <stdexcept>
#include <string>

namespace curator {

enum class ErrorKind {
  invalid_argument,
  io,
  parse,
  duplicate_id,
  dimension_mismatch,
  non_finite,
  truncated,
  format,
  overflow,
  spec_mismatch,
  allocation,
  empty_input,
  transport,
  service,
  protocol,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::duplicate_id: return "duplicate_id";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::format: return "format";
    case ErrorKind::overflow: return "overflow";
    case ErrorKind::spec_mismatch: return "spec_mismatch";
    case ErrorKind::allocation: return "allocation";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::transport: return "transport";
    case ErrorKind::service: return "service";
    case ErrorKind::protocol: return "protocol";
  }
  return "unknown";
}

/// Base exception for every failure raised by the library. The kind lets
/// callers (and tests) branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace curator
