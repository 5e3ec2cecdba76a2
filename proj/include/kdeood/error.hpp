#pragma once

#include <stdexcept>
#include <string>

namespace kdeood {

/// Error classes. Each maps to a distinct CLI exit code.
enum class ErrorKind {
  usage = 2,          // bad flags or config values
  io = 3,             // open/read/write failures
  format = 4,         // malformed file structure
  checksum = 5,       // FNV-1a mismatch
  non_finite = 6,     // NaN / Inf in data
  dimension = 7,      // shape or layer mismatch
  invalid_argument = 8,
  precondition = 9,   // pipeline stage prerequisites unmet
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::non_finite: return "non-finite";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::precondition: return "precondition";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace detail
}  // namespace kdeood
