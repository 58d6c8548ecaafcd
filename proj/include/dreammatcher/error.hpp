#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dm {

enum class ErrorKind {
  validation,  // non-finite values, out-of-range parameters
  shape,       // mismatched grid dimensions
  range,       // step index / dimension out of range
  config,      // session configuration problems
  backend,     // denoiser failures
  protocol,    // wire-level failures
  io,          // file-system failures
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::shape: return "shape";
    case ErrorKind::range: return "range";
    case ErrorKind::config: return "config";
    case ErrorKind::backend: return "backend";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string_view message) {
  throw Error(kind, std::string(message));
}

inline void require(bool condition, ErrorKind kind, std::string_view message) {
  if (!condition) fail(kind, message);
}

}  // namespace dm
