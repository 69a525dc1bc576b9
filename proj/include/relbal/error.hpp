#pragma once

#include <stdexcept>
#include <string>

namespace relbal {

// Machine-parsable failure classes. The CLI prints failures as one
// line, "<class>: <message>", and exits nonzero.
enum class ErrorKind {
  invalid_input,
  shape,
  parse,
  io,
  missing_class,
  disabled_feature,
  config,
  incompatible,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::shape: return "shape-error";
    case ErrorKind::parse: return "parse-error";
    case ErrorKind::io: return "io-error";
    case ErrorKind::missing_class: return "missing-class";
    case ErrorKind::disabled_feature: return "disabled-feature";
    case ErrorKind::config: return "config-error";
    case ErrorKind::incompatible: return "incompatible";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string line() const { return std::string(to_string(kind_)) + ": " + what(); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace relbal
