#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace glsasm {

enum class ErrorKind {
  DegenerateShape,
  NonConvergence,
  SingularSystem,
  InsufficientData,
  NoVariance,
  OutOfBounds,
  AllLandmarksInvalid,
  FormatError,
  VersionMismatch,
  InvariantViolation,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so that
/// callers (the CLI in particular) can map it onto a stable exit code.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateShape: return "DegenerateShape";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::NoVariance: return "NoVariance";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::AllLandmarksInvalid: return "AllLandmarksInvalid";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace glsasm
