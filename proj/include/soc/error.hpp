#pragma once

#include <stdexcept>
#include <string>

namespace soc {

enum class ErrorCode {
  ZeroNorm,
  BadDims,
  UnknownLabel,
  DimMismatch,
  DuplicateLabel,
  BadConfig,
  BadH,
  Degenerate,
  ZeroPattern,
  EmptySamples,
  UnknownShape,
  BadSpec,
  Io,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::BadDims: return "BadDims";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::DuplicateLabel: return "DuplicateLabel";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadH: return "BadH";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::ZeroPattern: return "ZeroPattern";
    case ErrorCode::EmptySamples: return "EmptySamples";
    case ErrorCode::UnknownShape: return "UnknownShape";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace soc
