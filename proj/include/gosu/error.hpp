#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gosu {

enum class ErrorCode {
  kCycleDetected,
  kEmptyGraph,
  kInvalidGraph,
  kInvalidProcessorCount,
  kInvalidOrder,
  kTooLarge,
  kDegenerateGraph,
  kUnknownPreset,
  kInvalidParams,
  kIoFailure,
  kParseError,
  kShapeMismatch,
  kAllMasked,
  kNonFinite,
  kEmptyRemainder,
  kLengthMismatch,
  kMissingArtifact,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kCycleDetected: return "CycleDetected";
    case ErrorCode::kEmptyGraph: return "EmptyGraph";
    case ErrorCode::kInvalidGraph: return "InvalidGraph";
    case ErrorCode::kInvalidProcessorCount: return "InvalidProcessorCount";
    case ErrorCode::kInvalidOrder: return "InvalidOrder";
    case ErrorCode::kTooLarge: return "TooLarge";
    case ErrorCode::kDegenerateGraph: return "DegenerateGraph";
    case ErrorCode::kUnknownPreset: return "UnknownPreset";
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kAllMasked: return "AllMasked";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kEmptyRemainder: return "EmptyRemainder";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kMissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

/// All library failures are reported through this exception; `code()` is
/// stable and intended for programmatic handling.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gosu
