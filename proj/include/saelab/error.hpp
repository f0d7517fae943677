#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace saelab {

enum class ErrorCode {
  EmptyInput,
  DimensionMismatch,
  IoError,
  FormatError,
  CorruptFile,
  DegenerateSample,
  InvalidNormalizer,
  InvalidConfig,
  InvalidActivation,
  DegenerateLabels,
  BadFeatureId,
  InvariantViolation,
  SpecError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::InvalidNormalizer: return "InvalidNormalizer";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidActivation: return "InvalidActivation";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::BadFeatureId: return "BadFeatureId";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::SpecError: return "SpecError";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above so the
// CLI and the HTTP layer can map it to an exit status or a response code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace saelab
