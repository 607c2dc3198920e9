#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pram {

enum class ErrorCode {
  kMinimalSampleUnavailable,
  kDegenerateConfiguration,
  kNoConsensus,
  kBadMagic,
  kUnsupportedVersion,
  kChecksumMismatch,
  kInvariantViolation,
  kParseError,
  kLinkageError,
  kDescriptorDimMismatch,
  kTooFewPoints,
  kShapeMismatch,
  kLengthMismatch,
  kInvalidArgument,
  kIoError,
};

std::string_view ErrorCodeName(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pram
