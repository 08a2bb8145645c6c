#pragma once

#include <stdexcept>
#include <string>

namespace stemscribe {

enum class ErrorCode {
  kFileNotFound,
  kMalformedHeader,
  kUnsupportedCodec,
  kUnwritablePath,
  kInvalidArgument,
  kShapeMismatch,
  kNotCola,
  kAboveNyquist,
  kZeroReference,
  kDegenerateReferences,
  kBadMagic,
  kTruncated,
  kDanglingNote,
  kPitchOutOfRange,
  kExecutableNotFound,
  kProcessFailed,
  kTimeout,
  kOutputMissing,
  kDivergence,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kFileNotFound: return "file not found";
    case ErrorCode::kMalformedHeader: return "malformed header";
    case ErrorCode::kUnsupportedCodec: return "unsupported codec";
    case ErrorCode::kUnwritablePath: return "unwritable path";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kNotCola: return "window/hop pair violates overlap-add";
    case ErrorCode::kAboveNyquist: return "frequency above Nyquist";
    case ErrorCode::kZeroReference: return "zero reference signal";
    case ErrorCode::kDegenerateReferences: return "rank-deficient reference set";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kTruncated: return "truncated data";
    case ErrorCode::kDanglingNote: return "dangling note-on";
    case ErrorCode::kPitchOutOfRange: return "pitch out of range";
    case ErrorCode::kExecutableNotFound: return "executable not found";
    case ErrorCode::kProcessFailed: return "process failed";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kOutputMissing: return "output missing";
    case ErrorCode::kDivergence: return "training diverged";
  }
  return "unknown error";
}

// Every failure in the library surfaces as an Error carrying a code the
// caller can branch on; what() holds the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace stemscribe
