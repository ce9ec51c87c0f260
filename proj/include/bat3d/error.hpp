#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bat3d {

enum class ErrorCode {
  InvalidPair,        // interpolation endpoints disagree on track or class
  Ordering,           // start frame is not before end frame
  InsufficientData,
  NoPlaneFound,
  MissingFile,
  Malformed,          // document does not parse or has the wrong shape
  InvariantViolation,
  Truncated,
  NonFinite,
  VersionMismatch,
  Schema,
  UnknownSchema,
  OutOfRange,
  NotFound,
  MissingKeyframe,
  SequenceMismatch,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidPair: return "invalid-pair";
    case ErrorCode::Ordering: return "ordering";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::NoPlaneFound: return "no-plane-found";
    case ErrorCode::MissingFile: return "missing-file";
    case ErrorCode::Malformed: return "malformed";
    case ErrorCode::InvariantViolation: return "invariant-violation";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::Schema: return "schema";
    case ErrorCode::UnknownSchema: return "unknown-schema";
    case ErrorCode::OutOfRange: return "out-of-range";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::MissingKeyframe: return "missing-keyframe";
    case ErrorCode::SequenceMismatch: return "sequence-mismatch";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

/// Domain error. `field()` names the offending input (a manifest key, a
/// camera, a row number) when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace bat3d
