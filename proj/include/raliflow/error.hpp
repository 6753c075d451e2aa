#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace raliflow {

enum class ErrorCode {
  DegeneratePoint,
  TrackMismatch,
  DuplicateTrackId,
  ShapeMismatch,
  IndexOutOfRange,
  NotScalar,
  NonFinite,
  EmptyCloud,
  FrameMismatch,
  GridMismatch,
  LengthMismatch,
  ConfigInvalid,
  MissingFile,
  SchemaViolation,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegeneratePoint: return "DegeneratePoint";
    case ErrorCode::TrackMismatch: return "TrackMismatch";
    case ErrorCode::DuplicateTrackId: return "DuplicateTrackId";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::FrameMismatch: return "FrameMismatch";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace raliflow
