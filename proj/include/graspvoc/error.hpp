// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace graspvoc {

enum class ErrorCode {
  kIo,
  kInvalidArgument,
  kDegenerateCloud,
  kEmptyCloud,
  kUnknownLabel,
  kEmptyAssignment,
  kMalformedResponse,
  kProviderUnavailable,
  kValidationFailed,
  kSegmentationEmpty,
  kNoContacts,
  kNoCompatibleGrasp,
  kNoControls,
  kOutOfRange,
  kEmptyList,
  kNoGraspResponses,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDegenerateCloud: return "DegenerateCloud";
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kEmptyAssignment: return "EmptyAssignment";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::kValidationFailed: return "ValidationFailed";
    case ErrorCode::kSegmentationEmpty: return "SegmentationEmpty";
    case ErrorCode::kNoContacts: return "NoContacts";
    case ErrorCode::kNoCompatibleGrasp: return "NoCompatibleGrasp";
    case ErrorCode::kNoControls: return "NoControls";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kEmptyList: return "EmptyList";
    case ErrorCode::kNoGraspResponses: return "NoGraspResponses";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` carries the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

/// Process exit codes shared by every CLI command.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kIo = 1;
inline constexpr int kProvider = 2;
inline constexpr int kValidation = 3;
inline constexpr int kNoCompatibleGrasp = 4;
}  // namespace exit_code

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
      return exit_code::kIo;
    case ErrorCode::kProviderUnavailable:
      return exit_code::kProvider;
    case ErrorCode::kNoCompatibleGrasp:
      return exit_code::kNoCompatibleGrasp;
    default:
      return exit_code::kValidation;
  }
}

}  // namespace graspvoc
