#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lsf {

enum class ErrorCode {
  ShapeMismatch,
  TokenOutOfRange,
  SequenceTooLong,
  TargetOutOfRange,
  DegenerateRow,
  AllMaskedRow,
  InvalidArgument,
  IncompleteGradientSet,
  UntaggedTensor,
  DuplicateName,
  UnknownName,
  CapacityExceeded,
  ParseError,
  IoError,
  NonFiniteGradient,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::TargetOutOfRange: return "TargetOutOfRange";
    case ErrorCode::DegenerateRow: return "DegenerateRow";
    case ErrorCode::AllMaskedRow: return "AllMaskedRow";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IncompleteGradientSet: return "IncompleteGradientSet";
    case ErrorCode::UntaggedTensor: return "UntaggedTensor";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::UnknownName: return "UnknownName";
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
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

#define LSF_CHECK(cond, code, msg)            \
  do {                                        \
    if (!(cond)) throw ::lsf::Error((code), (msg)); \
  } while (false)

}  // namespace lsf
