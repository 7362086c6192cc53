#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wordflow {

enum class ErrorCode {
  InvalidInput,
  DegenerateScores,
  NumericalError,
  ProtocolError,
  AdapterUnavailable,
  FormatError,
  CorruptStore,
  ConstraintViolation,
  PlacementOverflow,
  EmptySelection,
  EmptyDataset,
};

std::string_view to_string(ErrorCode code);
/// Inverse of to_string; unknown names map to InvalidInput.
ErrorCode error_code_from_string(std::string_view name);

/// Base of every exception thrown by the library. The code is stable and
/// machine-readable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <ErrorCode Code>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& message) : Error(Code, message) {}
};

using InvalidInput = TypedError<ErrorCode::InvalidInput>;
using DegenerateScores = TypedError<ErrorCode::DegenerateScores>;
using NumericalError = TypedError<ErrorCode::NumericalError>;
using ProtocolError = TypedError<ErrorCode::ProtocolError>;
using AdapterUnavailable = TypedError<ErrorCode::AdapterUnavailable>;
using FormatError = TypedError<ErrorCode::FormatError>;
using CorruptStore = TypedError<ErrorCode::CorruptStore>;
using ConstraintViolation = TypedError<ErrorCode::ConstraintViolation>;
using PlacementOverflow = TypedError<ErrorCode::PlacementOverflow>;
using EmptySelection = TypedError<ErrorCode::EmptySelection>;
using EmptyDataset = TypedError<ErrorCode::EmptyDataset>;

/// Throws the TypedError matching `code`.
[[noreturn]] void raise(ErrorCode code, const std::string& message);

}  // namespace wordflow
