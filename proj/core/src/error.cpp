#include "wordflow/error.hpp"

namespace wordflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DegenerateScores: return "DegenerateScores";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::AdapterUnavailable: return "AdapterUnavailable";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::CorruptStore: return "CorruptStore";
    case ErrorCode::ConstraintViolation: return "ConstraintViolation";
    case ErrorCode::PlacementOverflow: return "PlacementOverflow";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
  }
  return "Unknown";
}

ErrorCode error_code_from_string(std::string_view name) {
  for (int c = 0; c <= static_cast<int>(ErrorCode::EmptyDataset); ++c) {
    if (to_string(static_cast<ErrorCode>(c)) == name) return static_cast<ErrorCode>(c);
  }
  return ErrorCode::InvalidInput;
}

void raise(ErrorCode code, const std::string& message) {
  switch (code) {
    case ErrorCode::InvalidInput: throw InvalidInput(message);
    case ErrorCode::DegenerateScores: throw DegenerateScores(message);
    case ErrorCode::NumericalError: throw NumericalError(message);
    case ErrorCode::ProtocolError: throw ProtocolError(message);
    case ErrorCode::AdapterUnavailable: throw AdapterUnavailable(message);
    case ErrorCode::FormatError: throw FormatError(message);
    case ErrorCode::CorruptStore: throw CorruptStore(message);
    case ErrorCode::ConstraintViolation: throw ConstraintViolation(message);
    case ErrorCode::PlacementOverflow: throw PlacementOverflow(message);
    case ErrorCode::EmptySelection: throw EmptySelection(message);
    case ErrorCode::EmptyDataset: throw EmptyDataset(message);
  }
  throw Error(code, message);
}

}  // namespace wordflow
