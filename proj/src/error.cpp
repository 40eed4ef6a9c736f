#include "mempert/error.hpp"

namespace mempert {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParameter: return "InvalidParameter";
    case ErrorCode::kDegeneratePosterior: return "DegeneratePosterior";
    case ErrorCode::kNumericalFailure: return "NumericalFailure";
    case ErrorCode::kUnsupportedCurvature: return "UnsupportedCurvature";
    case ErrorCode::kUnsupportedFamily: return "UnsupportedFamily";
    case ErrorCode::kSingularCurvature: return "SingularCurvature";
    case ErrorCode::kLeverageDegenerate: return "LeverageDegenerate";
    case ErrorCode::kResourceLimit: return "ResourceLimit";
    case ErrorCode::kConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::kCorrelationUndefined: return "CorrelationUndefined";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kLabelError: return "LabelError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace mempert
