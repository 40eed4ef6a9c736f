#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mempert {

enum class ErrorCode {
  kInvalidParameter,
  kDegeneratePosterior,
  kNumericalFailure,
  kUnsupportedCurvature,
  kUnsupportedFamily,
  kSingularCurvature,
  kLeverageDegenerate,
  kResourceLimit,
  kConvergenceFailure,
  kCorrelationUndefined,
  kParseError,
  kLabelError,
  kConfigError,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

// Every failure in the library is reported as an Error carrying its code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace mempert
