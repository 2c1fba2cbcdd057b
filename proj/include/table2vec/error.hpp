#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace t2v {

enum class ErrorCode {
  kIo,
  kSchema,
  kParse,
  kMissingDateIndex,
  kEmptyTable,
  kMixedKindFeature,
  kShapeMismatch,
  kNonScalarLoss,
  kNonFiniteGradient,
  kIdOutOfRange,
  kLengthMismatch,
  kAllMaskedInput,
  kSchemaMismatch,
  kAllTermsDisabled,
  kNoLabeledCustomers,
  kUnknownTask,
  kPositionOutOfRange,
  kInvalidCellCoordinates,
  kSingleClassInput,
  kInfeasibleConfig,
  kInvalidConfig,
};

// Stable kebab-case identifier used in machine-readable error output.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace t2v
