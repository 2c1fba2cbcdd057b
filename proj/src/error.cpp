#include "table2vec/error.hpp"

namespace t2v {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io-error";
    case ErrorCode::kSchema: return "schema-error";
    case ErrorCode::kParse: return "parse-error";
    case ErrorCode::kMissingDateIndex: return "missing-date-index";
    case ErrorCode::kEmptyTable: return "empty-table";
    case ErrorCode::kMixedKindFeature: return "mixed-kind-feature";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kNonScalarLoss: return "non-scalar-loss";
    case ErrorCode::kNonFiniteGradient: return "non-finite-gradient";
    case ErrorCode::kIdOutOfRange: return "id-out-of-range";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kAllMaskedInput: return "all-masked-input";
    case ErrorCode::kSchemaMismatch: return "schema-mismatch";
    case ErrorCode::kAllTermsDisabled: return "all-terms-disabled";
    case ErrorCode::kNoLabeledCustomers: return "no-labeled-customers";
    case ErrorCode::kUnknownTask: return "unknown-task";
    case ErrorCode::kPositionOutOfRange: return "position-out-of-range";
    case ErrorCode::kInvalidCellCoordinates: return "invalid-cell-coordinates";
    case ErrorCode::kSingleClassInput: return "single-class-input";
    case ErrorCode::kInfeasibleConfig: return "infeasible-config";
    case ErrorCode::kInvalidConfig: return "invalid-config";
  }
  return "unknown";
}

}  // namespace t2v
