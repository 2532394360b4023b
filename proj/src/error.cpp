#include "tabsynth/error.hpp"

namespace tabsynth {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::UnparsableCell: return "UnparsableCell";
    case ErrorCode::MissingHeader: return "MissingHeader";
    case ErrorCode::MissingTarget: return "MissingTarget";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::NTooLarge: return "NTooLarge";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::Io: return "Io";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::InvalidOneHot: return "InvalidOneHot";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NonDistribution: return "NonDistribution";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::UnsupportedOpForDoubleBackprop: return "UnsupportedOpForDoubleBackprop";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidCondition: return "InvalidCondition";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyLedger: return "EmptyLedger";
    case ErrorCode::BudgetTooSmall: return "BudgetTooSmall";
    case ErrorCode::BudgetExhaustedBeforeMinEpochs: return "BudgetExhaustedBeforeMinEpochs";
    case ErrorCode::NumericalOverflow: return "NumericalOverflow";
    case ErrorCode::EmptyDistribution: return "EmptyDistribution";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::SingleClassTrainingSet: return "SingleClassTrainingSet";
    case ErrorCode::GeneratorFailure: return "GeneratorFailure";
    case ErrorCode::SingularDesign: return "SingularDesign";
  }
  return "Unknown";
}

}  // namespace tabsynth
