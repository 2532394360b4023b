#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tabsynth {

enum class ErrorCode {
  // data
  UnknownColumn,
  UnparsableCell,
  MissingHeader,
  MissingTarget,
  DegenerateClass,
  NTooLarge,
  InvalidSchema,
  Io,
  // encoder
  EmptyInput,
  DomainError,
  InvalidOneHot,
  LayoutMismatch,
  // conditioning
  OutOfRange,
  NonDistribution,
  // autodiff
  NotScalarLoss,
  UnsupportedOpForDoubleBackprop,
  ShapeMismatch,
  // gan
  WidthMismatch,
  LabelOutOfRange,
  NonFiniteLoss,
  InvalidCondition,
  InvalidConfig,
  // privacy
  EmptyLedger,
  BudgetTooSmall,
  BudgetExhaustedBeforeMinEpochs,
  NumericalOverflow,
  // metrics
  EmptyDistribution,
  SchemaMismatch,
  TooFewRows,
  SingleClassTrainingSet,
  // attacks
  GeneratorFailure,
  SingularDesign,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tabsynth
