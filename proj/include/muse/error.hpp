#pragma once

#include <stdexcept>
#include <string>

namespace muse {

enum class ErrorKind {
  MissingFile,
  MalformedRecord,
  DimMismatch,
  IoFailure,
  InvalidDataset,
  InfeasibleTargets,
  BadFractions,
  ZeroVector,
  EmptyInput,
  UnfitModel,
  Diverged,
  ShapeError,
  NonFiniteActivation,
  EmptyAfterFilter,
  FractionTooSmall,
  InvalidConfig,
};

const char* to_string(ErrorKind kind);

/// Every recoverable failure in the library surfaces as an Error carrying
/// its kind, so callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// True for errors caused by bad user input rather than a failed computation.
bool is_validation_error(ErrorKind kind);

}  // namespace muse
