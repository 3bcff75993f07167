#include "muse/error.hpp"

namespace muse {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::InvalidDataset: return "InvalidDataset";
    case ErrorKind::InfeasibleTargets: return "InfeasibleTargets";
    case ErrorKind::BadFractions: return "BadFractions";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::UnfitModel: return "UnfitModel";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorKind::EmptyAfterFilter: return "EmptyAfterFilter";
    case ErrorKind::FractionTooSmall: return "FractionTooSmall";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

bool is_validation_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Diverged:
    case ErrorKind::NonFiniteActivation:
    case ErrorKind::IoFailure:
      return false;
    default:
      return true;
  }
}

}  // namespace muse
