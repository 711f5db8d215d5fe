#include "migperf/error.hpp"

namespace migperf {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidCatalog: return "InvalidCatalog";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::UnknownProfile: return "UnknownProfile";
    case ErrorCode::UnknownDevice: return "UnknownDevice";
    case ErrorCode::UnknownRun: return "UnknownRun";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::AlreadyEnabled: return "AlreadyEnabled";
    case ErrorCode::AlreadyDisabled: return "AlreadyDisabled";
    case ErrorCode::ModeConflict: return "ModeConflict";
    case ErrorCode::NoCapacity: return "NoCapacity";
    case ErrorCode::InvalidStart: return "InvalidStart";
    case ErrorCode::Busy: return "Busy";
    case ErrorCode::AlreadyBound: return "AlreadyBound";
    case ErrorCode::NotBound: return "NotBound";
    case ErrorCode::InfeasibleTarget: return "InfeasibleTarget";
    case ErrorCode::BusyInstance: return "BusyInstance";
    case ErrorCode::NoEqualSplit: return "NoEqualSplit";
    case ErrorCode::BindFailed: return "BindFailed";
    case ErrorCode::OutOfOrder: return "OutOfOrder";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::MissingSeries: return "MissingSeries";
    case ErrorCode::IncompleteGrid: return "IncompleteGrid";
  }
  return "Unknown";
}

}  // namespace migperf
