#pragma once

#include <stdexcept>
#include <string>

namespace migperf {

enum class ErrorCode {
  ParseError,
  InvalidCatalog,
  InvalidArgument,
  InvalidSpec,
  UnknownProfile,
  UnknownDevice,
  UnknownRun,
  NotFound,
  AlreadyEnabled,
  AlreadyDisabled,
  ModeConflict,
  NoCapacity,
  InvalidStart,
  Busy,
  AlreadyBound,
  NotBound,
  InfeasibleTarget,
  BusyInstance,
  NoEqualSplit,
  BindFailed,
  OutOfOrder,
  EmptySeries,
  InsufficientSamples,
  MissingSeries,
  IncompleteGrid,
};

const char* error_code_name(ErrorCode code);

// Every operational failure is thrown as a MigError; the CLI and HTTP
// layers map the code to exit status / HTTP status.
class MigError : public std::runtime_error {
 public:
  MigError(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_error(ErrorCode code, const std::string& message) {
  throw MigError(code, message);
}

}  // namespace migperf
