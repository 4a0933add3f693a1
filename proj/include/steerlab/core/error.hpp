#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace steerlab {

enum class ErrorCode {
  ShapeMismatch,
  InvalidGrid,
  InvalidArgument,
  SolverBlowUp,
  EmptyResult,
  UnknownLayer,
  Diverged,
  GradientMismatch,
  CorruptFile,
  CorruptCheckpoint,
  CorruptDirection,
  InsufficientData,
  MissingFullDirection,
  ZeroDirection,
  IncompatibleShapes,
  ChannelMismatch,
  NonFiniteState,
  MissingField,
  InconsistentRollouts,
  IoError,
  MissingArtifact,
  StaleArtifact,
  ConfigInvalid,
  Protocol,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; the code drives CLI exit statuses
/// and lets tests assert the failure class without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace steerlab
