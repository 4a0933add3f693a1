#include "steerlab/core/error.hpp"

namespace steerlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidGrid: return "InvalidGrid";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SolverBlowUp: return "SolverBlowUp";
    case ErrorCode::EmptyResult: return "EmptyResult";
    case ErrorCode::UnknownLayer: return "UnknownLayer";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::GradientMismatch: return "GradientMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::CorruptDirection: return "CorruptDirection";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::MissingFullDirection: return "MissingFullDirection";
    case ErrorCode::ZeroDirection: return "ZeroDirection";
    case ErrorCode::IncompatibleShapes: return "IncompatibleShapes";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::InconsistentRollouts: return "InconsistentRollouts";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::StaleArtifact: return "StaleArtifact";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::Protocol: return "Protocol";
  }
  return "Unknown";
}

}  // namespace steerlab
