#include "ptz/error.hpp"

namespace ptz {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::NoSolution: return "NoSolution";
    case ErrorCode::Inconsistent: return "Inconsistent";
    case ErrorCode::SingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::NotEnoughInliers: return "NotEnoughInliers";
    case ErrorCode::TrackingLost: return "TrackingLost";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::InitializationFailed: return "InitializationFailed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace ptz
