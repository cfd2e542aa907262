#include "bssard/error.hpp"

namespace bssard {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kUnsatisfiableConfig: return "unsatisfiable config";
    case ErrorCode::kManifestCorrupt: return "manifest corrupt";
    case ErrorCode::kManifestInconsistent: return "manifest inconsistent";
    case ErrorCode::kMissingPayload: return "missing payload";
    case ErrorCode::kPayloadCorrupt: return "payload corrupt";
    case ErrorCode::kUnknownVersion: return "unknown format version";
    case ErrorCode::kCheckpointCorrupt: return "checkpoint corrupt";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kNumericalFailure: return "numerical failure";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kConfig: return "config error";
  }
  return "unknown error";
}

}  // namespace bssard
