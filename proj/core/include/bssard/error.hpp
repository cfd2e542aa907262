#pragma once

#include <stdexcept>
#include <string>

namespace bssard {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kUnsatisfiableConfig,
  kManifestCorrupt,
  kManifestInconsistent,
  kMissingPayload,
  kPayloadCorrupt,
  kUnknownVersion,
  kCheckpointCorrupt,
  kDimensionMismatch,
  kNumericalFailure,
  kIo,
  kConfig,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bssard
