#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rlar {

enum class ErrorCode {
  kInvalidArgument,
  kDuplicateName,
  kUnverifiedTool,
  kEmptySeedSet,
  kPersistenceFailure,
  kManifestCorrupt,
  kBackendUnavailable,
  kScriptError,
  kTimeout,
  kEmptyLibrary,
  kNoCandidateFound,
  kHubDeployFailed,
  kNoViableScheme,
  kScriptGenerationFailed,
  kSandboxUnavailable,
  kReferenceUnparseable,
  kGroupTooSmall,
  kMissingRecord,
  kInsufficientModels,
};

std::string_view to_string(ErrorCode code);

// Every domain failure in the library is reported through this type; the
// code is what the CLI and HTTP layers map to exit codes and status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace rlar
