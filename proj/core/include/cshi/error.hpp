#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cshi {

enum class ErrorCode {
  kPrecondition,
  kConfig,
  kSchemaMismatch,
  kDuplicatePlugin,
  kUnknownStage,
  kPluginFailure,
  kEmptyHistory,
  kInvalidSplit,
  kUnparseableValue,
  kBackendError,
  kBackendUnavailable,
  kRateLimited,
  kScriptMiss,
  kReplayMiss,
  kProtocolViolation,
  kAdapterError,
  kSessionNotFound,
  kEditDuringTurn,
  kNotInTakeover,
  kLeakageRejected,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as cshi::Error; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cshi
