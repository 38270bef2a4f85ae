// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace drm {

/// Process exit codes shared by the CLI and the error hierarchy.
enum class ExitCode : int { kOk = 0, kUsage = 2, kConfig = 3, kData = 4, kNumeric = 5 };

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

#define DRM_DEFINE_ERROR(Name, Code)                                      \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(what, ExitCode::Code) {} \
  };

// Malformed file header or container.
DRM_DEFINE_ERROR(FormatError, kData)
// Payload inconsistent with its header.
DRM_DEFINE_ERROR(CorruptionError, kData)
// Semantically invalid data (zero-norm rows, bad labels).
DRM_DEFINE_ERROR(DataError, kData)
// Argument outside the mathematical domain of an operation.
DRM_DEFINE_ERROR(DomainError, kNumeric)
DRM_DEFINE_ERROR(NumericError, kNumeric)
DRM_DEFINE_ERROR(ShapeError, kData)
DRM_DEFINE_ERROR(IndexError, kData)
DRM_DEFINE_ERROR(PreconditionError, kData)
DRM_DEFINE_ERROR(ConfigError, kConfig)
DRM_DEFINE_ERROR(ProtocolError, kData)

#undef DRM_DEFINE_ERROR

/// Transport-level provider failure; callers may retry.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, int attempts)
      : Error(what + " (after " + std::to_string(attempts) + " attempt(s))", ExitCode::kData),
        attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

}  // namespace drm
