// Copyright 2026 The MDML Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mdml {

enum class ErrorCode {
  // envelope
  kInvalidEnvelope,
  kParseError,
  kInvalidIdentifier,
  // transport
  kNotConnected,
  kTopicInvalid,
  kFilterInvalid,
  // fusion
  kSchemaMismatch,
  kUnknownDevice,
  kMultiDeviceUnsupported,
  kInvalidRule,
  // pipeline
  kCycleDetected,
  kDanglingEdge,
  kBadNodeConfig,
  // executor
  kDuplicateFunction,
  kUnknownFunction,
  kUnknownTarget,
  kUnknownTask,
  kSpawnError,
  kBadOutput,
  kNonzeroExit,
  kTimeout,
  kFunctionError,
  // archive
  kIoError,
  kClosedWriter,
  kManifestMissing,
  kCorruptSegment,
  kArchiveBusy,
  // instrument-sim / analysis
  kEmptyFrame,
  kZeroMean,
  kEmptyHistory,
  kInvalidArgument,
  // gateway
  kUnauthorized,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so
/// callers and tests can branch on the class rather than the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Non-zero subprocess exit; keeps the code and a bounded stderr excerpt.
class NonzeroExitError : public Error {
 public:
  NonzeroExitError(int exit_code, std::string stderr_excerpt)
      : Error(ErrorCode::kNonzeroExit,
              "exit code " + std::to_string(exit_code) +
                  (stderr_excerpt.empty() ? "" : ": " + stderr_excerpt)),
        exit_code_(exit_code),
        stderr_excerpt_(std::move(stderr_excerpt)) {}

  int exit_code() const noexcept { return exit_code_; }
  const std::string& stderr_excerpt() const noexcept { return stderr_excerpt_; }

 private:
  int exit_code_;
  std::string stderr_excerpt_;
};

/// Archive segment that failed verification.
class CorruptSegmentError : public Error {
 public:
  CorruptSegmentError(std::string device, int index, std::string reason)
      : Error(ErrorCode::kCorruptSegment,
              device + "/" + std::to_string(index) + ": " + reason),
        device_(std::move(device)),
        index_(index),
        reason_(std::move(reason)) {}

  const std::string& device() const noexcept { return device_; }
  int index() const noexcept { return index_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string device_;
  int index_;
  std::string reason_;
};

}  // namespace mdml
