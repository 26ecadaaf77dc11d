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

#include "mdml/error.hpp"

namespace mdml {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidEnvelope: return "InvalidEnvelope";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kInvalidIdentifier: return "InvalidIdentifier";
    case ErrorCode::kNotConnected: return "NotConnected";
    case ErrorCode::kTopicInvalid: return "TopicInvalid";
    case ErrorCode::kFilterInvalid: return "FilterInvalid";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kUnknownDevice: return "UnknownDevice";
    case ErrorCode::kMultiDeviceUnsupported: return "MultiDeviceUnsupported";
    case ErrorCode::kInvalidRule: return "InvalidRule";
    case ErrorCode::kCycleDetected: return "CycleDetected";
    case ErrorCode::kDanglingEdge: return "DanglingEdge";
    case ErrorCode::kBadNodeConfig: return "BadNodeConfig";
    case ErrorCode::kDuplicateFunction: return "DuplicateFunction";
    case ErrorCode::kUnknownFunction: return "UnknownFunction";
    case ErrorCode::kUnknownTarget: return "UnknownTarget";
    case ErrorCode::kUnknownTask: return "UnknownTask";
    case ErrorCode::kSpawnError: return "SpawnError";
    case ErrorCode::kBadOutput: return "BadOutput";
    case ErrorCode::kNonzeroExit: return "NonzeroExit";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kFunctionError: return "FunctionError";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kClosedWriter: return "ClosedWriter";
    case ErrorCode::kManifestMissing: return "ManifestMissing";
    case ErrorCode::kCorruptSegment: return "CorruptSegment";
    case ErrorCode::kArchiveBusy: return "ArchiveBusy";
    case ErrorCode::kEmptyFrame: return "EmptyFrame";
    case ErrorCode::kZeroMean: return "ZeroMean";
    case ErrorCode::kEmptyHistory: return "EmptyHistory";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnauthorized: return "Unauthorized";
  }
  return "Unknown";
}

}  // namespace mdml
