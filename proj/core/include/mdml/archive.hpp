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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "mdml/clock.hpp"
#include "mdml/envelope.hpp"
#include "mdml/transport.hpp"

namespace mdml {

inline constexpr int kArchiveFormatVersion = 1;

struct ArchiveOptions {
  int compression_level = 6;
  uint64_t rotate_bytes = 16ull << 20;                  // uncompressed
  int64_t rotate_age_us = int64_t{10} * 60 * 1'000'000;  // since segment open
};

struct SegmentInfo {
  int index = 0;
  std::string file;  // relative to the experiment directory
  uint64_t count = 0;
  int64_t first_ts_us = 0;
  int64_t last_ts_us = 0;
  uint64_t uncompressed_bytes = 0;
  std::string sha256;             // of the uncompressed line stream
  std::string compressed_sha256;  // of the .gz file

  bool operator==(const SegmentInfo&) const = default;
};

struct DeviceManifest {
  std::string device_id;
  Schema schema;  // first seen
  uint64_t count = 0;
  std::optional<int64_t> first_ts_us;
  std::optional<int64_t> last_ts_us;
  std::vector<SegmentInfo> segments;

  bool operator==(const DeviceManifest&) const = default;
};

struct Manifest {
  int format_version = kArchiveFormatVersion;
  std::string experiment_id;
  int64_t created_us = 0;
  std::optional<int64_t> closed_us;
  std::vector<DeviceManifest> devices;  // first-seen order

  OrderedJson to_json() const;
  static Manifest from_json(const Json& j);

  /// Reads manifest.json and checks it against manifest.sha256.
  /// Throws kManifestMissing, kCorruptSegment (manifest damaged).
  static Manifest load(const std::filesystem::path& experiment_dir);

  const DeviceManifest* device(std::string_view id) const;
};

/// Append-only writer for one experiment under `root/{experiment_id}`.
/// Holds an exclusive lock on the directory until close().
class ArchiveWriter {
 public:
  /// Throws kArchiveBusy if another writer (or reader) holds the directory,
  /// kIoError if it cannot be created.
  ArchiveWriter(const std::filesystem::path& root, std::string experiment_id,
                ArchiveOptions options = {}, Clock& clock = SystemClock::instance());
  ~ArchiveWriter();

  ArchiveWriter(const ArchiveWriter&) = delete;
  ArchiveWriter& operator=(const ArchiveWriter&) = delete;

  /// Throws kClosedWriter, kIoError, kInvalidArgument (other experiment).
  void append(const Envelope& e);

  /// Seals open segments and writes the final manifest. Idempotent.
  void close();

  const std::filesystem::path& dir() const noexcept { return dir_; }
  Manifest manifest() const;

 private:
  struct OpenSegment;

  void seal(size_t device_index);
  void write_manifest();

  std::filesystem::path dir_;
  ArchiveOptions options_;
  Clock& clock_;
  int lock_fd_ = -1;

  mutable std::mutex mu_;
  bool closed_ = false;
  Manifest manifest_;
  std::map<std::string, size_t, std::less<>> device_index_;
  std::vector<std::unique_ptr<OpenSegment>> open_;  // parallel to manifest_.devices
};

struct VerifyIssue {
  std::string device_id;  // empty for manifest-level issues
  int index = -1;         // segment index, -1 when not segment-specific
  std::string reason;

  bool operator==(const VerifyIssue&) const = default;
};

struct VerifyReport {
  std::filesystem::path dir;
  std::vector<VerifyIssue> issues;
  std::vector<std::string> unsealed;  // segment files not in the manifest
  bool closed = false;                // writer closed cleanly

  bool clean() const { return issues.empty() && unsealed.empty() && closed; }
  OrderedJson to_json() const;
};

/// Resolves `dir` to the directory holding manifest.json: `dir` itself, or
/// its only subdirectory that has one.
std::filesystem::path resolve_archive_dir(const std::filesystem::path& dir);

/// Recomputes every segment checksum and count. Throws kManifestMissing,
/// kArchiveBusy; damage is reported, not thrown.
VerifyReport verify_archive(const std::filesystem::path& dir);

struct ReplayOptions {
  double speed = 0.0;  // <= 0 or inf: no pacing
  Clock* clock = nullptr;
  std::stop_token stop;
};

/// Republishes every archived envelope in (ts_us, device first-seen) order,
/// byte-identical to the archived line. Throws as verify, plus
/// CorruptSegmentError for the first damaged segment.
uint64_t replay_archive(const std::filesystem::path& dir, const ReplayOptions& options,
                        const std::function<void(const Envelope&, const std::string& bytes)>& sink);

/// Convenience: sink publishes on each envelope's data topic.
uint64_t replay_archive(const std::filesystem::path& dir, const ReplayOptions& options,
                        Transport& transport);

}  // namespace mdml
