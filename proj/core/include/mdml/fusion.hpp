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
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mdml/envelope.hpp"

namespace mdml {

enum class RuleKind { kTumbling, kCount, kTrigger };

std::string_view to_string(RuleKind kind) noexcept;

/// Declarative batching policy for one fusion node.
///
/// `devices` fixes which streams the node accepts and the order of cells in
/// every FusedRecord. For trigger rules a device absent from `staleness_ms`
/// has no staleness bound.
struct BatchingRule {
  RuleKind kind = RuleKind::kTrigger;
  std::vector<std::string> devices;
  int64_t width_ms = 0;                       // tumbling
  uint64_t n = 0;                             // count
  std::string trigger_device;                 // trigger
  std::map<std::string, int64_t> staleness_ms;  // trigger
  int64_t max_lateness_ms = 0;

  /// Throws kInvalidRule, kUnknownDevice or kMultiDeviceUnsupported.
  void validate() const;

  static BatchingRule from_json(const Json& j);
  OrderedJson to_json() const;

  bool operator==(const BatchingRule&) const = default;
};

/// Tumbling/count summary of one field. mean/min/max exist only for numeric
/// fields.
struct Aggregate {
  int64_t count = 0;
  Cell last;
  std::optional<double> mean;
  std::optional<Cell> min;
  std::optional<Cell> max;

  bool operator==(const Aggregate&) const = default;
};

using FusedValue = std::variant<Cell, Aggregate>;

struct DeviceCell {
  std::string device_id;
  bool present = false;
  std::optional<int64_t> age_us;  // set iff present
  std::vector<std::pair<std::string, FusedValue>> values;  // schema order; empty iff absent

  bool operator==(const DeviceCell&) const = default;
};

struct FusedRecord {
  int64_t ts_us = 0;
  std::vector<DeviceCell> cells;  // rule.devices order

  const DeviceCell* cell(std::string_view device) const;
  OrderedJson to_json() const;

  bool operator==(const FusedRecord&) const = default;
};

enum class IngestResult { kAccepted, kDuplicate, kLate };

std::string_view to_string(IngestResult r) noexcept;

struct FusionStats {
  uint64_t accepted = 0;
  uint64_t duplicates = 0;
  uint64_t late = 0;
  uint64_t emitted = 0;
};

/// Streaming fusion for one node. Single-writer: ingest/take/drain must be
/// called from one thread at a time.
///
/// Watermark = max accepted ts_us - max_lateness. An envelope with
/// ts_us <= watermark is late. Output for a trigger event or window is final
/// once the watermark reaches it, so the emitted stream equals an offline
/// pass over the accepted events.
class FusionEngine {
 public:
  explicit FusionEngine(BatchingRule rule);

  const BatchingRule& rule() const noexcept { return rule_; }

  bool accepts_device(std::string_view device) const;

  /// Throws kSchemaMismatch, kUnknownDevice, kInvalidArgument (blob payload).
  IngestResult ingest(const Envelope& e);

  /// Records made final by the ingests so far, in emission order.
  std::vector<FusedRecord> take();

  /// End of stream: advances the watermark to +inf and returns everything
  /// still pending (count rules keep their partial batch).
  std::vector<FusedRecord> drain();

  std::optional<int64_t> watermark_us() const { return watermark_; }
  const FusionStats& stats() const noexcept { return stats_; }

 private:
  struct Event {
    int64_t ts_us;
    uint64_t seq;
    uint32_t row;
    Row values;
  };
  struct DeviceStream {
    std::optional<Schema> schema;
    std::deque<Event> pending;             // ts order, all > watermark or awaiting a trigger
    std::map<uint64_t, int64_t> seen_seq;  // seq -> ts, pruned below the watermark
    std::optional<Event> latest_final;     // trigger rules: newest row at or below the watermark
  };

  void advance(int64_t watermark);
  void emit_trigger(int64_t watermark);
  void emit_tumbling(int64_t watermark);
  void emit_count(int64_t watermark);
  void prune(int64_t watermark);
  DeviceCell aggregate_cell(size_t device_index, const std::vector<const Event*>& events,
                            int64_t record_ts) const;

  BatchingRule rule_;
  std::map<std::string, size_t, std::less<>> index_;
  std::vector<DeviceStream> streams_;
  std::optional<int64_t> max_ts_;
  std::optional<int64_t> watermark_;
  std::vector<FusedRecord> ready_;
  FusionStats stats_;
};

/// Summary over `values` in order (sum accumulated left to right).
Aggregate aggregate_values(FieldType type, const std::vector<const Cell*>& values);

}  // namespace mdml
