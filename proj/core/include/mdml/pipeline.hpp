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

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mdml/archive.hpp"
#include "mdml/clock.hpp"
#include "mdml/envelope.hpp"
#include "mdml/executor.hpp"
#include "mdml/fusion.hpp"
#include "mdml/transport.hpp"

namespace mdml {

enum class NodeKind { kSource, kFuse, kFunction, kSteer, kArchiveSink, kTap };

std::string_view to_string(NodeKind kind) noexcept;

enum class EdgePolicy { kBlock, kShed };

struct SourceConfig {
  std::string device = "+";  // device id, or "+" for every device

  bool operator==(const SourceConfig&) const = default;
};

struct FunctionNodeConfig {
  FunctionRef function;
  std::string target;
  std::optional<int64_t> timeout_ms;
  Json args = Json::object();
  size_t window = 0;  // > 0: pass the last `window` inputs as "inputs"

  bool operator==(const FunctionNodeConfig&) const = default;
};

/// Params whose value is the string "${field}" are filled from the input
/// record's field of that name.
struct SteerConfig {
  std::string device;
  std::string command_name;
  Json params = Json::object();

  bool operator==(const SteerConfig&) const = default;
};

struct ArchiveSinkConfig {
  bool operator==(const ArchiveSinkConfig&) const = default;
};

struct TapConfig {
  std::string channel;

  bool operator==(const TapConfig&) const = default;
};

using NodeConfig =
    std::variant<SourceConfig, BatchingRule, FunctionNodeConfig, SteerConfig, ArchiveSinkConfig, TapConfig>;

struct NodeSpec {
  std::string id;
  NodeKind kind = NodeKind::kSource;
  NodeConfig config;

  bool operator==(const NodeSpec&) const = default;
};

struct EdgeSpec {
  std::string from;
  std::string to;
  size_t queue_capacity = 1024;
  EdgePolicy policy = EdgePolicy::kBlock;

  bool operator==(const EdgeSpec&) const = default;
};

struct PipelineConfig {
  std::string pipeline_id;
  std::string experiment_id;
  std::vector<ExecutorTarget> executors;
  std::vector<NodeSpec> nodes;
  std::vector<EdgeSpec> edges;

  OrderedJson to_json() const;
  const NodeSpec* node(std::string_view id) const;
};

/// Parses and validates. Throws kParseError, kBadNodeConfig, kDanglingEdge
/// or kCycleDetected; messages name the offending node, edge or path.
PipelineConfig parse_pipeline(std::string_view document);
PipelineConfig pipeline_from_json(const Json& j);
void validate(const PipelineConfig& config);

enum class NodeState { kIdle, kRunning, kFailed, kStopped };

std::string_view to_string(NodeState s) noexcept;

struct NodeCounters {
  uint64_t in = 0;
  uint64_t out = 0;
  uint64_t errors = 0;
  uint64_t dropped = 0;  // shed by a full inbound edge

  bool operator==(const NodeCounters&) const = default;
};

struct NodeStatus {
  std::string node_id;
  NodeKind kind = NodeKind::kSource;
  NodeState state = NodeState::kIdle;
  NodeCounters counters;
  std::string last_error;
  int64_t last_activity_ts_us = 0;

  OrderedJson to_json() const;
};

struct TapEvent {
  std::string channel;
  std::string node;
  int64_t ts_us = 0;
  OrderedJson body;
};

/// In-process fan-out of tap node output.
class TapHub {
 public:
  class Reader {
   public:
    std::optional<TapEvent> pop(std::chrono::milliseconds timeout);
    size_t size() const;

   private:
    friend class TapHub;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<TapEvent> queue_;
  };

  /// Empty channel receives every channel.
  std::shared_ptr<Reader> subscribe(std::string channel = {});
  void publish(const TapEvent& event);

 private:
  std::mutex mu_;
  std::vector<std::pair<std::string, std::weak_ptr<Reader>>> readers_;
};

struct PipelineDeps {
  Transport& transport;
  Executor& executor;
  Clock& clock = SystemClock::instance();
  ArchiveWriter* archive = nullptr;  // required iff the config has an archive_sink
  TapHub* taps = nullptr;
};

/// A running pipeline. Every node runs on its own thread; records move over
/// bounded per-edge queues.
class Pipeline {
 public:
  /// Adds the config's executor targets that the executor lacks, subscribes
  /// the sources and starts all nodes. Throws as validate(), plus
  /// kInvalidArgument for missing dependencies.
  static std::unique_ptr<Pipeline> start(PipelineConfig config, PipelineDeps deps);

  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const PipelineConfig& config() const noexcept;
  std::vector<NodeStatus> status() const;

  /// Stops the sources, lets every queued record flow to the sinks, flushes
  /// fusion state, then joins. Idempotent.
  void shutdown();

  struct Impl;

 private:
  explicit Pipeline(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace mdml
