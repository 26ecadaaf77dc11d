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

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "mdml/clock.hpp"
#include "mdml/envelope.hpp"
#include "mdml/error.hpp"

namespace mdml {

enum class FunctionKind { kBuiltin, kSubprocess };

struct FunctionContext {
  Clock& clock;
  std::stop_token stop;  // fires when the task times out
};

using BuiltinFn = std::function<std::string(std::string_view payload, const FunctionContext& ctx)>;

struct FunctionDef {
  std::string name;
  int version = 1;
  FunctionKind kind = FunctionKind::kBuiltin;
  BuiltinFn builtin;
  std::vector<std::string> command;  // subprocess: argv, argv[0] looked up in PATH
  int64_t timeout_ms = 30'000;
};

struct FunctionRef {
  std::string name;
  int version = 1;

  bool operator==(const FunctionRef&) const = default;
  auto operator<=>(const FunctionRef&) const = default;
};

std::string to_string(const FunctionRef& ref);

class FunctionRegistry {
 public:
  /// Throws kDuplicateFunction.
  FunctionRef register_function(FunctionDef def);
  std::shared_ptr<const FunctionDef> find(const FunctionRef& ref) const;
  std::vector<FunctionRef> list() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<FunctionRef, std::shared_ptr<const FunctionDef>> defs_;
};

enum class TargetKind { kInline, kPool, kSimHpc };

std::string_view to_string(TargetKind kind) noexcept;

struct ExecutorTarget {
  std::string target_id;
  TargetKind kind = TargetKind::kInline;
  int workers = 1;                  // pool
  int64_t dispatch_latency_ms = 0;  // sim_hpc
  int slots = 1;                    // sim_hpc

  /// Throws kInvalidArgument.
  void validate() const;
  static ExecutorTarget from_json(const Json& j);
};

enum class TaskState { kPending, kRunning, kDone, kFailed, kTimeout };

std::string_view to_string(TaskState s) noexcept;

struct TaskHandle {
  uint64_t task_id = 0;
  TaskState state = TaskState::kPending;
  std::string result;
  std::string error;
  std::optional<ErrorCode> error_code;
  int64_t submitted_us = 0;
  int64_t started_us = 0;
  int64_t finished_us = 0;

  bool terminal() const noexcept {
    return state == TaskState::kDone || state == TaskState::kFailed || state == TaskState::kTimeout;
  }
};

/// Runs the one-JSON-line-in, one-JSON-line-out subprocess protocol.
/// Throws kSpawnError, kBadOutput, NonzeroExitError or kTimeout.
std::string run_subprocess_function(const FunctionDef& def, std::string_view payload,
                                    std::chrono::milliseconds timeout);

/// Function offload onto named targets. invoke() never blocks on a pool or
/// sim_hpc target; results are collected by polling.
class Executor {
 public:
  explicit Executor(const FunctionRegistry& registry, Clock& clock = SystemClock::instance());
  ~Executor();

  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  void add_target(const ExecutorTarget& target);
  bool has_target(std::string_view target_id) const;

  /// Throws kUnknownFunction / kUnknownTarget. On an inline target the
  /// returned handle is already terminal.
  TaskHandle invoke(const FunctionRef& fn, std::string payload, std::string_view target_id,
                    std::optional<int64_t> timeout_ms = std::nullopt);

  /// Throws kUnknownTask. Terminal states never change.
  TaskHandle poll(uint64_t task_id);

  /// Polls until terminal or `real_timeout` passes.
  TaskHandle wait(uint64_t task_id, std::chrono::milliseconds real_timeout = std::chrono::hours(1));

  /// Forget a terminal task.
  void release(uint64_t task_id);

  int running(std::string_view target_id) const;
  /// Highest simultaneous running count observed on the target.
  int max_running(std::string_view target_id) const;

 private:
  struct Task;
  struct Target;

  void execute(const std::shared_ptr<Task>& task, Target& target);
  void worker_loop(Target& target, std::stop_token stop);
  void finish(Task& task, TaskState state, std::string result, std::string error,
              std::optional<ErrorCode> code);
  TaskHandle snapshot_locked(Task& task);

  const FunctionRegistry& registry_;
  Clock& clock_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  uint64_t next_id_ = 1;
  std::map<uint64_t, std::shared_ptr<Task>> tasks_;
  std::map<std::string, std::unique_ptr<Target>, std::less<>> targets_;
};

}  // namespace mdml
