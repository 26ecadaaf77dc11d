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

#include "mdml/executor.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>

extern char** environ;

namespace mdml {

std::string to_string(const FunctionRef& ref) {
  return ref.name + "@" + std::to_string(ref.version);
}

FunctionRef FunctionRegistry::register_function(FunctionDef def) {
  if (!is_valid_name(def.name)) {
    throw Error(ErrorCode::kInvalidIdentifier, "function name '" + def.name + "'");
  }
  if (def.version < 1) throw Error(ErrorCode::kInvalidArgument, "function version must be >= 1");
  if (def.timeout_ms <= 0) throw Error(ErrorCode::kInvalidArgument, "timeout_ms must be positive");
  if (def.kind == FunctionKind::kBuiltin && !def.builtin) {
    throw Error(ErrorCode::kInvalidArgument, "builtin function without a body");
  }
  if (def.kind == FunctionKind::kSubprocess && def.command.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "subprocess function without a command");
  }
  FunctionRef ref{def.name, def.version};
  std::unique_lock lock(mu_);
  if (defs_.contains(ref)) throw Error(ErrorCode::kDuplicateFunction, to_string(ref));
  defs_.emplace(ref, std::make_shared<const FunctionDef>(std::move(def)));
  return ref;
}

std::shared_ptr<const FunctionDef> FunctionRegistry::find(const FunctionRef& ref) const {
  std::shared_lock lock(mu_);
  auto it = defs_.find(ref);
  return it == defs_.end() ? nullptr : it->second;
}

std::vector<FunctionRef> FunctionRegistry::list() const {
  std::shared_lock lock(mu_);
  std::vector<FunctionRef> out;
  for (const auto& [ref, def] : defs_) out.push_back(ref);
  return out;
}

std::string_view to_string(TargetKind kind) noexcept {
  switch (kind) {
    case TargetKind::kInline: return "inline";
    case TargetKind::kPool: return "pool";
    case TargetKind::kSimHpc: return "sim_hpc";
  }
  return "?";
}

std::string_view to_string(TaskState s) noexcept {
  switch (s) {
    case TaskState::kPending: return "pending";
    case TaskState::kRunning: return "running";
    case TaskState::kDone: return "done";
    case TaskState::kFailed: return "failed";
    case TaskState::kTimeout: return "timeout";
  }
  return "?";
}

void ExecutorTarget::validate() const {
  if (!is_valid_identifier(target_id)) {
    throw Error(ErrorCode::kInvalidIdentifier, "target_id '" + target_id + "'");
  }
  if (kind == TargetKind::kPool && workers < 1) {
    throw Error(ErrorCode::kInvalidArgument, "pool workers must be >= 1");
  }
  if (kind == TargetKind::kSimHpc) {
    if (slots < 1) throw Error(ErrorCode::kInvalidArgument, "sim_hpc slots must be >= 1");
    if (dispatch_latency_ms < 0) {
      throw Error(ErrorCode::kInvalidArgument, "dispatch_latency_ms must be >= 0");
    }
  }
}

ExecutorTarget ExecutorTarget::from_json(const Json& j) {
  ExecutorTarget t;
  try {
    t.target_id = j.at("target_id").get<std::string>();
    auto kind = j.at("kind").get<std::string>();
    if (kind == "inline") {
      t.kind = TargetKind::kInline;
    } else if (kind == "pool") {
      t.kind = TargetKind::kPool;
      t.workers = j.value("workers", 1);
    } else if (kind == "sim_hpc") {
      t.kind = TargetKind::kSimHpc;
      t.dispatch_latency_ms = j.value("dispatch_latency_ms", int64_t{0});
      t.slots = j.value("slots", 1);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown target kind '" + kind + "'");
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("executor target: ") + e.what());
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// subprocess protocol

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }
  void reset(int fd = -1) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_ = -1;
};

void make_pipe(Fd& r, Fd& w) {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::kSpawnError, std::string("pipe: ") + std::strerror(errno));
  }
  r.reset(fds[0]);
  w.reset(fds[1]);
}

void ignore_sigpipe_once() {
  static const bool done = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

constexpr size_t kStderrExcerpt = 512;

}  // namespace

std::string run_subprocess_function(const FunctionDef& def, std::string_view payload,
                                    std::chrono::milliseconds timeout) {
  if (def.command.empty()) throw Error(ErrorCode::kSpawnError, "empty command");
  ignore_sigpipe_once();

  Fd in_r, in_w, out_r, out_w, err_r, err_w;
  make_pipe(in_r, in_w);
  make_pipe(out_r, out_w);
  make_pipe(err_r, err_w);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_r.get(), 0);
  posix_spawn_file_actions_adddup2(&actions, out_w.get(), 1);
  posix_spawn_file_actions_adddup2(&actions, err_w.get(), 2);

  std::vector<char*> argv;
  for (const auto& a : def.command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  pid_t pid = -1;
  int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw Error(ErrorCode::kSpawnError, def.command[0] + ": " + std::strerror(rc));
  }
  in_r.reset();
  out_w.reset();
  err_w.reset();
  ::fcntl(in_w.get(), F_SETFL, ::fcntl(in_w.get(), F_GETFL) | O_NONBLOCK);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string input(payload);
  input.push_back('\n');
  size_t written = 0;
  std::string out, err;
  bool out_open = true, err_open = true;

  auto kill_child = [&] {
    ::kill(pid, SIGKILL);
    int st;
    while (::waitpid(pid, &st, 0) < 0 && errno == EINTR) {
    }
  };

  while (out_open || err_open) {
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      kill_child();
      throw Error(ErrorCode::kTimeout, def.name + " exceeded " + std::to_string(timeout.count()) + " ms");
    }
    pollfd fds[3];
    int n = 0;
    int in_idx = -1, out_idx = -1, err_idx = -1;
    if (in_w.get() >= 0) {
      in_idx = n;
      fds[n++] = {in_w.get(), POLLOUT, 0};
    }
    if (out_open) {
      out_idx = n;
      fds[n++] = {out_r.get(), POLLIN, 0};
    }
    if (err_open) {
      err_idx = n;
      fds[n++] = {err_r.get(), POLLIN, 0};
    }
    auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1;
    int pr = ::poll(fds, n, static_cast<int>(std::min<int64_t>(wait_ms, 50)));
    if (pr < 0) {
      if (errno == EINTR) continue;
      kill_child();
      throw Error(ErrorCode::kIoError, std::string("poll: ") + std::strerror(errno));
    }
    if (in_idx >= 0 && fds[in_idx].revents) {
      ssize_t w = ::write(in_w.get(), input.data() + written, input.size() - written);
      if (w > 0) written += static_cast<size_t>(w);
      if (w < 0 && errno != EAGAIN && errno != EINTR) written = input.size();  // child closed stdin
      if (written == input.size()) in_w.reset();
    }
    auto drain = [](int fd, std::string& buf, bool& open) {
      char tmp[4096];
      ssize_t r = ::read(fd, tmp, sizeof tmp);
      if (r > 0) {
        buf.append(tmp, static_cast<size_t>(r));
      } else if (r == 0 || (errno != EAGAIN && errno != EINTR)) {
        open = false;
      }
    };
    if (out_idx >= 0 && fds[out_idx].revents) drain(out_r.get(), out, out_open);
    if (err_idx >= 0 && fds[err_idx].revents) drain(err_r.get(), err, err_open);
  }
  in_w.reset();

  int status = 0;
  for (;;) {
    pid_t w = ::waitpid(pid, &status, WNOHANG);
    if (w == pid) break;
    if (w < 0 && errno != EINTR) throw Error(ErrorCode::kIoError, "waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill_child();
      throw Error(ErrorCode::kTimeout, def.name + " exceeded " + std::to_string(timeout.count()) + " ms");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }

  int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  if (code != 0) {
    if (err.size() > kStderrExcerpt) err.resize(kStderrExcerpt);
    while (!err.empty() && (err.back() == '\n' || err.back() == '\r')) err.pop_back();
    throw NonzeroExitError(code, err);
  }

  if (!out.empty() && out.back() == '\n') out.pop_back();
  if (out.empty()) throw Error(ErrorCode::kBadOutput, "no output line");
  if (out.find('\n') != std::string::npos) {
    throw Error(ErrorCode::kBadOutput, "more than one output line");
  }
  if (!Json::accept(out)) throw Error(ErrorCode::kBadOutput, "output is not JSON");
  return out;
}

// ---------------------------------------------------------------------------
// Executor

struct Executor::Task {
  uint64_t id = 0;
  std::shared_ptr<const FunctionDef> def;
  std::string payload;
  int64_t timeout_ms = 0;
  TaskState state = TaskState::kPending;
  std::string result;
  std::string error;
  std::optional<ErrorCode> error_code;
  int64_t submitted_us = 0;
  int64_t eligible_us = 0;
  int64_t started_us = 0;
  int64_t finished_us = 0;
  std::stop_source cancel;
  Target* target = nullptr;
};

struct Executor::Target {
  ExecutorTarget config;
  std::deque<std::shared_ptr<Task>> queue;
  std::condition_variable_any cv;
  int running = 0;
  int max_running = 0;
  std::vector<std::jthread> workers;
};

Executor::Executor(const FunctionRegistry& registry, Clock& clock)
    : registry_(registry), clock_(clock) {}

Executor::~Executor() {
  std::vector<std::jthread> threads;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, target] : targets_) {
      for (auto& w : target->workers) {
        w.request_stop();
        threads.push_back(std::move(w));
      }
      target->workers.clear();
      target->cv.notify_all();
    }
    for (auto& [id, task] : tasks_) task->cancel.request_stop();
  }
  threads.clear();  // joins
  std::lock_guard lock(mu_);
  for (auto& [id, task] : tasks_) {
    if (task->state == TaskState::kPending) {
      task->state = TaskState::kFailed;
      task->error = "executor shut down";
      task->error_code = ErrorCode::kFunctionError;
    }
  }
}

void Executor::add_target(const ExecutorTarget& config) {
  config.validate();
  std::lock_guard lock(mu_);
  if (targets_.contains(config.target_id)) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate target '" + config.target_id + "'");
  }
  auto target = std::make_unique<Target>();
  target->config = config;
  Target& t = *target;
  int threads = 0;
  if (config.kind == TargetKind::kPool) threads = config.workers;
  if (config.kind == TargetKind::kSimHpc) threads = config.slots;
  for (int i = 0; i < threads; ++i) {
    t.workers.emplace_back([this, &t](std::stop_token stop) { worker_loop(t, stop); });
  }
  targets_.emplace(config.target_id, std::move(target));
}

bool Executor::has_target(std::string_view target_id) const {
  std::lock_guard lock(mu_);
  return targets_.find(target_id) != targets_.end();
}

TaskHandle Executor::invoke(const FunctionRef& fn, std::string payload, std::string_view target_id,
                            std::optional<int64_t> timeout_ms) {
  auto def = registry_.find(fn);
  if (!def) throw Error(ErrorCode::kUnknownFunction, to_string(fn));
  if (timeout_ms && *timeout_ms <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "timeout_ms must be positive");
  }

  std::shared_ptr<Task> task;
  Target* target = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = targets_.find(target_id);
    if (it == targets_.end()) throw Error(ErrorCode::kUnknownTarget, std::string(target_id));
    target = it->second.get();
    task = std::make_shared<Task>();
    task->id = next_id_++;
    task->def = def;
    task->payload = std::move(payload);
    task->timeout_ms = timeout_ms.value_or(def->timeout_ms);
    task->submitted_us = clock_.now_us();
    task->eligible_us = task->submitted_us;
    if (target->config.kind == TargetKind::kSimHpc) {
      task->eligible_us += target->config.dispatch_latency_ms * 1000;
    }
    task->target = target;
    tasks_.emplace(task->id, task);
    if (target->config.kind != TargetKind::kInline) {
      target->queue.push_back(task);
      target->cv.notify_one();
    }
  }
  if (target->config.kind == TargetKind::kInline) execute(task, *target);
  return poll(task->id);
}

void Executor::worker_loop(Target& target, std::stop_token stop) {
  for (;;) {
    std::shared_ptr<Task> task;
    {
      std::unique_lock lock(mu_);
      target.cv.wait(lock, stop, [&] { return !target.queue.empty(); });
      if (stop.stop_requested()) return;
      task = std::move(target.queue.front());
      target.queue.pop_front();
    }
    if (task->eligible_us > clock_.now_us()) {
      if (!clock_.sleep_until(task->eligible_us, stop)) {
        std::lock_guard lock(mu_);
        target.queue.push_front(task);
        return;
      }
    }
    execute(task, target);
  }
}

void Executor::execute(const std::shared_ptr<Task>& task, Target& target) {
  {
    std::lock_guard lock(mu_);
    if (task->state != TaskState::kPending) return;
    task->state = TaskState::kRunning;
    task->started_us = clock_.now_us();
    target.running += 1;
    target.max_running = std::max(target.max_running, target.running);
  }
  cv_.notify_all();

  const FunctionDef& def = *task->def;
  TaskState state = TaskState::kDone;
  std::string result, error;
  std::optional<ErrorCode> code;
  try {
    if (def.kind == FunctionKind::kBuiltin) {
      FunctionContext ctx{clock_, task->cancel.get_token()};
      result = def.builtin(task->payload, ctx);
      if (!Json::accept(result)) throw Error(ErrorCode::kBadOutput, "result is not JSON");
    } else {
      result = run_subprocess_function(def, task->payload,
                                       std::chrono::milliseconds(task->timeout_ms));
    }
  } catch (const Error& e) {
    state = e.code() == ErrorCode::kTimeout ? TaskState::kTimeout : TaskState::kFailed;
    error = e.what();
    code = e.code();
  } catch (const std::exception& e) {
    state = TaskState::kFailed;
    error = e.what();
    code = ErrorCode::kFunctionError;
  }
  if (state == TaskState::kDone && clock_.now_us() - task->started_us > task->timeout_ms * 1000) {
    state = TaskState::kTimeout;
    error = "exceeded " + std::to_string(task->timeout_ms) + " ms";
    code = ErrorCode::kTimeout;
  }

  {
    std::lock_guard lock(mu_);
    target.running -= 1;
    finish(*task, state, std::move(result), std::move(error), code);
  }
  cv_.notify_all();
}

void Executor::finish(Task& task, TaskState state, std::string result, std::string error,
                      std::optional<ErrorCode> code) {
  if (task.state != TaskState::kPending && task.state != TaskState::kRunning) return;
  task.state = state;
  task.result = state == TaskState::kDone ? std::move(result) : std::string();
  task.error = std::move(error);
  task.error_code = code;
  task.finished_us = clock_.now_us();
}

TaskHandle Executor::snapshot_locked(Task& task) {
  // A running task past its deadline is reported as timed out right away;
  // the late result, if any, is discarded.
  if (task.state == TaskState::kRunning &&
      clock_.now_us() - task.started_us > task.timeout_ms * 1000) {
    finish(task, TaskState::kTimeout, {}, "exceeded " + std::to_string(task.timeout_ms) + " ms",
           ErrorCode::kTimeout);
    task.cancel.request_stop();
  }
  TaskHandle h;
  h.task_id = task.id;
  h.state = task.state;
  h.result = task.result;
  h.error = task.error;
  h.error_code = task.error_code;
  h.submitted_us = task.submitted_us;
  h.started_us = task.started_us;
  h.finished_us = task.finished_us;
  return h;
}

TaskHandle Executor::poll(uint64_t task_id) {
  std::lock_guard lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw Error(ErrorCode::kUnknownTask, std::to_string(task_id));
  return snapshot_locked(*it->second);
}

TaskHandle Executor::wait(uint64_t task_id, std::chrono::milliseconds real_timeout) {
  const auto until = std::chrono::steady_clock::now() + real_timeout;
  std::unique_lock lock(mu_);
  for (;;) {
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw Error(ErrorCode::kUnknownTask, std::to_string(task_id));
    TaskHandle h = snapshot_locked(*it->second);
    if (h.terminal() || std::chrono::steady_clock::now() >= until) return h;
    cv_.wait_for(lock, std::chrono::milliseconds(5));
  }
}

void Executor::release(uint64_t task_id) {
  std::lock_guard lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw Error(ErrorCode::kUnknownTask, std::to_string(task_id));
  TaskHandle h = snapshot_locked(*it->second);
  if (!h.terminal()) throw Error(ErrorCode::kInvalidArgument, "task is not finished");
  tasks_.erase(it);
}

int Executor::running(std::string_view target_id) const {
  std::lock_guard lock(mu_);
  auto it = targets_.find(target_id);
  if (it == targets_.end()) throw Error(ErrorCode::kUnknownTarget, std::string(target_id));
  return it->second->running;
}

int Executor::max_running(std::string_view target_id) const {
  std::lock_guard lock(mu_);
  auto it = targets_.find(target_id);
  if (it == targets_.end()) throw Error(ErrorCode::kUnknownTarget, std::string(target_id));
  return it->second->max_running;
}

}  // namespace mdml
