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

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "mdml/executor.hpp"
#include "mdml/sim.hpp"

namespace mdml {
namespace {

using namespace std::chrono_literals;

FunctionDef subprocess(std::string name, std::vector<std::string> cmd, int64_t timeout_ms = 5000) {
  FunctionDef d;
  d.name = std::move(name);
  d.kind = FunctionKind::kSubprocess;
  d.command = std::move(cmd);
  d.timeout_ms = timeout_ms;
  return d;
}

std::string random_json_line(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(0, 200), ch(1, 0x2FF);
  std::u32string s;
  for (int i = len(rng); i > 0; --i) s.push_back(static_cast<char32_t>(ch(rng)));
  std::string utf8;
  for (char32_t c : s) {
    if (c < 0x80) {
      utf8.push_back(static_cast<char>(c));
    } else {
      utf8.push_back(static_cast<char>(0xC0 | (c >> 6)));
      utf8.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  Json j = {{"text", utf8}, {"n", std::uniform_int_distribution<int64_t>()(rng)},
            {"x", std::uniform_real_distribution<double>(-1e6, 1e6)(rng)}};
  return j.dump();
}

TEST(Registry, DuplicateAndLookup) {
  FunctionRegistry reg;
  register_builtins(reg);
  EXPECT_TRUE(reg.find({"identity", 1}));
  EXPECT_FALSE(reg.find({"identity", 2}));
  try {
    register_builtins(reg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateFunction);
  }
  FunctionDef v2{"identity", 2, FunctionKind::kBuiltin,
                 [](std::string_view, const FunctionContext&) { return std::string("2"); }, {}, 1000};
  EXPECT_EQ(reg.register_function(v2), (FunctionRef{"identity", 2}));
  EXPECT_EQ(reg.list().size(), 4u);
  EXPECT_THROW(reg.register_function({"bad name!", 1, FunctionKind::kBuiltin, nullptr, {}, 1}), Error);
}

TEST(Targets, Validation) {
  EXPECT_THROW(ExecutorTarget::from_json(Json::parse(R"({"target_id":"x","kind":"gpu"})")), Error);
  EXPECT_THROW(ExecutorTarget::from_json(Json::parse(R"({"target_id":"x","kind":"pool","workers":0})")), Error);
  EXPECT_THROW(ExecutorTarget::from_json(Json::parse(R"({"target_id":"x","kind":"sim_hpc","slots":0})")), Error);
  auto t = ExecutorTarget::from_json(Json::parse(R"({"target_id":"h","kind":"sim_hpc","slots":3,
                                                     "dispatch_latency_ms":250})"));
  EXPECT_EQ(t.slots, 3);
  EXPECT_EQ(t.dispatch_latency_ms, 250);
}

TEST(Executor, ErrorsForUnknowns) {
  FunctionRegistry reg;
  register_builtins(reg);
  Executor ex(reg);
  ex.add_target({"local", TargetKind::kInline});
  EXPECT_THROW(ex.add_target({"local", TargetKind::kInline}), Error);
  auto code = [&](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  EXPECT_EQ(code([&] { ex.invoke({"nope", 1}, "{}", "local"); }), ErrorCode::kUnknownFunction);
  EXPECT_EQ(code([&] { ex.invoke({"identity", 1}, "{}", "gpu"); }), ErrorCode::kUnknownTarget);
  EXPECT_EQ(code([&] { ex.poll(999); }), ErrorCode::kUnknownTask);
  auto h = ex.invoke({"identity", 1}, R"({"a":1})", "local");
  EXPECT_EQ(h.state, TaskState::kDone);
  EXPECT_EQ(h.result, R"({"a":1})");
  ex.release(h.task_id);
  EXPECT_EQ(code([&] { ex.poll(h.task_id); }), ErrorCode::kUnknownTask);
}

TEST(Executor, SameResultsOnEveryTarget) {
  FunctionRegistry reg;
  register_builtins(reg);
  Executor ex(reg);
  ex.add_target({"local", TargetKind::kInline});
  ex.add_target({"pool", TargetKind::kPool, 4});
  ex.add_target({"hpc", TargetKind::kSimHpc, 1, 1, 3});
  SimParams p;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 30; ++i) {
    SimState st{std::uniform_real_distribution<double>(0.0, 1.0)(rng), 0.5, static_cast<uint64_t>(i)};
    auto env = emit_plif(st, p, {"e", "plif", static_cast<uint64_t>(i), i * 50'000});
    OrderedJson payload;
    payload["args"] = {{"cv_max", 0.5}};
    payload["input"] = to_json(env);
    std::vector<std::string> results;
    std::vector<uint64_t> ids;
    for (const char* t : {"local", "pool", "hpc"}) ids.push_back(ex.invoke({"stability_index", 1}, payload.dump(), t).task_id);
    for (auto id : ids) {
      auto h = ex.wait(id, 5s);
      ASSERT_EQ(h.state, TaskState::kDone) << h.error;
      results.push_back(h.result);
    }
    EXPECT_EQ(results[0], results[1]);
    EXPECT_EQ(results[0], results[2]);
  }
}

TEST(Executor, FailuresCarryTheirCode) {
  FunctionRegistry reg;
  register_builtins(reg);
  reg.register_function({"not_json", 1, FunctionKind::kBuiltin,
                         [](std::string_view, const FunctionContext&) { return std::string("{oops"); }, {}, 1000});
  reg.register_function({"throws", 1, FunctionKind::kBuiltin,
                         [](std::string_view, const FunctionContext&) -> std::string {
                           throw std::runtime_error("boom");
                         },
                         {}, 1000});
  Executor ex(reg);
  ex.add_target({"pool", TargetKind::kPool, 2});
  auto run = [&](const char* fn, std::string payload) {
    return ex.wait(ex.invoke({fn, 1}, std::move(payload), "pool").task_id, 5s);
  };
  auto a = run("not_json", "{}");
  EXPECT_EQ(a.state, TaskState::kFailed);
  EXPECT_EQ(a.error_code, ErrorCode::kBadOutput);
  auto b = run("throws", "{}");
  EXPECT_EQ(b.state, TaskState::kFailed);
  EXPECT_EQ(b.error_code, ErrorCode::kFunctionError);
  EXPECT_EQ(b.error, "boom");
  auto c = run("hill_climb", R"({"inputs":[]})");
  EXPECT_EQ(c.error_code, ErrorCode::kEmptyHistory);
  EXPECT_TRUE(c.result.empty());
}

TEST(Executor, BuiltinTimeoutStopsTheTask) {
  FunctionRegistry reg;
  std::atomic<bool> saw_stop{false};
  reg.register_function({"spin", 1, FunctionKind::kBuiltin,
                         [&](std::string_view, const FunctionContext& ctx) {
                           while (!ctx.stop.stop_requested()) std::this_thread::sleep_for(1ms);
                           saw_stop = true;
                           return std::string("{}");
                         },
                         {}, 30'000});
  Executor ex(reg);
  ex.add_target({"pool", TargetKind::kPool, 1});
  auto h = ex.invoke({"spin", 1}, "{}", "pool", 50);
  h = ex.wait(h.task_id, 5s);
  EXPECT_EQ(h.state, TaskState::kTimeout);
  EXPECT_EQ(h.error_code, ErrorCode::kTimeout);
  for (int i = 0; i < 500 && !saw_stop; ++i) std::this_thread::sleep_for(1ms);
  EXPECT_TRUE(saw_stop);
  EXPECT_EQ(ex.poll(h.task_id).state, TaskState::kTimeout);  // terminal states stick
}

TEST(SimHpc, SlotBoundAndDispatchLatencyUnderManualClock) {
  ManualClock clock(1'000'000);
  FunctionRegistry reg;
  reg.register_function({"work", 1, FunctionKind::kBuiltin,
                         [](std::string_view p, const FunctionContext& ctx) {
                           ctx.clock.sleep_for(40'000, ctx.stop);
                           return std::string(p);
                         },
                         {}, 60'000});
  Executor ex(reg, clock);
  ex.add_target({"hpc", TargetKind::kSimHpc, 1, 100, 3});
  std::vector<uint64_t> ids;
  for (int i = 0; i < 20; ++i) ids.push_back(ex.invoke({"work", 1}, std::to_string(i), "hpc").task_id);
  auto remaining = [&] {
    int n = 0;
    for (auto id : ids) n += ex.poll(id).terminal() ? 0 : 1;
    return n;
  };
  // Step time only once every busy slot is parked on the clock.
  const auto give_up = std::chrono::steady_clock::now() + 20s;
  for (int left = remaining(); left > 0; left = remaining()) {
    ASSERT_LT(std::chrono::steady_clock::now(), give_up) << left << " tasks stuck";
    ASSERT_LE(ex.running("hpc"), 3);
    if (clock.sleepers() < std::min(left, 3)) {
      std::this_thread::sleep_for(100us);
      continue;
    }
    clock.set(*clock.next_deadline());
  }
  EXPECT_EQ(ex.max_running("hpc"), 3);
  for (size_t i = 0; i < ids.size(); ++i) {
    auto h = ex.poll(ids[i]);
    EXPECT_EQ(h.state, TaskState::kDone);
    EXPECT_EQ(h.result, std::to_string(i));
    EXPECT_GE(h.started_us, h.submitted_us + 100'000);
    EXPECT_EQ(h.finished_us - h.started_us, 40'000);
  }
  // 20 tasks, 3 slots, 40 ms each after a 100 ms dispatch delay: 7 rounds.
  EXPECT_EQ(clock.now_us(), 1'000'000 + 100'000 + 7 * 40'000);
}

TEST(Subprocess, EchoRoundTripsByteExactly) {
  FunctionRegistry reg;
  reg.register_function(subprocess("echo", {"cat"}));
  Executor ex(reg);
  ex.add_target({"pool", TargetKind::kPool, 2});
  std::mt19937_64 rng(9);
  for (int i = 0; i < 25; ++i) {
    auto payload = random_json_line(rng);
    auto h = ex.wait(ex.invoke({"echo", 1}, payload, "pool").task_id, 10s);
    ASSERT_EQ(h.state, TaskState::kDone) << h.error;
    EXPECT_EQ(h.result, payload);
  }
  std::string big = Json{{"blob", std::string(1 << 20, 'z')}}.dump();
  EXPECT_EQ(run_subprocess_function(*reg.find({"echo", 1}), big, 10s), big);
}

TEST(Subprocess, ProtocolViolations) {
  auto code = [](const FunctionDef& d, std::chrono::milliseconds t = 5s) {
    try {
      run_subprocess_function(d, "{}", t);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  EXPECT_EQ(code(subprocess("missing", {"/nonexistent/mdml-fn"})), ErrorCode::kSpawnError);
  EXPECT_EQ(code(subprocess("silent", {"sh", "-c", "cat >/dev/null"})), ErrorCode::kBadOutput);
  EXPECT_EQ(code(subprocess("prose", {"sh", "-c", "cat >/dev/null; echo hello"})), ErrorCode::kBadOutput);
  EXPECT_EQ(code(subprocess("two", {"sh", "-c", "cat >/dev/null; echo 1; echo 2"})), ErrorCode::kBadOutput);
  EXPECT_EQ(code(subprocess("slow", {"sleep", "5"}), 100ms), ErrorCode::kTimeout);
  try {
    run_subprocess_function(subprocess("fails", {"sh", "-c", "cat >/dev/null; echo broken >&2; exit 3"}), "{}", 5s);
    FAIL();
  } catch (const NonzeroExitError& e) {
    EXPECT_EQ(e.exit_code(), 3);
    EXPECT_EQ(e.stderr_excerpt(), "broken");
    EXPECT_EQ(e.code(), ErrorCode::kNonzeroExit);
  }
  // A child that never reads stdin still gets its answer through.
  EXPECT_EQ(run_subprocess_function(subprocess("deaf", {"sh", "-c", "echo '{\"ok\":true}'"}),
                                    std::string(1 << 20, ' '), 5s),
            R"({"ok":true})");
}

}  // namespace
}  // namespace mdml
