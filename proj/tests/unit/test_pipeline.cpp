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

#include <thread>

#include "dag_gen.hpp"
#include "mdml/pipeline.hpp"
#include "mdml/sim.hpp"
#include "mdml/topic.hpp"
#include "test_util.hpp"

namespace mdml {
namespace {

using namespace std::chrono_literals;
using testing::scalar_envelope;

ErrorCode code_of(const std::string& doc) {
  try {
    parse_pipeline(doc);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "accepted: " << doc;
  return ErrorCode::kInvalidArgument;
}

std::string error_of(const std::string& doc) {
  try {
    parse_pipeline(doc);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

constexpr const char* kSmall = R"({
  "pipeline_id": "p1", "experiment_id": "e1",
  "executors": [{"target_id": "local", "kind": "inline"}],
  "nodes": [
    {"id": "a", "kind": "source", "device": "dev1"},
    {"id": "f", "kind": "function", "function": "identity", "target": "local"},
    {"id": "t", "kind": "tap", "channel": "out"}
  ],
  "edges": [{"from": "a", "to": "f"}, {"from": "f", "to": "t", "queue_capacity": 8, "policy": "shed"}]
})";

TEST(PipelineParse, RoundTrip) {
  auto c = parse_pipeline(kSmall);
  ASSERT_EQ(c.nodes.size(), 3u);
  EXPECT_EQ(c.edges[1].policy, EdgePolicy::kShed);
  EXPECT_EQ(c.edges[1].queue_capacity, 8u);
  EXPECT_EQ(c.edges[0].queue_capacity, 1024u);
  auto again = parse_pipeline(c.to_json().dump());
  EXPECT_EQ(again.nodes, c.nodes);
  EXPECT_EQ(again.edges, c.edges);
  EXPECT_EQ(again.to_json(), c.to_json());
}

TEST(PipelineParse, ErrorClassesAndMessages) {
  EXPECT_EQ(code_of("{nope"), ErrorCode::kParseError);
  EXPECT_EQ(code_of(R"({"pipeline_id":"p","experiment_id":"e"})"), ErrorCode::kParseError);

  auto doc = Json::parse(kSmall);
  doc["edges"].push_back({{"from", "f"}, {"to", "a"}});
  EXPECT_EQ(code_of(doc.dump()), ErrorCode::kCycleDetected);
  auto msg = error_of(doc.dump());
  EXPECT_NE(msg.find("CycleDetected"), std::string::npos);
  EXPECT_NE(msg.find("a -> f -> a"), std::string::npos) << msg;

  doc = Json::parse(kSmall);
  doc["edges"].push_back({{"from", "f"}, {"to", "zz"}});
  EXPECT_EQ(code_of(doc.dump()), ErrorCode::kDanglingEdge);
  EXPECT_NE(error_of(doc.dump()).find("'zz'"), std::string::npos);

  doc = Json::parse(kSmall);
  doc["nodes"][1]["target"] = "gpu";
  EXPECT_EQ(code_of(doc.dump()), ErrorCode::kBadNodeConfig);
  EXPECT_NE(error_of(doc.dump()).find("node 'f'"), std::string::npos);

  doc = Json::parse(kSmall);
  doc["edges"].push_back({{"from", "t"}, {"to", "f"}});
  EXPECT_EQ(code_of(doc.dump()), ErrorCode::kCycleDetected);

  doc = Json::parse(kSmall);
  doc["nodes"].push_back({{"id", "t2"}, {"kind", "tap"}, {"channel", "x"}});
  doc["edges"].push_back({{"from", "t"}, {"to", "t2"}});
  EXPECT_EQ(code_of(doc.dump()), ErrorCode::kBadNodeConfig);  // sinks have no outputs

  doc = Json::parse(kSmall);
  doc["nodes"].push_back({{"id", "fu"}, {"kind", "fuse"},
                          {"rule", {{"kind", "count"}, {"devices", {"dev1"}}, {"n", 2}}}});
  doc["edges"].push_back({{"from", "f"}, {"to", "fu"}});
  EXPECT_EQ(code_of(doc.dump()), ErrorCode::kBadNodeConfig);  // fuse input must be a source
}

class PipelineFuzz : public ::testing::TestWithParam<int> {};

TEST_P(PipelineFuzz, ValidAccepted) {
  testing::DagGenerator gen(static_cast<uint64_t>(GetParam()));
  for (int i = 0; i < 100; ++i) {
    auto g = gen.valid();
    EXPECT_NO_THROW(parse_pipeline(g.doc.dump())) << g.doc.dump(2);
  }
}

TEST_P(PipelineFuzz, DefectsRejectedWithTheirClass) {
  testing::DagGenerator gen(static_cast<uint64_t>(GetParam()) + 1000);
  for (int i = 0; i < 100; ++i) {
    auto defect = static_cast<testing::DagDefect>(1 + i % 3);
    auto g = gen.defective(defect);
    EXPECT_EQ(code_of(g.doc.dump()), testing::expected_error(defect)) << g.mutation << "\n" << g.doc.dump(2);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PipelineFuzz, ::testing::Values(1, 2, 3));

struct Rig {
  InprocBus bus;
  FunctionRegistry registry;
  Executor executor{registry};
  TapHub taps;

  Rig() { register_builtins(registry); }

  std::unique_ptr<Pipeline> start(const std::string& doc) {
    return Pipeline::start(parse_pipeline(doc), PipelineDeps{bus, executor, SystemClock::instance(), nullptr, &taps});
  }

  void send(const Envelope& e) { bus.publish(topic_for(TopicKind::kData, e.experiment_id, e.device_id), encode(e)); }
};

const NodeStatus& status_of(const std::vector<NodeStatus>& all, const std::string& id) {
  for (const auto& s : all) {
    if (s.node_id == id) return s;
  }
  throw std::runtime_error("no node " + id);
}

TEST(PipelineRuntime, SourceThroughFunctionToTap) {
  Rig rig;
  auto results = rig.bus.subscribe("mdml/v1/e1/results/+");
  auto reader = rig.taps.subscribe("out");
  auto doc = Json::parse(kSmall);
  doc["edges"][1]["policy"] = "block";
  auto p = rig.start(doc.dump());
  for (uint64_t i = 0; i < 50; ++i) rig.send(scalar_envelope("e1", "dev1", i, 1000 * static_cast<int64_t>(i), 0.5));
  rig.send(scalar_envelope("e1", "other", 0, 0, 0.5));  // not this source's device
  for (uint64_t i = 0; i < 50; ++i) {
    auto ev = reader->pop(5s);
    ASSERT_TRUE(ev) << i;
    EXPECT_EQ(ev->channel, "out");
    EXPECT_EQ(ev->node, "t");
    EXPECT_EQ(ev->body["input"]["seq"], i);  // identity echoes the payload
  }
  p->shutdown();
  auto st = p->status();
  EXPECT_EQ(status_of(st, "a").counters.in, 50u);
  EXPECT_EQ(status_of(st, "f").counters.out, 50u);
  EXPECT_EQ(status_of(st, "t").counters.in, 50u);
  for (const auto& s : st) EXPECT_EQ(s.state, NodeState::kStopped);
  auto r = results->pop(1s);
  ASSERT_TRUE(r);
  auto j = Json::parse(r->payload);
  EXPECT_EQ(r->topic, "mdml/v1/e1/results/f");
  EXPECT_EQ(j["node"], "f");
  EXPECT_EQ(j["seq"], 0);
}

TEST(PipelineRuntime, ShutdownFlushesFusion) {
  Rig rig;
  auto reader = rig.taps.subscribe();
  auto p = rig.start(R"({
    "pipeline_id": "p", "experiment_id": "e1",
    "nodes": [
      {"id": "a", "kind": "source", "device": "+"},
      {"id": "w", "kind": "fuse", "rule": {"kind": "tumbling", "devices": ["d1", "d2"], "width_ms": 10,
                                           "max_lateness_ms": 1000}},
      {"id": "t", "kind": "tap", "channel": "fused"}
    ],
    "edges": [{"from": "a", "to": "w"}, {"from": "w", "to": "t"}]})");
  rig.send(scalar_envelope("e1", "d1", 0, 1000, 1.0));
  rig.send(scalar_envelope("e1", "d2", 0, 2000, 2.0));
  rig.send(scalar_envelope("e1", "d1", 1, 15000, 3.0));
  std::this_thread::sleep_for(100ms);
  EXPECT_EQ(reader->size(), 0u);  // watermark has not passed any window
  p->shutdown();
  auto first = reader->pop(1s);
  auto second = reader->pop(1s);
  ASSERT_TRUE(first && second);
  EXPECT_EQ(first->ts_us, 10'000);
  EXPECT_EQ(first->body["devices"].size(), 2u);
  EXPECT_EQ(first->body["devices"]["d1"]["values"]["x"]["mean"], 1.0);
  EXPECT_EQ(second->ts_us, 20'000);
}

TEST(PipelineRuntime, SteerFillsParamsFromInput) {
  Rig rig;
  rig.registry.register_function({"fixed_u", 1, FunctionKind::kBuiltin,
                                  [](std::string_view, const FunctionContext&) {
                                    return std::string(R"({"u":0.25,"ts_us":7})");
                                  },
                                  {}, 1000});
  auto control = rig.bus.subscribe("mdml/v1/e1/control/burner");
  auto p = rig.start(R"({
    "pipeline_id": "p", "experiment_id": "e1",
    "executors": [{"target_id": "pool", "kind": "pool", "workers": 2}],
    "nodes": [
      {"id": "a", "kind": "source"},
      {"id": "c", "kind": "function", "function": "fixed_u", "target": "pool"},
      {"id": "s", "kind": "steer", "device": "burner", "command_name": "set_u",
       "params": {"u": "${u}", "mode": "auto", "gain": 2}}
    ],
    "edges": [{"from": "a", "to": "c"}, {"from": "c", "to": "s"}]})");
  rig.send(scalar_envelope("e1", "x", 0, 0, 0));
  rig.send(scalar_envelope("e1", "x", 1, 1, 0));
  for (uint64_t i = 0; i < 2; ++i) {
    auto d = control->pop(5s);
    ASSERT_TRUE(d);
    auto m = decode_control(d->payload);
    EXPECT_EQ(m.seq, i);
    EXPECT_EQ(m.command_name, "set_u");
    EXPECT_EQ(std::get<double>(m.params.at("u")), 0.25);
    EXPECT_EQ(std::get<std::string>(m.params.at("mode")), "auto");
    EXPECT_EQ(std::get<double>(m.params.at("gain")), 2.0);
  }
}

TEST(PipelineRuntime, FunctionErrorMarksNodeFailedAndContinues) {
  Rig rig;
  auto events = rig.bus.subscribe("mdml/v1/e1/events");
  auto reader = rig.taps.subscribe();
  auto p = rig.start(R"({
    "pipeline_id": "p", "experiment_id": "e1",
    "executors": [{"target_id": "local", "kind": "inline"}],
    "nodes": [
      {"id": "a", "kind": "source"},
      {"id": "si", "kind": "function", "function": "stability_index", "target": "local"},
      {"id": "t", "kind": "tap", "channel": "x"}
    ],
    "edges": [{"from": "a", "to": "si"}, {"from": "si", "to": "t"}]})");
  rig.send(scalar_envelope("e1", "x", 0, 0, 0));  // no frame field
  std::this_thread::sleep_for(200ms);
  auto st = p->status();
  EXPECT_EQ(status_of(st, "si").state, NodeState::kFailed);
  EXPECT_EQ(status_of(st, "si").counters.errors, 1u);
  EXPECT_EQ(status_of(st, "si").last_error, "EmptyFrame: input has no frame field");

  SimParams sp;
  auto good = emit_plif(initial_state(0.5, sp), sp, {"e1", "plif", 0, 5});
  rig.send(good);
  auto ev = reader->pop(5s);
  ASSERT_TRUE(ev);
  EXPECT_GT(ev->body["index"].get<double>(), 0.0);
  EXPECT_EQ(status_of(p->status(), "si").state, NodeState::kRunning);

  bool saw_failed = false;
  while (auto d = events->pop(100ms)) {
    auto j = Json::parse(d->payload);
    if (j["node"] == "si" && j["state"] == "failed") saw_failed = true;
  }
  EXPECT_TRUE(saw_failed);
}

TEST(PipelineRuntime, ShedEdgeDropsAndCounts) {
  Rig rig;
  std::atomic<bool> release{false};
  rig.registry.register_function({"slow", 1, FunctionKind::kBuiltin,
                                  [&](std::string_view p, const FunctionContext&) {
                                    while (!release) std::this_thread::sleep_for(1ms);
                                    return std::string(p);
                                  },
                                  {}, 30'000});
  auto p = rig.start(R"({
    "pipeline_id": "p", "experiment_id": "e1",
    "executors": [{"target_id": "local", "kind": "inline"}],
    "nodes": [
      {"id": "a", "kind": "source"},
      {"id": "s", "kind": "function", "function": "slow", "target": "local"}
    ],
    "edges": [{"from": "a", "to": "s", "queue_capacity": 2, "policy": "shed"}]})");
  for (uint64_t i = 0; i < 20; ++i) rig.send(scalar_envelope("e1", "x", i, static_cast<int64_t>(i), 0));
  std::this_thread::sleep_for(200ms);
  release = true;
  p->shutdown();
  const auto& s = status_of(p->status(), "s");
  EXPECT_GT(s.counters.dropped, 0u);
  EXPECT_EQ(s.counters.in + s.counters.dropped, 20u);
}

TEST(PipelineRuntime, ArchiveSinkNeedsWriter) {
  Rig rig;
  try {
    rig.start(R"({"pipeline_id":"p","experiment_id":"e1","nodes":[{"id":"a","kind":"source"},
      {"id":"z","kind":"archive_sink"}],"edges":[{"from":"a","to":"z"}]})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(TapHub, ChannelFilterAndExpiredReaders) {
  TapHub hub;
  auto all = hub.subscribe();
  auto only = hub.subscribe("b");
  {
    auto gone = hub.subscribe("a");
  }
  hub.publish({"a", "n", 1, OrderedJson::object()});
  hub.publish({"b", "n", 2, OrderedJson::object()});
  EXPECT_EQ(all->size(), 2u);
  EXPECT_EQ(only->size(), 1u);
  EXPECT_EQ(only->pop(0ms)->ts_us, 2);
  EXPECT_FALSE(only->pop(0ms));
}

}  // namespace
}  // namespace mdml
