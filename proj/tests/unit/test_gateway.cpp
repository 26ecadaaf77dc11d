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

#include "http_client.hpp"
#include "mdml/error.hpp"
#include "mdml/gateway.hpp"
#include "mdml/sim.hpp"
#include "mdml/topic.hpp"
#include "test_util.hpp"

namespace mdml {
namespace {

using namespace std::chrono_literals;
using testing::http_request;
using testing::WsClient;

TokenTable tokens() {
  return TokenTable::from_json(Json::parse(R"({"tokens":[
    {"token":"op","principal":"operator","scopes":["read","control"]},
    {"token":"viewer","principal":"viewer","scopes":["read"]},
    {"token":"pusher","principal":"pusher","scopes":["control"]},
    {"token":"old","principal":"old","scopes":["read","control"],"expires_us":1}]})"));
}

struct Fixture {
  explicit Fixture(GatewayOptions o = {}) : gw(bus, tokens(), with_defaults(std::move(o))) { gw.start(); }

  static GatewayOptions with_defaults(GatewayOptions o) {
    o.port = 0;
    if (o.experiments.empty()) o.experiments = {"fsp"};
    return o;
  }

  void publish(const Envelope& e) { bus.publish(topic_for(TopicKind::kData, e.experiment_id, e.device_id), encode(e)); }

  // Waits until the device ring holds `n` records (the taps are asynchronous).
  Json wait_records(const std::string& exp, const std::string& dev, size_t n, const std::string& query = "") {
    Json body;
    for (int i = 0; i < 400; ++i) {
      auto r = gw.handle_http("GET", "/api/v1/experiments/" + exp + "/streams/" + dev + "?limit=100000" + query,
                              "Bearer op", "");
      if (r.status == 200) {
        body = Json::parse(r.body);
        if (body["records"].size() >= n) return body;
      }
      std::this_thread::sleep_for(5ms);
    }
    return body;
  }

  InprocBus bus;
  Gateway gw;
};

TEST(Tokens, IntrospectAndTableErrors) {
  auto t = tokens();
  EXPECT_EQ(t.introspect("op", 0).principal, "operator");
  EXPECT_TRUE(t.introspect("old", 0).has_scope("control"));
  EXPECT_THROW(t.introspect("old", 1), Error);
  EXPECT_THROW(t.introspect("nobody", 0), Error);
  EXPECT_THROW(TokenTable::from_json(Json::parse(R"({"tokens":[{"token":"a","scopes":["admin"]}]})")), Error);
  EXPECT_THROW(TokenTable::from_json(Json::parse(R"({"tokens":[{"token":"","scopes":[]}]})")), Error);
  EXPECT_THROW(TokenTable::from_json(Json::parse(R"({"toks":[]})")), Error);
}

TEST(Gateway, EveryEndpointRejectsBadCredentials) {
  Fixture f;
  const std::vector<std::pair<std::string, std::string>> endpoints = {
      {"GET", "/api/v1/experiments"},
      {"GET", "/api/v1/pipeline/status"},
      {"GET", "/api/v1/experiments/fsp/streams/plif"},
      {"POST", "/api/v1/experiments/fsp/control/burner"},
  };
  const std::vector<std::string> headers = {"", "Bearer old", "Bearer nobody", "Basic op", "op", "Bearer "};
  for (const auto& [method, target] : endpoints) {
    for (const auto& h : headers) {
      auto r = f.gw.handle_http(method, target, h, R"({"command_name":"set_u","params":{"u":0.5}})");
      EXPECT_EQ(r.status, 401) << method << " " << target << " [" << h << "]";
      EXPECT_EQ(Json::parse(r.body)["error"], "unauthorized");
    }
  }
  // Same over the socket, including the CORS header on the error.
  auto r = http_request(f.gw.port(), "GET", "/api/v1/experiments", "old");
  EXPECT_EQ(r.status, 401);
  EXPECT_EQ(r.allow_origin, "*");
  EXPECT_EQ(http_request(f.gw.port(), "GET", "/api/v1/experiments").status, 401);
  EXPECT_EQ(http_request(f.gw.port(), "GET", "/api/v1/experiments", "op").status, 200);
}

TEST(Gateway, ScopesAndRouting) {
  Fixture f;
  auto r = f.gw.handle_http("POST", "/api/v1/experiments/fsp/control/burner", "Bearer viewer",
                            R"({"command_name":"set_u","params":{"u":0.5}})");
  EXPECT_EQ(r.status, 403);
  EXPECT_EQ(Json::parse(r.body), Json::parse(R"({"error":"forbidden","required_scope":"control"})"));
  r = f.gw.handle_http("GET", "/api/v1/experiments", "Bearer pusher", "");
  EXPECT_EQ(r.status, 403);
  EXPECT_EQ(Json::parse(r.body)["required_scope"], "read");

  EXPECT_EQ(f.gw.handle_http("POST", "/api/v1/experiments", "Bearer op", "").status, 405);
  EXPECT_EQ(f.gw.handle_http("GET", "/api/v1/experiments/fsp/control/burner", "Bearer op", "").status, 405);
  EXPECT_EQ(f.gw.handle_http("GET", "/api/v1/nothing", "Bearer op", "").status, 404);
  EXPECT_EQ(f.gw.handle_http("GET", "/index.html", "", "").status, 404);

  auto pre = http_request(f.gw.port(), "OPTIONS", "/api/v1/experiments");
  EXPECT_EQ(pre.status, 204);
  EXPECT_EQ(pre.allow_origin, "*");
}

TEST(Gateway, ExperimentsAndPipelineStatus) {
  Fixture f;
  auto list = [&] { return Json::parse(f.gw.handle_http("GET", "/api/v1/experiments", "Bearer viewer", "").body); };
  EXPECT_EQ(list()["experiments"], Json::parse(R"(["fsp"])"));
  f.publish(testing::scalar_envelope("bench", "a", 0, 1, 0));
  f.wait_records("bench", "a", 1);
  EXPECT_EQ(list()["experiments"], Json::parse(R"(["bench","fsp"])"));

  EXPECT_EQ(Json::parse(f.gw.handle_http("GET", "/api/v1/pipeline/status", "Bearer viewer", "").body),
            Json::parse(R"({"nodes":[]})"));
  f.gw.set_status_provider([] {
    NodeStatus s;
    s.node_id = "fuse";
    s.kind = NodeKind::kFuse;
    s.state = NodeState::kRunning;
    s.counters.in = 4;
    return std::vector<NodeStatus>{s};
  });
  auto nodes = Json::parse(f.gw.handle_http("GET", "/api/v1/pipeline/status", "Bearer viewer", "").body)["nodes"];
  ASSERT_EQ(nodes.size(), 1u);
  EXPECT_EQ(nodes[0]["node_id"], "fuse");
  EXPECT_EQ(nodes[0]["state"], "running");
}

TEST(Gateway, StreamsQueryRules) {
  Fixture f;
  for (uint64_t i = 0; i < 10; ++i) {
    f.publish(testing::scalar_envelope("fsp", "plif", i, 1'000 + static_cast<int64_t>(i) * 100, 0.5 * i));
  }
  auto all = f.wait_records("fsp", "plif", 10);
  ASSERT_EQ(all["records"].size(), 10u);
  EXPECT_EQ(all["experiment_id"], "fsp");
  EXPECT_EQ(all["device_id"], "plif");
  const auto& first = all["records"][0];
  EXPECT_EQ(first["seq"], 0);
  EXPECT_EQ(first["ts_us"], 1000);
  EXPECT_EQ(first["fields"][0]["name"], "x");
  EXPECT_EQ(first["rows"], Json::parse("[[0.0,0]]"));

  auto get = [&](const std::string& q) {
    return f.gw.handle_http("GET", "/api/v1/experiments/fsp/streams/plif" + q, "Bearer viewer", "");
  };
  auto seqs = [&](const std::string& q) {
    std::vector<uint64_t> out;
    auto body = Json::parse(get(q).body);
    for (const auto& r : body["records"]) out.push_back(r["seq"]);
    return out;
  };
  EXPECT_EQ(seqs("?limit=3"), (std::vector<uint64_t>{7, 8, 9}));          // newest, oldest first
  EXPECT_EQ(seqs("?since_us=1500"), (std::vector<uint64_t>{6, 7, 8, 9}));  // strictly after
  EXPECT_EQ(seqs("?since_us=1500&limit=2"), (std::vector<uint64_t>{8, 9}));
  EXPECT_TRUE(seqs("?since_us=1900").empty());
  EXPECT_EQ(get("?since_us=99999").status, 200);
  EXPECT_EQ(get("?since_us=abc").status, 400);
  EXPECT_EQ(get("?limit=0").status, 400);
  EXPECT_EQ(get("?limit=-4").status, 400);
  EXPECT_EQ(get("?limit=2x").status, 400);
  EXPECT_EQ(f.gw.handle_http("GET", "/api/v1/experiments/nope/streams/plif", "Bearer viewer", "").status, 404);
  EXPECT_EQ(f.gw.handle_http("GET", "/api/v1/experiments/fsp/streams/nope", "Bearer viewer", "").status, 404);
}

TEST(Gateway, RingIsBoundedAndBlobsSummarized) {
  GatewayOptions o;
  o.ring_size = 10;
  Fixture f(o);
  for (uint64_t i = 0; i < 25; ++i) f.publish(testing::scalar_envelope("fsp", "a", i, static_cast<int64_t>(i), 0));
  Envelope blob;
  blob.experiment_id = "fsp";
  blob.device_id = "cam";
  blob.ts_us = 5;
  blob.payload = Blob{"image/png", std::vector<uint8_t>(1234, 7)};
  f.publish(blob);
  auto cam = f.wait_records("fsp", "cam", 1);
  ASSERT_EQ(cam["records"].size(), 1u);
  EXPECT_EQ(cam["records"][0]["blob"], Json::parse(R"({"media_type":"image/png","bytes":1234})"));
  auto body = f.wait_records("fsp", "a", 10);
  ASSERT_EQ(body["records"].size(), 10u);
  EXPECT_EQ(body["records"][0]["seq"], 15);
  EXPECT_EQ(body["records"][9]["seq"], 24);
}

TEST(Gateway, ControlPublishesExactlyOneMessage) {
  Fixture f;
  auto sub = f.bus.subscribe("mdml/v1/fsp/control/+");
  auto post = [&](const std::string& dev, const std::string& body, const std::string& token = "op") {
    return http_request(f.gw.port(), "POST", "/api/v1/experiments/fsp/control/" + dev, token, body);
  };
  auto r = post("burner", R"({"command_name":"set_u","params":{"u":0.62}})");
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(Json::parse(r.body), Json::parse(R"({"seq":0,"topic":"mdml/v1/fsp/control/burner"})"));
  auto d = sub->try_pop();
  ASSERT_TRUE(d);
  EXPECT_FALSE(sub->try_pop());
  EXPECT_EQ(d->topic, "mdml/v1/fsp/control/burner");
  auto m = decode_control(d->payload);
  EXPECT_EQ(m.command_name, "set_u");
  EXPECT_EQ(std::get<double>(m.params.at("u")), 0.62);
  EXPECT_EQ(m.seq, 0u);

  EXPECT_EQ(Json::parse(post("burner", R"({"command_name":"set_u","params":{"u":0.7}})").body)["seq"], 1);
  EXPECT_EQ(Json::parse(post("valve", R"({"command_name":"open","params":{}})").body)["seq"], 0);
  EXPECT_EQ(sub->size(), 2u);

  // Rejected requests publish nothing.
  EXPECT_EQ(post("burner", "not json").status, 400);
  EXPECT_EQ(post("burner", R"({"params":{}})").status, 400);
  EXPECT_EQ(post("burner", R"({"command_name":"set_u","params":{"u":[1]}})").status, 400);
  EXPECT_EQ(post("bad/dev", R"({"command_name":"x","params":{}})").status, 404);
  EXPECT_EQ(http_request(f.gw.port(), "POST", "/api/v1/experiments/zzz/control/burner", "op",
                         R"({"command_name":"x","params":{}})")
                .status,
            404);
  EXPECT_EQ(post("burner", R"({"command_name":"set_u","params":{"u":0.5}})", "viewer").status, 403);
  EXPECT_EQ(sub->size(), 2u);

  f.bus.disconnect();
  EXPECT_EQ(post("burner", R"({"command_name":"set_u","params":{"u":0.5}})").status, 503);
}

// Reads until a message satisfying `pred` arrives.
std::optional<Json> read_until(WsClient& ws, const std::function<bool(const Json&)>& pred,
                               std::chrono::milliseconds timeout = 3s) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    auto m = ws.read(100ms);
    if (!m) continue;
    auto j = Json::parse(*m);
    if (pred(j)) return j;
  }
  return std::nullopt;
}

void wait_clients(Gateway& gw, size_t n) {
  for (int i = 0; i < 400 && gw.ws_clients() < n; ++i) std::this_thread::sleep_for(5ms);
  ASSERT_EQ(gw.ws_clients(), n);
}

TEST(GatewayWs, DataEventsAndFilters) {
  Fixture f;
  WsClient all(f.gw.port(), "/api/v1/ws?token=viewer");
  WsClient results_only(f.gw.port(), "/api/v1/ws?token=viewer&channels=results");
  WsClient other_exp(f.gw.port(), "/api/v1/ws?token=viewer&experiment=bench");
  wait_clients(f.gw, 3);

  f.publish(testing::scalar_envelope("fsp", "plif", 3, 77, 1.5));
  f.bus.publish("mdml/v1/fsp/results/index", R"({"node":"index","ts_us":77,"seq":0,"result":{"index":0.4}})");
  f.bus.publish("mdml/v1/fsp/events", R"({"node":"index","state":"running","ts_us":78})");

  auto data = read_until(all, [](const Json& j) { return j["channel"] == "data"; });
  ASSERT_TRUE(data);
  EXPECT_EQ((*data)["experiment_id"], "fsp");
  EXPECT_EQ((*data)["body"]["device_id"], "plif");
  EXPECT_EQ((*data)["body"]["seq"], 3);
  EXPECT_TRUE((*data).contains("ts_us"));
  auto status = read_until(all, [](const Json& j) { return j["channel"] == "status"; });
  ASSERT_TRUE(status);
  EXPECT_EQ((*status)["body"]["state"], "running");

  auto res = results_only.read(3s);
  ASSERT_TRUE(res);
  EXPECT_EQ(Json::parse(*res)["channel"], "results");
  EXPECT_EQ(Json::parse(*res)["body"]["result"]["index"], 0.4);
  EXPECT_FALSE(results_only.read(200ms));
  EXPECT_FALSE(other_exp.read(200ms));
}

TEST(GatewayWs, UnauthorizedClose) {
  Fixture f;
  for (std::string q : {"", "?token=nobody", "?token=old", "?token=pusher"}) {
    WsClient ws(f.gw.port(), "/api/v1/ws" + q);
    EXPECT_FALSE(ws.read(2s));
    EXPECT_TRUE(ws.closed()) << q;
    EXPECT_EQ(ws.close_code(), 4401) << q;
  }
  EXPECT_EQ(f.gw.ws_clients(), 0u);
}

TEST(GatewayWs, StalledClientClosedOnOverflow) {
  GatewayOptions o;
  o.ws_queue_limit = 50;
  Fixture f(o);
  WsClient slow(f.gw.port(), "/api/v1/ws?token=viewer&channels=data");
  WsClient fast(f.gw.port(), "/api/v1/ws?token=viewer&channels=status");
  wait_clients(f.gw, 2);
  slow.stall();
  // Enough large events to fill the socket buffers and then the queue.
  Envelope big;
  big.experiment_id = "fsp";
  big.device_id = "cam";
  big.payload = Blob{"application/octet-stream", std::vector<uint8_t>(64 * 1024, 1)};
  for (uint64_t i = 0; i < 400; ++i) {
    big.seq = i;
    big.ts_us = static_cast<int64_t>(i);
    f.publish(big);
  }
  f.wait_records("fsp", "cam", 400);
  // Draining now delivers what was queued, then the overflow close.
  size_t got = 0;
  auto deadline = std::chrono::steady_clock::now() + 20s;
  while (!slow.closed() && std::chrono::steady_clock::now() < deadline) {
    if (slow.read(100ms)) ++got;
  }
  EXPECT_TRUE(slow.closed());
  EXPECT_EQ(slow.close_code(), 4008);
  EXPECT_LT(got, 400u);
  // The other client is unaffected.
  f.bus.publish("mdml/v1/fsp/events", R"({"node":"n","state":"idle","ts_us":1})");
  EXPECT_TRUE(fast.read(3s));
  EXPECT_FALSE(fast.closed());
}

TEST(GatewayWs, DefaultQueueLimitIsOneThousand) {
  Fixture f;
  WsClient slow(f.gw.port(), "/api/v1/ws?token=viewer&channels=data");
  wait_clients(f.gw, 1);
  slow.stall();
  Envelope e;
  e.experiment_id = "fsp";
  e.device_id = "cam";
  e.payload = Blob{"application/octet-stream", std::vector<uint8_t>(16 * 1024, 2)};
  for (uint64_t i = 0; i < 1600; ++i) {
    e.seq = i;
    e.ts_us = static_cast<int64_t>(i);
    f.publish(e);
  }
  f.wait_records("fsp", "cam", 1600);
  size_t got = 0;
  auto deadline = std::chrono::steady_clock::now() + 30s;
  while (!slow.closed() && std::chrono::steady_clock::now() < deadline) {
    if (slow.read(100ms)) ++got;
  }
  EXPECT_EQ(slow.close_code(), 4008);
  // At most the queue plus what the socket buffers absorbed got through.
  EXPECT_GE(got, 1000u);
  EXPECT_LT(got, 1600u);
}

TEST(GatewayWs, StopClosesClients) {
  Fixture f;
  WsClient ws(f.gw.port(), "/api/v1/ws?token=viewer");
  wait_clients(f.gw, 1);
  f.gw.stop();
  EXPECT_FALSE(ws.read(2s));
  EXPECT_TRUE(ws.closed());
}

TEST(Gateway, SteeringRoundTripReachesSimulator) {
  Fixture f;
  SimulatorConfig c;
  c.experiment_id = "fsp";
  c.ticks = 5;
  c.pace = false;
  c.listen_control = true;
  c.params.sigma = 0.0;
  Simulator sim(c, f.bus);
  auto plif = f.bus.subscribe("mdml/v1/fsp/data/plif");
  sim.set_after_tick([&](const SimState& st, int64_t) {
    if (st.k != 1) return;
    auto r = http_request(f.gw.port(), "POST", "/api/v1/experiments/fsp/control/burner", "op",
                          R"({"command_name":"set_u","params":{"u":0.3}})");
    ASSERT_EQ(r.status, 200) << r.body;
  });
  sim.run();
  std::vector<double> u;
  while (auto d = plif->try_pop()) u.push_back(std::get<double>(decode(d->payload).rows()[0][1]));
  EXPECT_EQ(u, (std::vector<double>{0.9, 0.9, 0.3, 0.3, 0.3}));
  EXPECT_EQ(sim.controls_applied(), 1u);
  // The gateway saw the same stream.
  EXPECT_EQ(f.wait_records("fsp", "plif", 5)["records"].size(), 5u);
}

}  // namespace
}  // namespace mdml
