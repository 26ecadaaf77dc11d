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

// Random pipeline documents: valid DAGs built in topological order, and the
// same with exactly one injected defect of a known error class.

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mdml/envelope.hpp"
#include "mdml/error.hpp"

namespace mdml::testing {

enum class DagDefect { kNone, kCycle, kDanglingEdge, kBadNodeConfig };

inline ErrorCode expected_error(DagDefect d) {
  switch (d) {
    case DagDefect::kCycle: return ErrorCode::kCycleDetected;
    case DagDefect::kDanglingEdge: return ErrorCode::kDanglingEdge;
    default: return ErrorCode::kBadNodeConfig;
  }
}

struct GeneratedDag {
  Json doc;
  DagDefect defect = DagDefect::kNone;
  std::string mutation;  // what was broken, for failure messages
};

class DagGenerator {
 public:
  explicit DagGenerator(uint64_t seed) : rng_(seed) {}

  GeneratedDag valid() {
    GeneratedDag g;
    g.doc = build();
    return g;
  }

  GeneratedDag defective(DagDefect d) {
    GeneratedDag g;
    g.defect = d;
    g.doc = build();
    switch (d) {
      case DagDefect::kCycle: inject_cycle(g); break;
      case DagDefect::kDanglingEdge: inject_dangling(g); break;
      case DagDefect::kBadNodeConfig: inject_bad_config(g); break;
      case DagDefect::kNone: break;
    }
    shuffle(g.doc);
    return g;
  }

 private:
  int64_t uni(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng_); }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<size_t>(uni(0, static_cast<int64_t>(v.size()) - 1))];
  }

  Json function_node(const std::string& id) {
    Json n = {{"id", id}, {"kind", "function"}, {"function", pick<std::string>({"identity", "stability_index"})},
              {"target", pick<std::string>({"local", "pool", "hpc"})}};
    if (uni(0, 1)) n["timeout_ms"] = uni(1, 60'000);
    if (uni(0, 1)) n["args"] = {{"cv_max", 0.5}};
    if (uni(0, 2) == 0) n["window"] = uni(0, 8);
    return n;
  }

  Json fuse_node(const std::string& id, const std::vector<std::string>& devices) {
    Json rule;
    int kind = devices.size() == 1 ? static_cast<int>(uni(0, 2)) : static_cast<int>(uni(0, 1));
    rule["devices"] = devices;
    rule["max_lateness_ms"] = uni(0, 500);
    if (kind == 0) {
      rule["kind"] = "trigger";
      rule["trigger_device"] = pick(devices);
      if (devices.size() > 1 && uni(0, 1)) rule["staleness_ms"] = {{devices.back(), uni(0, 10'000)}};
    } else if (kind == 1) {
      rule["kind"] = "tumbling";
      rule["width_ms"] = uni(1, 5'000);
    } else {
      rule["kind"] = "count";
      rule["n"] = uni(1, 20);
    }
    return {{"id", id}, {"kind", "fuse"}, {"rule", rule}};
  }

  Json build() {
    Json doc;
    doc["pipeline_id"] = "p" + std::to_string(uni(0, 999));
    doc["experiment_id"] = "exp-" + std::to_string(uni(0, 99));
    doc["executors"] = Json::array({{{"target_id", "local"}, {"kind", "inline"}},
                                    {{"target_id", "pool"}, {"kind", "pool"}, {"workers", 2}},
                                    {{"target_id", "hpc"}, {"kind", "sim_hpc"}, {"slots", 2},
                                     {"dispatch_latency_ms", 10}}});
    Json nodes = Json::array();
    Json edges = Json::array();
    std::set<std::pair<std::string, std::string>> have;
    auto edge = [&](const std::string& from, const std::string& to) {
      if (!have.insert({from, to}).second) return;
      Json e = {{"from", from}, {"to", to}};
      if (uni(0, 3) == 0) e["queue_capacity"] = uni(1, 4096);
      if (uni(0, 3) == 0) e["policy"] = uni(0, 1) ? "shed" : "block";
      edges.push_back(std::move(e));
    };

    std::vector<std::string> sources, producers;
    const int nsrc = static_cast<int>(uni(1, 4));
    for (int i = 0; i < nsrc; ++i) {
      std::string id = "src" + std::to_string(i);
      nodes.push_back({{"id", id}, {"kind", "source"}, {"device", uni(0, 3) == 0 ? "+" : "dev" + std::to_string(i)}});
      sources.push_back(id);
      producers.push_back(id);
    }
    const int nfuse = static_cast<int>(uni(0, 2));
    for (int i = 0; i < nfuse; ++i) {
      std::string id = "fuse" + std::to_string(i);
      std::vector<std::string> devices;
      const int nd = static_cast<int>(uni(1, 3));
      for (int d = 0; d < nd; ++d) devices.push_back("dev" + std::to_string(d));
      nodes.push_back(fuse_node(id, devices));
      for (int k = 0, m = static_cast<int>(uni(1, nsrc)); k < m; ++k) edge(pick(sources), id);
      producers.push_back(id);
    }
    const int nfn = static_cast<int>(uni(0, 5));
    for (int i = 0; i < nfn; ++i) {
      std::string id = "fn" + std::to_string(i);
      nodes.push_back(function_node(id));
      for (int k = 0, m = static_cast<int>(uni(1, 2)); k < m; ++k) edge(pick(producers), id);
      producers.push_back(id);
    }
    const int nsink = static_cast<int>(uni(0, 3));
    for (int i = 0; i < nsink; ++i) {
      std::string id = "sink" + std::to_string(i);
      switch (uni(0, 2)) {
        case 0:
          nodes.push_back({{"id", id}, {"kind", "tap"}, {"channel", "ch" + std::to_string(i)}});
          edge(pick(producers), id);
          break;
        case 1:
          nodes.push_back({{"id", id}, {"kind", "steer"}, {"device", "burner"}, {"command_name", "set_u"},
                           {"params", {{"u", "${u}"}, {"gain", 0.5}, {"dry_run", false}}}});
          edge(pick(producers), id);
          break;
        default:
          nodes.push_back({{"id", id}, {"kind", "archive_sink"}});
          edge(pick(sources), id);
          break;
      }
    }
    doc["nodes"] = std::move(nodes);
    doc["edges"] = std::move(edges);
    shuffle(doc);
    return doc;
  }

  void shuffle(Json& doc) {
    std::vector<Json> nodes(doc["nodes"].begin(), doc["nodes"].end());
    std::vector<Json> edges(doc["edges"].begin(), doc["edges"].end());
    std::shuffle(nodes.begin(), nodes.end(), rng_);
    std::shuffle(edges.begin(), edges.end(), rng_);
    doc["nodes"] = nodes;
    doc["edges"] = edges;
  }

  std::vector<std::string> ids_of_kind(const Json& doc, const std::string& kind) {
    std::vector<std::string> out;
    for (const auto& n : doc["nodes"]) {
      if (n["kind"] == kind) out.push_back(n["id"]);
    }
    return out;
  }

  void inject_cycle(GeneratedDag& g) {
    // A fresh chain of function nodes fed by a source and closed into a loop.
    auto sources = ids_of_kind(g.doc, "source");
    const int len = static_cast<int>(uni(1, 4));
    std::vector<std::string> chain;
    for (int i = 0; i < len; ++i) {
      chain.push_back("loop" + std::to_string(i));
      g.doc["nodes"].push_back(function_node(chain.back()));
    }
    g.doc["edges"].push_back({{"from", pick(sources)}, {"to", chain.front()}});
    for (int i = 0; i + 1 < len; ++i) g.doc["edges"].push_back({{"from", chain[i]}, {"to", chain[i + 1]}});
    g.doc["edges"].push_back({{"from", chain.back()}, {"to", chain.front()}});
    g.mutation = "cycle of length " + std::to_string(len);
  }

  void inject_dangling(GeneratedDag& g) {
    std::vector<std::string> all;
    for (const auto& n : g.doc["nodes"]) all.push_back(n["id"]);
    std::string ghost = "ghost" + std::to_string(uni(0, 99));
    if (uni(0, 1)) {
      g.doc["edges"].push_back({{"from", pick(all)}, {"to", ghost}});
    } else {
      g.doc["edges"].push_back({{"from", ghost}, {"to", pick(all)}});
    }
    g.mutation = "edge to or from " + ghost;
  }

  void inject_bad_config(GeneratedDag& g) {
    auto& nodes = g.doc["nodes"];
    auto add_function = [&]() -> Json& {
      std::string id = "extra" + std::to_string(uni(0, 99));
      nodes.push_back(function_node(id));
      g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()}, {"to", id}});
      return nodes.back();
    };
    switch (uni(0, 16)) {
      case 0:
        pick_any(nodes)["id"] = "bad id";
        g.mutation = "invalid node id";
        break;
      case 1:
        nodes.push_back(nodes[0]);
        g.mutation = "duplicate node id";
        break;
      case 2:
        add_function()["target"] = "nowhere";
        g.mutation = "unknown executor target";
        break;
      case 3:
        add_function()["timeout_ms"] = -uni(0, 10);
        g.mutation = "non-positive timeout";
        break;
      case 4:
        add_function()["args"] = Json::array({1, 2});
        g.mutation = "args not an object";
        break;
      case 5:
        add_function().erase("function");
        g.mutation = "function missing";
        break;
      case 6:
        add_function()["window"] = -1;
        g.mutation = "negative window";
        break;
      case 7: {
        Json& f = add_function();
        f["kind"] = "teleport";
        g.mutation = "unknown kind";
        break;
      }
      case 8:
        add_function()["colour"] = "red";
        g.mutation = "unknown key";
        break;
      case 9: {
        std::string id = "badfuse";
        Json n = fuse_node(id, {"dev0"});
        n["rule"] = {{"kind", "tumbling"}, {"devices", {"dev0"}}, {"width_ms", 0}};
        nodes.push_back(n);
        g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()}, {"to", id}});
        g.mutation = "zero window width";
        break;
      }
      case 10: {
        Json n = {{"id", "badfuse"}, {"kind", "fuse"},
                  {"rule", {{"kind", "count"}, {"devices", {"dev0", "dev1"}}, {"n", 3}}}};
        nodes.push_back(n);
        g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()}, {"to", "badfuse"}});
        g.mutation = "multi-device count rule";
        break;
      }
      case 11: {
        Json n = {{"id", "badfuse"}, {"kind", "fuse"},
                  {"rule", {{"kind", "trigger"}, {"devices", {"dev0"}}, {"trigger_device", "dev9"}}}};
        nodes.push_back(n);
        g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()}, {"to", "badfuse"}});
        g.mutation = "trigger device not in devices";
        break;
      }
      case 12:
        nodes.push_back({{"id", "badsteer"}, {"kind", "steer"}, {"device", "burner"}, {"command_name", "set_u"},
                         {"params", {{"u", Json::array({1})}}}});
        g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()}, {"to", "badsteer"}});
        g.mutation = "non-scalar steer param";
        break;
      case 13:
        nodes.push_back({{"id", "badtap"}, {"kind", "tap"}, {"channel", "no/slash"}});
        g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()}, {"to", "badtap"}});
        g.mutation = "invalid tap channel";
        break;
      case 14:
        nodes.push_back({{"id", "orphan"}, {"kind", "tap"}, {"channel", "x"}});
        g.mutation = "node without inbound edge";
        break;
      case 15: {
        nodes.push_back({{"id", "badarchive"}, {"kind", "archive_sink"}});
        Json& f = add_function();
        g.doc["edges"].push_back({{"from", f["id"]}, {"to", "badarchive"}});
        g.mutation = "archive_sink fed by a function";
        break;
      }
      default:
        g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()},
                                  {"to", ids_of_kind(g.doc, "source").back()}});
        if (ids_of_kind(g.doc, "source").size() == 1) {
          // self loop on a single source is a cycle; keep the class stable
          g.doc["edges"].erase(g.doc["edges"].size() - 1);
          nodes.push_back({{"id", "tap_x"}, {"kind", "tap"}, {"channel", "x"}});
          g.doc["edges"].push_back({{"from", ids_of_kind(g.doc, "source").front()}, {"to", "tap_x"},
                                    {"queue_capacity", 0}});
          g.mutation = "zero queue capacity";
        } else {
          g.mutation = "edge into a source";
        }
        break;
    }
  }

  Json& pick_any(Json& nodes) { return nodes[static_cast<size_t>(uni(0, static_cast<int64_t>(nodes.size()) - 1))]; }

  std::mt19937_64 rng_;
};

}  // namespace mdml::testing
