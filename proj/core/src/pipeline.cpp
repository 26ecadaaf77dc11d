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

#include "mdml/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <functional>
#include <set>
#include <thread>

#include "mdml/topic.hpp"

namespace mdml {

std::string_view to_string(NodeKind kind) noexcept {
  switch (kind) {
    case NodeKind::kSource: return "source";
    case NodeKind::kFuse: return "fuse";
    case NodeKind::kFunction: return "function";
    case NodeKind::kSteer: return "steer";
    case NodeKind::kArchiveSink: return "archive_sink";
    case NodeKind::kTap: return "tap";
  }
  return "?";
}

std::string_view to_string(NodeState s) noexcept {
  switch (s) {
    case NodeState::kIdle: return "idle";
    case NodeState::kRunning: return "running";
    case NodeState::kFailed: return "failed";
    case NodeState::kStopped: return "stopped";
  }
  return "?";
}

namespace {

[[noreturn]] void bad_node(std::string_view node, const std::string& reason) {
  throw Error(ErrorCode::kBadNodeConfig, "node '" + std::string(node) + "': " + reason);
}

[[noreturn]] void parse_error(const std::string& what) { throw Error(ErrorCode::kParseError, what); }

std::optional<NodeKind> parse_kind(std::string_view s) {
  for (auto k : {NodeKind::kSource, NodeKind::kFuse, NodeKind::kFunction, NodeKind::kSteer,
                 NodeKind::kArchiveSink, NodeKind::kTap}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

size_t config_index(NodeKind kind) {
  switch (kind) {
    case NodeKind::kSource: return 0;
    case NodeKind::kFuse: return 1;
    case NodeKind::kFunction: return 2;
    case NodeKind::kSteer: return 3;
    case NodeKind::kArchiveSink: return 4;
    case NodeKind::kTap: return 5;
  }
  return 0;
}

void allow_keys(const Json& j, std::string_view node, std::initializer_list<std::string_view> keys) {
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) bad_node(node, "unknown key '" + k + "'");
  }
}

NodeSpec node_from_json(const Json& j) {
  if (!j.is_object()) parse_error("node entries must be objects");
  std::string id = j.contains("id") && j.at("id").is_string() ? j.at("id").get<std::string>() : "";
  if (id.empty()) bad_node("?", "missing id");
  if (!j.contains("kind") || !j.at("kind").is_string()) bad_node(id, "missing kind");
  auto kind = parse_kind(j.at("kind").get<std::string>());
  if (!kind) bad_node(id, "unknown kind '" + j.at("kind").get<std::string>() + "'");
  NodeSpec n;
  n.id = id;
  n.kind = *kind;
  try {
    switch (*kind) {
      case NodeKind::kSource: {
        allow_keys(j, id, {"id", "kind", "device"});
        SourceConfig c;
        if (j.contains("device")) c.device = j.at("device").get<std::string>();
        n.config = c;
        break;
      }
      case NodeKind::kFuse: {
        allow_keys(j, id, {"id", "kind", "rule"});
        if (!j.contains("rule")) bad_node(id, "fuse node needs a rule");
        n.config = BatchingRule::from_json(j.at("rule"));
        break;
      }
      case NodeKind::kFunction: {
        allow_keys(j, id, {"id", "kind", "function", "version", "target", "timeout_ms", "args", "window"});
        FunctionNodeConfig c;
        if (!j.contains("function")) bad_node(id, "function node needs a function");
        c.function.name = j.at("function").get<std::string>();
        c.function.version = j.value("version", 1);
        if (!j.contains("target")) bad_node(id, "function node needs an executor target");
        c.target = j.at("target").get<std::string>();
        if (j.contains("timeout_ms")) c.timeout_ms = j.at("timeout_ms").get<int64_t>();
        if (j.contains("args")) c.args = j.at("args");
        if (j.contains("window")) {
          auto w = j.at("window").get<int64_t>();
          if (w < 0) bad_node(id, "window must be >= 0");
          c.window = static_cast<size_t>(w);
        }
        n.config = c;
        break;
      }
      case NodeKind::kSteer: {
        allow_keys(j, id, {"id", "kind", "device", "command_name", "params"});
        SteerConfig c;
        if (!j.contains("device")) bad_node(id, "steer node needs a device");
        if (!j.contains("command_name")) bad_node(id, "steer node needs a command_name");
        c.device = j.at("device").get<std::string>();
        c.command_name = j.at("command_name").get<std::string>();
        if (j.contains("params")) c.params = j.at("params");
        n.config = c;
        break;
      }
      case NodeKind::kArchiveSink:
        allow_keys(j, id, {"id", "kind"});
        n.config = ArchiveSinkConfig{};
        break;
      case NodeKind::kTap: {
        allow_keys(j, id, {"id", "kind", "channel"});
        if (!j.contains("channel")) bad_node(id, "tap node needs a channel");
        n.config = TapConfig{j.at("channel").get<std::string>()};
        break;
      }
    }
  } catch (const Json::exception& e) {
    bad_node(id, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBadNodeConfig) throw;
    bad_node(id, e.what());
  }
  return n;
}

OrderedJson node_to_json(const NodeSpec& n) {
  OrderedJson j;
  j["id"] = n.id;
  j["kind"] = to_string(n.kind);
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, SourceConfig>) {
          j["device"] = c.device;
        } else if constexpr (std::is_same_v<T, BatchingRule>) {
          j["rule"] = c.to_json();
        } else if constexpr (std::is_same_v<T, FunctionNodeConfig>) {
          j["function"] = c.function.name;
          j["version"] = c.function.version;
          j["target"] = c.target;
          if (c.timeout_ms) j["timeout_ms"] = *c.timeout_ms;
          j["args"] = OrderedJson::parse(c.args.dump());
          if (c.window > 0) j["window"] = c.window;
        } else if constexpr (std::is_same_v<T, SteerConfig>) {
          j["device"] = c.device;
          j["command_name"] = c.command_name;
          j["params"] = OrderedJson::parse(c.params.dump());
        } else if constexpr (std::is_same_v<T, TapConfig>) {
          j["channel"] = c.channel;
        }
      },
      n.config);
  return j;
}

void validate_node(const NodeSpec& n, const std::set<std::string, std::less<>>& targets) {
  if (!is_valid_identifier(n.id)) bad_node(n.id, "invalid node id");
  if (n.config.index() != config_index(n.kind)) bad_node(n.id, "config does not match kind");
  switch (n.kind) {
    case NodeKind::kSource: {
      const auto& c = std::get<SourceConfig>(n.config);
      if (c.device != "+" && !is_valid_identifier(c.device)) bad_node(n.id, "invalid device filter");
      break;
    }
    case NodeKind::kFuse:
      try {
        std::get<BatchingRule>(n.config).validate();
      } catch (const Error& e) {
        bad_node(n.id, e.what());
      }
      break;
    case NodeKind::kFunction: {
      const auto& c = std::get<FunctionNodeConfig>(n.config);
      if (!is_valid_name(c.function.name)) bad_node(n.id, "invalid function name");
      if (c.function.version < 1) bad_node(n.id, "function version must be >= 1");
      if (c.target.empty()) bad_node(n.id, "missing executor target");
      if (!targets.contains(c.target)) bad_node(n.id, "unknown executor target '" + c.target + "'");
      if (c.timeout_ms && *c.timeout_ms <= 0) bad_node(n.id, "timeout_ms must be positive");
      if (!c.args.is_object()) bad_node(n.id, "args must be an object");
      break;
    }
    case NodeKind::kSteer: {
      const auto& c = std::get<SteerConfig>(n.config);
      if (!is_valid_identifier(c.device)) bad_node(n.id, "invalid steer device");
      if (!is_valid_name(c.command_name)) bad_node(n.id, "invalid command_name");
      if (!c.params.is_object()) bad_node(n.id, "params must be an object");
      for (const auto& [k, v] : c.params.items()) {
        if (!is_valid_name(k)) bad_node(n.id, "invalid param name '" + k + "'");
        if (!v.is_string() && !v.is_number() && !v.is_boolean()) {
          bad_node(n.id, "param '" + k + "' must be a string, number or bool");
        }
      }
      break;
    }
    case NodeKind::kArchiveSink:
      break;
    case NodeKind::kTap:
      if (!is_valid_identifier(std::get<TapConfig>(n.config).channel)) bad_node(n.id, "invalid channel");
      break;
  }
}

bool is_sink(NodeKind k) {
  return k == NodeKind::kSteer || k == NodeKind::kArchiveSink || k == NodeKind::kTap;
}

}  // namespace

OrderedJson PipelineConfig::to_json() const {
  OrderedJson j;
  j["pipeline_id"] = pipeline_id;
  j["experiment_id"] = experiment_id;
  OrderedJson ex = OrderedJson::array();
  for (const auto& t : executors) {
    OrderedJson tj;
    tj["target_id"] = t.target_id;
    tj["kind"] = to_string(t.kind);
    if (t.kind == TargetKind::kPool) tj["workers"] = t.workers;
    if (t.kind == TargetKind::kSimHpc) {
      tj["dispatch_latency_ms"] = t.dispatch_latency_ms;
      tj["slots"] = t.slots;
    }
    ex.push_back(std::move(tj));
  }
  j["executors"] = std::move(ex);
  OrderedJson nodes_j = OrderedJson::array();
  for (const auto& n : nodes) nodes_j.push_back(node_to_json(n));
  j["nodes"] = std::move(nodes_j);
  OrderedJson edges_j = OrderedJson::array();
  for (const auto& e : edges) {
    OrderedJson ej;
    ej["from"] = e.from;
    ej["to"] = e.to;
    ej["queue_capacity"] = e.queue_capacity;
    ej["policy"] = e.policy == EdgePolicy::kBlock ? "block" : "shed";
    edges_j.push_back(std::move(ej));
  }
  j["edges"] = std::move(edges_j);
  return j;
}

const NodeSpec* PipelineConfig::node(std::string_view id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

PipelineConfig pipeline_from_json(const Json& j) {
  if (!j.is_object()) parse_error("pipeline document must be an object");
  PipelineConfig c;
  try {
    c.pipeline_id = j.at("pipeline_id").get<std::string>();
    c.experiment_id = j.at("experiment_id").get<std::string>();
    if (j.contains("executors")) {
      for (const auto& t : j.at("executors")) {
        try {
          c.executors.push_back(ExecutorTarget::from_json(t));
        } catch (const Error& e) {
          parse_error(std::string("executors: ") + e.what());
        }
      }
    }
    if (!j.at("nodes").is_array()) parse_error("nodes must be an array");
    for (const auto& n : j.at("nodes")) c.nodes.push_back(node_from_json(n));
    if (j.contains("edges")) {
      if (!j.at("edges").is_array()) parse_error("edges must be an array");
      for (const auto& ej : j.at("edges")) {
        EdgeSpec e;
        e.from = ej.at("from").get<std::string>();
        e.to = ej.at("to").get<std::string>();
        if (ej.contains("queue_capacity")) {
          auto cap = ej.at("queue_capacity").get<int64_t>();
          if (cap < 1) bad_node(e.to, "edge from '" + e.from + "': queue_capacity must be >= 1");
          e.queue_capacity = static_cast<size_t>(cap);
        }
        if (ej.contains("policy")) {
          auto p = ej.at("policy").get<std::string>();
          if (p == "block") {
            e.policy = EdgePolicy::kBlock;
          } else if (p == "shed") {
            e.policy = EdgePolicy::kShed;
          } else {
            bad_node(e.to, "edge from '" + e.from + "': unknown policy '" + p + "'");
          }
        }
        c.edges.push_back(std::move(e));
      }
    }
  } catch (const Json::exception& e) {
    parse_error(e.what());
  }
  validate(c);
  return c;
}

PipelineConfig parse_pipeline(std::string_view document) {
  Json j;
  try {
    j = Json::parse(document);
  } catch (const Json::exception& e) {
    parse_error(e.what());
  }
  return pipeline_from_json(j);
}

void validate(const PipelineConfig& c) {
  if (!is_valid_identifier(c.pipeline_id)) parse_error("invalid pipeline_id '" + c.pipeline_id + "'");
  if (!is_valid_identifier(c.experiment_id)) parse_error("invalid experiment_id '" + c.experiment_id + "'");

  std::set<std::string, std::less<>> targets;
  for (const auto& t : c.executors) {
    if (!targets.insert(t.target_id).second) parse_error("duplicate executor target '" + t.target_id + "'");
  }

  // 1. node configs
  for (const auto& n : c.nodes) validate_node(n, targets);

  // 2. unique ids
  std::map<std::string, size_t, std::less<>> index;
  for (size_t i = 0; i < c.nodes.size(); ++i) {
    if (!index.emplace(c.nodes[i].id, i).second) bad_node(c.nodes[i].id, "duplicate node id");
  }

  // 3. edges reference existing nodes
  std::vector<std::vector<size_t>> adj(c.nodes.size());
  std::vector<std::vector<size_t>> radj(c.nodes.size());
  std::set<std::pair<size_t, size_t>> seen;
  for (const auto& e : c.edges) {
    auto f = index.find(e.from);
    auto t = index.find(e.to);
    if (f == index.end() || t == index.end()) {
      throw Error(ErrorCode::kDanglingEdge,
                  "edge '" + e.from + "' -> '" + e.to + "' references an unknown node");
    }
    if (e.queue_capacity < 1) bad_node(e.to, "edge from '" + e.from + "': queue_capacity must be >= 1");
    if (!seen.emplace(f->second, t->second).second) {
      bad_node(e.to, "duplicate edge from '" + e.from + "'");
    }
    adj[f->second].push_back(t->second);
    radj[t->second].push_back(f->second);
  }

  // 4. acyclic
  std::vector<int> color(c.nodes.size(), 0);
  std::vector<size_t> stack;
  std::function<void(size_t)> dfs = [&](size_t u) {
    color[u] = 1;
    stack.push_back(u);
    for (size_t v : adj[u]) {
      if (color[v] == 1) {
        std::string path;
        auto it = std::find(stack.begin(), stack.end(), v);
        for (; it != stack.end(); ++it) path += c.nodes[*it].id + " -> ";
        path += c.nodes[v].id;
        throw Error(ErrorCode::kCycleDetected, path);
      }
      if (color[v] == 0) dfs(v);
    }
    stack.pop_back();
    color[u] = 2;
  };
  for (size_t i = 0; i < c.nodes.size(); ++i) {
    if (color[i] == 0) dfs(i);
  }

  // 5. inbound/outbound rules
  for (size_t i = 0; i < c.nodes.size(); ++i) {
    const auto& n = c.nodes[i];
    if (n.kind == NodeKind::kSource) {
      if (!radj[i].empty()) bad_node(n.id, "source nodes take no inbound edges");
    } else if (radj[i].empty()) {
      bad_node(n.id, "no inbound edge");
    }
    if (is_sink(n.kind) && !adj[i].empty()) bad_node(n.id, std::string(to_string(n.kind)) + " nodes have no outputs");
    if (n.kind == NodeKind::kFuse || n.kind == NodeKind::kArchiveSink) {
      for (size_t from : radj[i]) {
        if (c.nodes[from].kind != NodeKind::kSource) {
          bad_node(n.id, "input '" + c.nodes[from].id + "' is not a source");
        }
      }
    }
  }
}

OrderedJson NodeStatus::to_json() const {
  OrderedJson j;
  j["node_id"] = node_id;
  j["kind"] = to_string(kind);
  j["state"] = to_string(state);
  j["counters"] = {{"in", counters.in}, {"out", counters.out}, {"errors", counters.errors},
                   {"dropped", counters.dropped}};
  j["last_error"] = last_error;
  j["last_activity_ts_us"] = last_activity_ts_us;
  return j;
}

// ---------------------------------------------------------------------------
// TapHub

std::optional<TapEvent> TapHub::Reader::pop(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, timeout, [&] { return !queue_.empty(); })) return std::nullopt;
  TapEvent e = std::move(queue_.front());
  queue_.pop_front();
  return e;
}

size_t TapHub::Reader::size() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

std::shared_ptr<TapHub::Reader> TapHub::subscribe(std::string channel) {
  auto r = std::make_shared<Reader>();
  std::lock_guard lock(mu_);
  readers_.emplace_back(std::move(channel), r);
  return r;
}

void TapHub::publish(const TapEvent& event) {
  std::lock_guard lock(mu_);
  std::erase_if(readers_, [](const auto& p) { return p.second.expired(); });
  for (const auto& [channel, weak] : readers_) {
    if (!channel.empty() && channel != event.channel) continue;
    if (auto r = weak.lock()) {
      {
        std::lock_guard rl(r->mu_);
        r->queue_.push_back(event);
      }
      r->cv_.notify_one();
    }
  }
}

// ---------------------------------------------------------------------------
// runtime

namespace {

struct Record {
  int64_t ts_us = 0;
  std::variant<Envelope, FusedRecord, OrderedJson> body;
};

OrderedJson record_json(const Record& r) {
  if (const auto* e = std::get_if<Envelope>(&r.body)) return to_json(*e);
  if (const auto* f = std::get_if<FusedRecord>(&r.body)) return f->to_json();
  return std::get<OrderedJson>(r.body);
}

class Inbox {
 public:
  size_t add_edge(const EdgeSpec& spec) {
    edges_.push_back({spec.queue_capacity, spec.policy, {}});
    ++open_upstreams_;
    return edges_.size() - 1;
  }

  /// Returns false if the record was shed.
  bool push(size_t edge, Record r) {
    std::unique_lock lock(mu_);
    Edge& e = edges_[edge];
    if (e.queue.size() >= e.capacity) {
      if (e.policy == EdgePolicy::kShed) {
        ++dropped_;
        return false;
      }
      space_.wait(lock, [&] { return e.queue.size() < e.capacity; });
    }
    e.queue.emplace_back(next_++, std::move(r));
    items_.notify_one();
    return true;
  }

  /// Oldest record across edges; nullopt once every upstream has closed and
  /// the queues are empty.
  std::optional<Record> pop() {
    std::unique_lock lock(mu_);
    for (;;) {
      Edge* best = nullptr;
      for (auto& e : edges_) {
        if (!e.queue.empty() && (!best || e.queue.front().first < best->queue.front().first)) best = &e;
      }
      if (best) {
        Record r = std::move(best->queue.front().second);
        best->queue.pop_front();
        space_.notify_all();
        return r;
      }
      if (open_upstreams_ == 0) return std::nullopt;
      items_.wait(lock);
    }
  }

  void close_upstream() {
    std::lock_guard lock(mu_);
    if (open_upstreams_ > 0) --open_upstreams_;
    items_.notify_all();
  }

  uint64_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

 private:
  struct Edge {
    size_t capacity;
    EdgePolicy policy;
    std::deque<std::pair<uint64_t, Record>> queue;
  };
  mutable std::mutex mu_;
  std::condition_variable items_;
  std::condition_variable space_;
  std::vector<Edge> edges_;
  uint64_t next_ = 0;
  size_t open_upstreams_ = 0;
  uint64_t dropped_ = 0;
};

}  // namespace

struct Pipeline::Impl {
  struct Outlet {
    size_t node;
    size_t edge;
  };

  struct Node {
    NodeSpec spec;
    Inbox inbox;
    std::vector<Outlet> outlets;
    mutable std::mutex status_mu;
    NodeStatus status;
    SubscriptionPtr sub;                   // sources
    std::unique_ptr<FusionEngine> fusion;  // fuse
    std::deque<OrderedJson> window;        // function
    uint64_t seq = 0;                      // function results / steer commands
    std::jthread thread;
  };

  PipelineConfig config;
  PipelineDeps deps;
  std::vector<std::unique_ptr<Node>> nodes;
  std::mutex shutdown_mu;
  bool stopped = false;

  Impl(PipelineConfig c, PipelineDeps d) : config(std::move(c)), deps(d) {}

  void set_state(Node& n, NodeState state, std::string error = {}) {
    bool changed;
    {
      std::lock_guard lock(n.status_mu);
      changed = n.status.state != state;
      n.status.state = state;
      if (!error.empty()) n.status.last_error = std::move(error);
    }
    if (changed) {
      OrderedJson ev;
      ev["node"] = n.spec.id;
      ev["state"] = to_string(state);
      ev["ts_us"] = deps.clock.now_us();
      try {
        deps.transport.publish(topic_for(TopicKind::kEvents, config.experiment_id), ev.dump());
      } catch (const Error& e) {
        spdlog::debug("pipeline: event publish failed: {}", e.what());
      }
    }
  }

  void count_in(Node& n) {
    std::lock_guard lock(n.status_mu);
    n.status.counters.in += 1;
    n.status.last_activity_ts_us = deps.clock.now_us();
  }

  void count_out(Node& n) {
    std::lock_guard lock(n.status_mu);
    n.status.counters.out += 1;
  }

  void fail(Node& n, const std::string& what) {
    {
      std::lock_guard lock(n.status_mu);
      n.status.counters.errors += 1;
    }
    spdlog::warn("pipeline {}: node {}: {}", config.pipeline_id, n.spec.id, what);
    set_state(n, NodeState::kFailed, what);
  }

  void ok(Node& n) {
    NodeState s;
    {
      std::lock_guard lock(n.status_mu);
      s = n.status.state;
    }
    if (s != NodeState::kRunning) set_state(n, NodeState::kRunning);
  }

  void forward(Node& n, const Record& r) {
    for (const auto& o : n.outlets) nodes[o.node]->inbox.push(o.edge, r);
    count_out(n);
  }

  void run_source(Node& n, std::stop_token stop) {
    auto handle = [&](const Delivery& d) {
      count_in(n);
      try {
        Envelope e = decode(d.payload);
        Record r{e.ts_us, std::move(e)};
        forward(n, r);
        ok(n);
      } catch (const Error& e) {
        fail(n, e.what());
      }
    };
    while (!stop.stop_requested()) {
      if (auto d = n.sub->pop(std::chrono::milliseconds(20))) handle(*d);
    }
    n.sub->close();
    while (auto d = n.sub->try_pop()) handle(*d);
  }

  void process(Node& n, Record r) {
    count_in(n);
    try {
      switch (n.spec.kind) {
        case NodeKind::kFuse: process_fuse(n, r); break;
        case NodeKind::kFunction: process_function(n, r); break;
        case NodeKind::kSteer: process_steer(n, r); break;
        case NodeKind::kArchiveSink: process_archive(n, r); break;
        case NodeKind::kTap: process_tap(n, r); break;
        case NodeKind::kSource: break;
      }
      ok(n);
    } catch (const Error& e) {
      fail(n, e.what());
    } catch (const std::exception& e) {
      fail(n, e.what());
    }
  }

  void process_fuse(Node& n, const Record& r) {
    const auto* e = std::get_if<Envelope>(&r.body);
    if (!e) throw Error(ErrorCode::kInvalidArgument, "fuse input is not an envelope");
    if (!n.fusion->accepts_device(e->device_id)) return;
    n.fusion->ingest(*e);
    for (auto& rec : n.fusion->take()) {
      int64_t ts = rec.ts_us;
      forward(n, Record{ts, std::move(rec)});
    }
  }

  void flush_fuse(Node& n) {
    for (auto& rec : n.fusion->drain()) {
      int64_t ts = rec.ts_us;
      forward(n, Record{ts, std::move(rec)});
    }
  }

  void process_function(Node& n, const Record& r) {
    const auto& c = std::get<FunctionNodeConfig>(n.spec.config);
    OrderedJson payload;
    payload["args"] = OrderedJson::parse(c.args.dump());
    if (c.window > 0) {
      n.window.push_back(record_json(r));
      while (n.window.size() > c.window) n.window.pop_front();
      OrderedJson inputs = OrderedJson::array();
      for (const auto& x : n.window) inputs.push_back(x);
      payload["inputs"] = std::move(inputs);
    } else {
      payload["input"] = record_json(r);
    }
    auto handle = deps.executor.invoke(c.function, payload.dump(), c.target, c.timeout_ms);
    if (!handle.terminal()) {
      int64_t limit = c.timeout_ms.value_or(30'000) + 5'000;
      handle = deps.executor.wait(handle.task_id, std::chrono::milliseconds(limit));
    }
    try {
      deps.executor.release(handle.task_id);
    } catch (const Error&) {
    }
    if (handle.state != TaskState::kDone) {
      auto code = handle.error_code.value_or(ErrorCode::kFunctionError);
      std::string what = handle.error.empty() ? std::string(to_string(handle.state)) : handle.error;
      // Executor errors already carry the code prefix.
      std::string prefix = std::string(to_string(code)) + ": ";
      if (what.starts_with(prefix)) what.erase(0, prefix.size());
      throw Error(code, what);
    }
    OrderedJson result = OrderedJson::parse(handle.result);
    int64_t ts = r.ts_us;
    if (result.is_object() && result.contains("ts_us") && result.at("ts_us").is_number_integer()) {
      ts = result.at("ts_us").get<int64_t>();
    }
    OrderedJson msg;
    msg["node"] = n.spec.id;
    msg["ts_us"] = ts;
    msg["seq"] = n.seq++;
    msg["result"] = result;
    try {
      deps.transport.publish(topic_for(TopicKind::kResults, config.experiment_id, n.spec.id), msg.dump());
    } catch (const Error& e) {
      spdlog::warn("pipeline: results publish failed for {}: {}", n.spec.id, e.what());
    }
    forward(n, Record{ts, std::move(result)});
  }

  void process_steer(Node& n, const Record& r) {
    const auto& c = std::get<SteerConfig>(n.spec.config);
    OrderedJson input = record_json(r);
    ControlMessage m;
    m.experiment_id = config.experiment_id;
    m.device_id = c.device;
    m.seq = n.seq;
    m.ts_us = deps.clock.now_us();
    m.command_name = c.command_name;
    for (const auto& [k, v] : c.params.items()) {
      if (v.is_string()) {
        auto s = v.get<std::string>();
        if (s.size() > 3 && s.starts_with("${") && s.ends_with("}")) {
          auto field = s.substr(2, s.size() - 3);
          if (!input.is_object() || !input.contains(field)) {
            throw Error(ErrorCode::kInvalidArgument, "input has no field '" + field + "'");
          }
          const auto& x = input.at(field);
          if (x.is_number()) {
            m.params[k] = x.get<double>();
          } else if (x.is_boolean()) {
            m.params[k] = x.get<bool>();
          } else if (x.is_string()) {
            m.params[k] = x.get<std::string>();
          } else {
            throw Error(ErrorCode::kInvalidArgument, "field '" + field + "' is not a scalar");
          }
          continue;
        }
        m.params[k] = s;
      } else if (v.is_boolean()) {
        m.params[k] = v.get<bool>();
      } else {
        m.params[k] = v.get<double>();
      }
    }
    deps.transport.publish(topic_for(TopicKind::kControl, config.experiment_id, c.device), encode(m));
    ++n.seq;
    count_out(n);
  }

  void process_archive(Node& n, const Record& r) {
    const auto* e = std::get_if<Envelope>(&r.body);
    if (!e) throw Error(ErrorCode::kInvalidArgument, "archive input is not an envelope");
    deps.archive->append(*e);
    count_out(n);
  }

  void process_tap(Node& n, const Record& r) {
    const auto& c = std::get<TapConfig>(n.spec.config);
    if (deps.taps) deps.taps->publish({c.channel, n.spec.id, r.ts_us, record_json(r)});
    count_out(n);
  }

  void run_node(Node& n, std::stop_token stop) {
    if (n.spec.kind == NodeKind::kSource) {
      run_source(n, stop);
    } else {
      while (auto r = n.inbox.pop()) process(n, std::move(*r));
      if (n.fusion) {
        try {
          flush_fuse(n);
        } catch (const Error& e) {
          fail(n, e.what());
        }
      }
    }
    for (const auto& o : n.outlets) nodes[o.node]->inbox.close_upstream();
  }
};

Pipeline::Pipeline(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

std::unique_ptr<Pipeline> Pipeline::start(PipelineConfig config, PipelineDeps deps) {
  validate(config);
  bool has_archive = std::any_of(config.nodes.begin(), config.nodes.end(),
                                 [](const NodeSpec& n) { return n.kind == NodeKind::kArchiveSink; });
  if (has_archive && !deps.archive) {
    throw Error(ErrorCode::kInvalidArgument, "pipeline has an archive_sink but no archive writer");
  }
  for (const auto& t : config.executors) {
    if (!deps.executor.has_target(t.target_id)) deps.executor.add_target(t);
  }

  auto impl = std::make_unique<Impl>(std::move(config), deps);
  std::map<std::string, size_t, std::less<>> index;
  for (const auto& spec : impl->config.nodes) {
    auto n = std::make_unique<Impl::Node>();
    n->spec = spec;
    n->status.node_id = spec.id;
    n->status.kind = spec.kind;
    if (spec.kind == NodeKind::kFuse) {
      n->fusion = std::make_unique<FusionEngine>(std::get<BatchingRule>(spec.config));
    }
    index.emplace(spec.id, impl->nodes.size());
    impl->nodes.push_back(std::move(n));
  }
  for (const auto& e : impl->config.edges) {
    size_t from = index.at(e.from), to = index.at(e.to);
    size_t edge = impl->nodes[to]->inbox.add_edge(e);
    impl->nodes[from]->outlets.push_back({to, edge});
  }
  for (auto& n : impl->nodes) {
    if (n->spec.kind == NodeKind::kSource) {
      const auto& c = std::get<SourceConfig>(n->spec.config);
      std::string filter = c.device == "+"
                               ? "mdml/v1/" + impl->config.experiment_id + "/data/+"
                               : topic_for(TopicKind::kData, impl->config.experiment_id, c.device);
      n->sub = deps.transport.subscribe(filter);
    }
  }
  Impl* raw = impl.get();
  for (auto& n : impl->nodes) {
    Impl::Node* node = n.get();
    node->thread = std::jthread([raw, node](std::stop_token stop) { raw->run_node(*node, stop); });
  }
  return std::unique_ptr<Pipeline>(new Pipeline(std::move(impl)));
}

Pipeline::~Pipeline() { shutdown(); }

const PipelineConfig& Pipeline::config() const noexcept { return impl_->config; }

std::vector<NodeStatus> Pipeline::status() const {
  std::vector<NodeStatus> out;
  for (const auto& n : impl_->nodes) {
    std::lock_guard lock(n->status_mu);
    NodeStatus s = n->status;
    s.counters.dropped = n->inbox.dropped();
    out.push_back(std::move(s));
  }
  return out;
}

void Pipeline::shutdown() {
  std::lock_guard lock(impl_->shutdown_mu);
  if (impl_->stopped) return;
  impl_->stopped = true;
  for (auto& n : impl_->nodes) {
    if (n->spec.kind == NodeKind::kSource) n->thread.request_stop();
  }
  for (auto& n : impl_->nodes) {
    if (n->thread.joinable()) n->thread.join();
  }
  for (auto& n : impl_->nodes) impl_->set_state(*n, NodeState::kStopped);
}

}  // namespace mdml
