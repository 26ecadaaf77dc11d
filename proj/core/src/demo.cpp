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

#include "mdml/demo.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>

#include "mdml/archive.hpp"
#include "mdml/error.hpp"
#include "mdml/executor.hpp"
#include "mdml/gateway.hpp"
#include "mdml/topic.hpp"
#include "mdml/transport.hpp"

namespace mdml {

void DemoOptions::validate() const {
  require_identifier(experiment_id, "experiment_id");
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) bad("duration must be positive");
  if (!(u0 >= 0.0 && u0 <= 1.0)) bad("u0 must be in [0, 1]");
  if (!(cv_max > 0.0)) bad("cv_max must be positive");
  if (!(step_size > 0.0)) bad("step size must be positive");
  if (plif_period_ms <= 0 || spectro_period_ms <= 0 || psd_period_ms <= 0) bad("periods must be positive");
  if (batch_ticks == 0) bad("batch_ticks must be positive");
  if (gateway_port && !tokens_file) bad("the gateway needs a tokens file");
  if (lockstep_timeout.count() <= 0) bad("lockstep timeout must be positive");
}

uint64_t DemoOptions::ticks() const {
  return static_cast<uint64_t>(std::llround(duration_s * 1000.0 / static_cast<double>(plif_period_ms)));
}

PipelineConfig demo_pipeline(const DemoOptions& o) {
  PipelineConfig c;
  c.pipeline_id = "flame-steering";
  c.experiment_id = o.experiment_id;
  c.executors.push_back({"local", TargetKind::kInline});
  c.executors.push_back({"workers", TargetKind::kPool, 2});

  auto add = [&](std::string id, NodeKind kind, NodeConfig cfg) {
    c.nodes.push_back({std::move(id), kind, std::move(cfg)});
  };
  auto edge = [&](std::string from, std::string to) { c.edges.push_back({std::move(from), std::move(to)}); };

  Json monitor_args = {{"cv_max", o.cv_max}};
  add("plif", NodeKind::kSource, SourceConfig{"plif"});
  add("monitor", NodeKind::kFunction, FunctionNodeConfig{{"stability_index", 1}, "local", {}, monitor_args, 0});
  add("stability", NodeKind::kTap, TapConfig{"stability"});
  edge("plif", "monitor");
  edge("monitor", "stability");

  if (o.controller) {
    BatchingRule batch;
    batch.kind = RuleKind::kCount;
    batch.devices = {"plif"};
    batch.n = o.batch_ticks;
    add("batch", NodeKind::kFuse, batch);
    add("analyze", NodeKind::kFunction, FunctionNodeConfig{{"stability_index", 1}, "workers", {}, monitor_args, 0});
    add("control", NodeKind::kFunction,
        FunctionNodeConfig{{"hill_climb", 1}, "workers", {}, Json{{"step_size", o.step_size}}, 2});
    add("steer", NodeKind::kSteer,
        SteerConfig{"burner", "set_u", Json{{"u", "${u}"}, {"ref_ts_us", "${ref_ts_us}"}}});
    edge("plif", "batch");
    edge("batch", "analyze");
    edge("analyze", "control");
    edge("control", "steer");
  }

  if (o.archive_root) {
    add("all", NodeKind::kSource, SourceConfig{"+"});
    add("archive", NodeKind::kArchiveSink, ArchiveSinkConfig{});
    edge("all", "archive");
  }
  validate(c);
  return c;
}

double DemoResult::tail_mean(size_t n) const {
  if (ticks.empty()) return std::numeric_limits<double>::quiet_NaN();
  n = std::min(n, ticks.size());
  double total = 0.0;
  for (size_t i = ticks.size() - n; i < ticks.size(); ++i) total += ticks[i].index;
  return total / static_cast<double>(n);
}

namespace {

using Steady = std::chrono::steady_clock;

std::chrono::milliseconds remaining(Steady::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Steady::now());
  return std::max(left, std::chrono::milliseconds(0));
}

}  // namespace

DemoResult run_demo(const DemoOptions& o, std::stop_token stop, GatewayReady on_gateway) {
  o.validate();
  const auto wall_start = Steady::now();
  Clock& clock = SystemClock::instance();
  InprocBus bus;

  FunctionRegistry registry;
  register_builtins(registry);
  Executor executor(registry, clock);

  std::unique_ptr<ArchiveWriter> archive;
  if (o.archive_root) archive = std::make_unique<ArchiveWriter>(*o.archive_root, o.experiment_id, ArchiveOptions{}, clock);

  std::unique_ptr<Gateway> gateway;
  if (o.gateway_port) {
    GatewayOptions go;
    go.port = *o.gateway_port;
    go.experiments = {o.experiment_id};
    gateway = std::make_unique<Gateway>(bus, TokenTable::load(*o.tokens_file), go, clock);
  }

  auto monitor_sub = bus.subscribe(topic_for(TopicKind::kResults, o.experiment_id, "monitor"));
  SubscriptionPtr capture_sub;
  if (o.capture_data) capture_sub = bus.subscribe("mdml/v1/" + o.experiment_id + "/data/+");

  TapHub taps;
  auto pipeline = Pipeline::start(demo_pipeline(o), PipelineDeps{bus, executor, clock, archive.get(), &taps});
  if (gateway) {
    gateway->set_status_provider([p = pipeline.get()] { return p->status(); });
    gateway->start();
    if (on_gateway) on_gateway(gateway->port());
  }

  SimulatorConfig sc;
  sc.experiment_id = o.experiment_id;
  sc.params.seed = o.seed;
  sc.params.sigma = o.sigma;
  sc.params.cv_max = o.cv_max;
  sc.params.plif_period_ms = o.plif_period_ms;
  sc.params.spectro_period_ms = o.spectro_period_ms;
  sc.params.psd_period_ms = o.psd_period_ms;
  sc.u0 = o.u0;
  sc.t0_us = o.t0_us;
  sc.ticks = o.ticks();
  sc.listen_control = true;
  sc.pace = o.pace;
  Simulator sim(sc, bus, clock);
  // Subscribed after the simulator: in-process dispatch follows subscription
  // order, so once this queue holds a command the simulator's does too.
  auto control_sub = bus.subscribe(topic_for(TopicKind::kControl, o.experiment_id, "burner"));

  DemoResult result;
  result.ticks.reserve(sc.ticks);
  // Lockstep: the next tick waits until this tick's frame is scored and, on
  // controller ticks, until the resulting set_u is on the control topic.
  sim.set_after_tick([&](const SimState& st, int64_t ts) {
    DemoTick t{st.k, ts, st.u, st.s, std::numeric_limits<double>::quiet_NaN()};
    auto deadline = Steady::now() + o.lockstep_timeout;
    for (;;) {
      auto d = monitor_sub->pop(remaining(deadline));
      if (!d) {
        ++result.lockstep_timeouts;
        spdlog::warn("demo: no stability result for tick {}", st.k);
        break;
      }
      auto msg = Json::parse(d->payload, nullptr, false);
      if (msg.is_object() && msg.value("ts_us", int64_t{-1}) == ts) {
        t.index = msg.at("result").at("index").get<double>();
        break;
      }
    }
    if (o.controller && (st.k + 1) % o.batch_ticks == 0) {
      for (;;) {
        auto d = control_sub->pop(remaining(deadline));
        if (!d) {
          ++result.lockstep_timeouts;
          spdlog::warn("demo: no control command for tick {}", st.k);
          break;
        }
        try {
          auto m = decode_control(d->payload);
          auto it = m.params.find("ref_ts_us");
          if (it != m.params.end() && std::holds_alternative<double>(it->second) &&
              static_cast<int64_t>(std::get<double>(it->second)) == ts) {
            break;
          }
        } catch (const Error&) {
        }
      }
    }
    if (capture_sub) {
      while (auto d = capture_sub->try_pop()) result.data.push_back(std::move(d->payload));
    }
    result.ticks.push_back(t);
  });

  sim.run(stop);
  result.controls_applied = sim.controls_applied();

  pipeline->shutdown();
  result.nodes = pipeline->status();
  if (gateway) gateway->stop();
  if (archive) {
    result.archive_dir = archive->dir();
    archive->close();
  }
  if (capture_sub) {
    while (auto d = capture_sub->try_pop()) result.data.push_back(std::move(d->payload));
  }
  result.wall_seconds = std::chrono::duration<double>(Steady::now() - wall_start).count();
  return result;
}

}  // namespace mdml
