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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "mdml/pipeline.hpp"
#include "mdml/sim.hpp"

namespace mdml {

/// The flame-steering scenario in one process: in-process bus, simulator,
/// monitoring and control pipeline, optional archive and gateway.
struct DemoOptions {
  std::string experiment_id = "fsp-demo";
  uint64_t seed = 42;
  double sigma = 0.02;
  double u0 = 0.9;
  double duration_s = 60.0;
  int64_t plif_period_ms = 50;
  int64_t spectro_period_ms = 5000;
  int64_t psd_period_ms = 5000;
  double cv_max = 1.0;
  double step_size = 0.05;
  uint64_t batch_ticks = 10;  // controller acts once per batch
  bool controller = true;
  bool pace = true;
  int64_t t0_us = -1;  // < 0: clock time at start

  std::optional<std::filesystem::path> archive_root;  // records under root/experiment_id
  std::optional<uint16_t> gateway_port;               // 0 picks a free port
  std::optional<std::filesystem::path> tokens_file;   // required with a gateway

  bool capture_data = false;  // keep every published data envelope's bytes

  /// Max real time to wait for the pipeline to catch up with one tick.
  std::chrono::milliseconds lockstep_timeout{10'000};

  /// Throws kInvalidArgument.
  void validate() const;
  uint64_t ticks() const;
};

/// source -> monitor -> tap for every frame; with the controller also
/// source -> fuse(count) -> stability_index -> hill_climb -> steer.
PipelineConfig demo_pipeline(const DemoOptions& options);

struct DemoTick {
  uint64_t k = 0;
  int64_t ts_us = 0;
  double u = 0.0;
  double s = 0.0;
  double index = 0.0;
};

struct DemoResult {
  std::vector<DemoTick> ticks;
  std::vector<std::string> data;  // with capture_data
  uint64_t controls_applied = 0;
  uint64_t lockstep_timeouts = 0;
  std::vector<NodeStatus> nodes;
  std::optional<std::filesystem::path> archive_dir;
  double wall_seconds = 0.0;

  /// Mean index over the last `n` ticks (all ticks if fewer).
  double tail_mean(size_t n) const;
};

/// Called once the gateway is listening, with its port.
using GatewayReady = std::function<void(uint16_t port)>;

/// Runs until `duration_s` of simulated time or `stop`.
DemoResult run_demo(const DemoOptions& options, std::stop_token stop = {}, GatewayReady on_gateway = {});

}  // namespace mdml
