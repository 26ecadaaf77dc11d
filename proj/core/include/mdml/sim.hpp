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

#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <stop_token>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mdml/clock.hpp"
#include "mdml/envelope.hpp"
#include "mdml/executor.hpp"
#include "mdml/transport.hpp"

namespace mdml {

/// Flame model and sensor cadence. The flame is a quadratic response surface
/// around u_opt with first-order relaxation and Gaussian process noise.
struct SimParams {
  double u_opt = 0.5;
  double beta = 4.0;
  double alpha = 0.2;
  double sigma = 0.02;
  int64_t plif_period_ms = 50;
  int64_t spectro_period_ms = 5000;
  int64_t psd_period_ms = 5000;
  int frame_width = 16;
  int frame_height = 16;
  double cv_max = 0.5;
  uint64_t seed = 0;
  bool sensor_noise = true;  // spectroscopy / psd measurement noise

  /// Throws kInvalidArgument.
  void validate() const;
  size_t frame_pixels() const { return static_cast<size_t>(frame_width) * frame_height; }
};

struct SimState {
  double s = 0.0;
  double u = 0.0;
  uint64_t k = 0;

  bool operator==(const SimState&) const = default;
};

double s_target(double u, const SimParams& p);

/// Starts at the open-loop steady state for u0.
SimState initial_state(double u0, const SimParams& p);

/// One relaxation step. The noise draw is keyed on the new step index.
SimState step(const SimState& state, const SimParams& p);

std::vector<double> plif_frame(const SimState& state, const SimParams& p);

inline constexpr std::string_view kFrameUnit = "base64:f64le";

std::string encode_frame(std::span<const double> pixels);
/// Throws kInvalidArgument.
std::vector<double> decode_frame(std::string_view b64);

struct EmitContext {
  std::string experiment_id;
  std::string device_id;
  uint64_t seq = 0;
  int64_t ts_us = 0;
};

/// Rows envelope: s_true, u, frame (base64 little-endian f64 pixels).
Envelope emit_plif(const SimState& state, const SimParams& p, const EmitContext& ctx);
/// One row of 64 bins b00..b63.
Envelope emit_spectroscopy(const SimState& state, const SimParams& p, const EmitContext& ctx);
/// One row: gm_nm, gsd.
Envelope emit_psd(const SimState& state, const SimParams& p, const EmitContext& ctx);

/// 1 - min(1, cv / cv_max) with cv the population coefficient of variation.
/// Throws kEmptyFrame, kZeroMean, kInvalidArgument (cv_max <= 0).
double stability_index(std::span<const double> frame, double cv_max);

/// Hill climber over (u, index) history, oldest first.
/// Throws kEmptyHistory, kInvalidArgument.
double controller_step(std::span<const std::pair<double, double>> history, double step_size,
                       double lower = 0.0, double upper = 1.0);

/// identity@1, stability_index@1, hill_climb@1.
void register_builtins(FunctionRegistry& registry);

struct SimulatorConfig {
  SimParams params;
  std::string experiment_id = "fsp-demo";
  std::string plif_device = "plif";
  std::string spectro_device = "spectro";
  std::string psd_device = "psd";
  std::string control_device = "burner";
  double u0 = 0.9;
  int64_t t0_us = -1;   // first tick timestamp; < 0 means clock time at start
  uint64_t ticks = 0;   // 0 runs until stopped
  bool listen_control = false;
  bool pace = true;     // sleep until each tick's timestamp
};

/// Publishes the instrument's streams through a transport. set_u commands on
/// the control topic take effect at the next step.
class Simulator {
 public:
  /// Called after each tick's envelopes are published. Blocking here holds
  /// the next tick back.
  using TickHook = std::function<void(const SimState& state, int64_t ts_us)>;

  Simulator(SimulatorConfig config, Transport& transport, Clock& clock = SystemClock::instance());

  void set_after_tick(TickHook hook) { after_tick_ = std::move(hook); }

  /// Runs ticks until `config.ticks` are done or `stop` fires. Returns the
  /// number of ticks emitted.
  uint64_t run(std::stop_token stop = {});

  SimState state() const;
  uint64_t controls_applied() const { return controls_applied_.load(); }

 private:
  void emit_tick(int64_t ts_us);
  void apply_controls();

  SimulatorConfig config_;
  Transport& transport_;
  Clock& clock_;
  SubscriptionPtr control_sub_;
  TickHook after_tick_;

  mutable std::mutex mu_;
  SimState state_;
  bool started_ = false;
  uint64_t plif_seq_ = 0;
  uint64_t spectro_seq_ = 0;
  uint64_t psd_seq_ = 0;
  std::atomic<uint64_t> controls_applied_{0};
};

}  // namespace mdml
