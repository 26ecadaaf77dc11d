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

#include "mdml/sim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "mdml/base64.hpp"
#include "mdml/rng.hpp"
#include "mdml/topic.hpp"

namespace mdml {

static_assert(std::endian::native == std::endian::little, "frame codec assumes little-endian");

namespace {

double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

constexpr int kSpectroBins = 64;

// True when a sensor with period `period_ms` is due at tick k of the PLIF clock.
bool due(uint64_t k, int64_t plif_ms, int64_t period_ms) {
  if (k == 0) return true;
  auto now = static_cast<int64_t>(k) * plif_ms;
  return now / period_ms != (now - plif_ms) / period_ms;
}

}  // namespace

void SimParams::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, m); };
  if (!(alpha > 0.0 && alpha <= 1.0)) bad("alpha must be in (0, 1]");
  if (!(beta >= 0.0)) bad("beta must be >= 0");
  if (!(sigma >= 0.0)) bad("sigma must be >= 0");
  if (!(u_opt >= 0.0 && u_opt <= 1.0)) bad("u_opt must be in [0, 1]");
  if (!(cv_max > 0.0)) bad("cv_max must be > 0");
  if (plif_period_ms <= 0 || spectro_period_ms <= 0 || psd_period_ms <= 0) {
    bad("periods must be > 0");
  }
  if (frame_width <= 0 || frame_height <= 0) bad("frame size must be positive");
}

double s_target(double u, const SimParams& p) {
  double d = u - p.u_opt;
  return std::max(0.0, 1.0 - p.beta * (d * d));
}

SimState initial_state(double u0, const SimParams& p) {
  SimState s;
  s.u = clamp01(u0);
  s.s = s_target(s.u, p);
  return s;
}

SimState step(const SimState& state, const SimParams& p) {
  SimState next = state;
  next.k = state.k + 1;
  double xi = RngStream(p.seed, "step").normal(next.k);
  next.s = clamp01(state.s + p.alpha * (s_target(state.u, p) - state.s) + p.sigma * xi);
  return next;
}

std::vector<double> plif_frame(const SimState& state, const SimParams& p) {
  const size_t n = p.frame_pixels();
  RngStream rng(p.seed, "plif");
  std::vector<double> frame(n);
  for (size_t i = 0; i < n; ++i) {
    frame[i] = 100.0 * (1.0 + (1.0 - state.s) * rng.normal(state.k * n + i));
  }
  return frame;
}

std::string encode_frame(std::span<const double> pixels) {
  std::string bytes(pixels.size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), pixels.data(), bytes.size());
  return base64_encode(std::string_view(bytes));
}

std::vector<double> decode_frame(std::string_view b64) {
  auto bytes = base64_decode(b64);
  if (!bytes) throw Error(ErrorCode::kInvalidArgument, "frame is not valid base64");
  if (bytes->size() % sizeof(double) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "frame length is not a multiple of 8");
  }
  std::vector<double> out(bytes->size() / sizeof(double));
  std::memcpy(out.data(), bytes->data(), bytes->size());
  return out;
}

Envelope emit_plif(const SimState& state, const SimParams& p, const EmitContext& ctx) {
  Envelope e;
  e.experiment_id = ctx.experiment_id;
  e.device_id = ctx.device_id;
  e.seq = ctx.seq;
  e.ts_us = ctx.ts_us;
  std::string unit = std::string(kFrameUnit) + ":" + std::to_string(p.frame_width) + "x" +
                     std::to_string(p.frame_height);
  e.schema = {{"s_true", FieldType::kF64, ""}, {"u", FieldType::kF64, ""}, {"frame", FieldType::kStr, unit}};
  auto frame = plif_frame(state, p);
  e.payload = RowSet{Row{state.s, state.u, encode_frame(frame)}};
  return e;
}

Envelope emit_spectroscopy(const SimState& state, const SimParams& p, const EmitContext& ctx) {
  Envelope e;
  e.experiment_id = ctx.experiment_id;
  e.device_id = ctx.device_id;
  e.seq = ctx.seq;
  e.ts_us = ctx.ts_us;
  RngStream rng(p.seed, "spectro");
  Row row;
  for (int j = 0; j < kSpectroBins; ++j) {
    char name[8];
    std::snprintf(name, sizeof name, "b%02d", j);
    e.schema.push_back({name, FieldType::kF64, "au"});
    double d = j - 32;
    double v = 10.0 * std::exp(-(d * d) / 128.0) * (0.5 + 0.5 * state.s);
    if (p.sensor_noise) v += 0.1 * rng.normal(state.k * kSpectroBins + j);
    row.emplace_back(v);
  }
  e.payload = RowSet{std::move(row)};
  return e;
}

Envelope emit_psd(const SimState& state, const SimParams& p, const EmitContext& ctx) {
  Envelope e;
  e.experiment_id = ctx.experiment_id;
  e.device_id = ctx.device_id;
  e.seq = ctx.seq;
  e.ts_us = ctx.ts_us;
  e.schema = {{"gm_nm", FieldType::kF64, "nm"}, {"gsd", FieldType::kF64, ""}};
  double gm = 20.0 + 30.0 * (1.0 - state.s);
  double gsd = 1.3 + 0.4 * (1.0 - state.s);
  if (p.sensor_noise) {
    RngStream rng(p.seed, "psd");
    gm += 0.01 * gm * rng.normal(2 * state.k);
    gsd += 0.01 * gsd * rng.normal(2 * state.k + 1);
  }
  e.payload = RowSet{Row{gm, gsd}};
  return e;
}

double stability_index(std::span<const double> frame, double cv_max) {
  if (frame.empty()) throw Error(ErrorCode::kEmptyFrame, "frame has no pixels");
  if (!(cv_max > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cv_max must be > 0");
  const double n = static_cast<double>(frame.size());
  double total = 0.0;
  for (double x : frame) total += x;
  double mean = total / n;
  if (mean == 0.0) throw Error(ErrorCode::kZeroMean, "frame mean is zero");
  double acc = 0.0;
  for (double x : frame) {
    double d = x - mean;
    acc += d * d;
  }
  double cv = std::sqrt(acc / n) / mean;
  return 1.0 - std::min(1.0, cv / cv_max);
}

double controller_step(std::span<const std::pair<double, double>> history, double step_size,
                       double lower, double upper) {
  if (history.empty()) throw Error(ErrorCode::kEmptyHistory, "controller needs one observation");
  if (!(step_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "step_size must be > 0");
  if (!(lower <= upper)) throw Error(ErrorCode::kInvalidArgument, "lower bound above upper");
  auto clamp = [&](double x) { return x < lower ? lower : (x > upper ? upper : x); };
  auto [u_now, i_now] = history.back();
  if (history.size() < 2) return clamp(u_now + step_size);
  auto [u_prev, i_prev] = history[history.size() - 2];
  double d = (i_now - i_prev) * (u_now - u_prev) >= 0.0 ? 1.0 : -1.0;
  return clamp(u_now + d * step_size);
}

// ---------------------------------------------------------------------------
// builtins

namespace {

Json parse_payload(std::string_view payload) {
  try {
    return Json::parse(payload);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

double arg_double(const Json& args, const char* key, double fallback) {
  if (!args.is_object() || !args.contains(key)) return fallback;
  const Json& v = args.at(key);
  if (!v.is_number()) throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be a number");
  return v.get<double>();
}

// Looks up a named column in either an envelope (last row wins) or a fused
// record (first device that has it; aggregates yield their last value).
const Json* find_value(const Json& input, std::string_view field, Json& scratch) {
  if (input.contains("schema") && input.contains("payload")) {
    const Json& schema = input.at("schema");
    const Json& rows = input.at("payload");
    if (!rows.is_array() || rows.empty()) return nullptr;
    for (size_t i = 0; i < schema.size(); ++i) {
      if (schema[i].value("name", "") == field) {
        scratch = rows.back().at(i);
        return &scratch;
      }
    }
    return nullptr;
  }
  if (input.contains("devices")) {
    for (const auto& [dev, cell] : input.at("devices").items()) {
      if (!cell.value("present", false) || !cell.contains("values")) continue;
      const Json& values = cell.at("values");
      auto it = values.find(std::string(field));
      if (it == values.end()) continue;
      scratch = it->is_object() && it->contains("last") ? it->at("last") : *it;
      return &scratch;
    }
  }
  if (input.contains(std::string(field))) {
    scratch = input.at(std::string(field));
    return &scratch;
  }
  return nullptr;
}

const Json& single_input(const Json& req) {
  if (req.contains("input")) return req.at("input");
  if (req.contains("inputs") && req.at("inputs").is_array() && !req.at("inputs").empty()) {
    return req.at("inputs").back();
  }
  throw Error(ErrorCode::kInvalidArgument, "payload has no input");
}

std::string builtin_stability_index(std::string_view payload, const FunctionContext&) {
  Json req = parse_payload(payload);
  const Json& input = single_input(req);
  double cv_max = arg_double(req.value("args", Json::object()), "cv_max", SimParams{}.cv_max);
  Json scratch;
  const Json* frame = find_value(input, "frame", scratch);
  if (!frame || !frame->is_string()) throw Error(ErrorCode::kEmptyFrame, "input has no frame field");
  auto pixels = decode_frame(frame->get<std::string>());
  OrderedJson out;
  out["ts_us"] = input.value("ts_us", int64_t{0});
  out["index"] = stability_index(pixels, cv_max);
  if (const Json* u = find_value(input, "u", scratch); u && u->is_number()) out["u"] = u->get<double>();
  if (const Json* s = find_value(input, "s_true", scratch); s && s->is_number()) {
    out["s_true"] = s->get<double>();
  }
  return out.dump();
}

std::string builtin_hill_climb(std::string_view payload, const FunctionContext&) {
  Json req = parse_payload(payload);
  Json args = req.value("args", Json::object());
  std::vector<Json> inputs;
  if (req.contains("inputs")) {
    for (const auto& x : req.at("inputs")) inputs.push_back(x);
  } else if (req.contains("input")) {
    inputs.push_back(req.at("input"));
  }
  std::vector<std::pair<double, double>> history;
  for (const auto& x : inputs) {
    if (!x.contains("u") || !x.contains("index")) {
      throw Error(ErrorCode::kInvalidArgument, "history entries need u and index");
    }
    history.emplace_back(x.at("u").get<double>(), x.at("index").get<double>());
  }
  double u = controller_step(history, arg_double(args, "step_size", 0.05),
                             arg_double(args, "lower", 0.0), arg_double(args, "upper", 1.0));
  OrderedJson out;
  out["u"] = u;
  out["ref_ts_us"] = inputs.back().value("ts_us", int64_t{0});
  return out.dump();
}

}  // namespace

void register_builtins(FunctionRegistry& registry) {
  registry.register_function(
      {"identity", 1, FunctionKind::kBuiltin,
       [](std::string_view payload, const FunctionContext&) { return std::string(payload); }, {}, 30'000});
  registry.register_function(
      {"stability_index", 1, FunctionKind::kBuiltin, builtin_stability_index, {}, 30'000});
  registry.register_function({"hill_climb", 1, FunctionKind::kBuiltin, builtin_hill_climb, {}, 30'000});
}

// ---------------------------------------------------------------------------
// Simulator

Simulator::Simulator(SimulatorConfig config, Transport& transport, Clock& clock)
    : config_(std::move(config)), transport_(transport), clock_(clock) {
  config_.params.validate();
  require_identifier(config_.experiment_id, "experiment_id");
  for (const auto* d : {&config_.plif_device, &config_.spectro_device, &config_.psd_device,
                        &config_.control_device}) {
    require_identifier(*d, "device_id");
  }
  state_ = initial_state(config_.u0, config_.params);
  if (config_.listen_control) {
    control_sub_ = transport_.subscribe(
        topic_for(TopicKind::kControl, config_.experiment_id, config_.control_device));
  }
}

SimState Simulator::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

void Simulator::apply_controls() {
  if (!control_sub_) return;
  while (auto d = control_sub_->try_pop()) {
    try {
      auto msg = decode_control(d->payload);
      if (msg.command_name != "set_u") {
        spdlog::warn("sim: ignoring command '{}'", msg.command_name);
        continue;
      }
      auto it = msg.params.find("u");
      if (it == msg.params.end() || !std::holds_alternative<double>(it->second)) {
        spdlog::warn("sim: set_u without numeric u");
        continue;
      }
      double u = std::get<double>(it->second);
      if (!(u >= 0.0 && u <= 1.0)) {
        spdlog::warn("sim: set_u out of range: {}", u);
        continue;
      }
      std::lock_guard lock(mu_);
      state_.u = u;
      controls_applied_.fetch_add(1);
    } catch (const Error& e) {
      spdlog::warn("sim: bad control message: {}", e.what());
    }
  }
}

void Simulator::emit_tick(int64_t ts_us) {
  SimState st = state();
  const SimParams& p = config_.params;
  const auto& exp = config_.experiment_id;
  transport_.publish(topic_for(TopicKind::kData, exp, config_.plif_device),
                     encode(emit_plif(st, p, {exp, config_.plif_device, plif_seq_++, ts_us})));
  if (due(st.k, p.plif_period_ms, p.spectro_period_ms)) {
    transport_.publish(
        topic_for(TopicKind::kData, exp, config_.spectro_device),
        encode(emit_spectroscopy(st, p, {exp, config_.spectro_device, spectro_seq_++, ts_us})));
  }
  if (due(st.k, p.plif_period_ms, p.psd_period_ms)) {
    transport_.publish(topic_for(TopicKind::kData, exp, config_.psd_device),
                       encode(emit_psd(st, p, {exp, config_.psd_device, psd_seq_++, ts_us})));
  }
}

uint64_t Simulator::run(std::stop_token stop) {
  const int64_t period_us = config_.params.plif_period_ms * 1000;
  const int64_t t0 = config_.t0_us >= 0 ? config_.t0_us : clock_.now_us();
  uint64_t emitted = 0;
  while (!stop.stop_requested() && (config_.ticks == 0 || emitted < config_.ticks)) {
    SimState st = state();
    if (started_) {
      apply_controls();
      std::lock_guard lock(mu_);
      state_ = step(state_, config_.params);
      st = state_;
    }
    const int64_t ts = t0 + static_cast<int64_t>(st.k) * period_us;
    if (config_.pace && !clock_.sleep_until(ts, stop)) break;
    emit_tick(ts);
    ++emitted;
    started_ = true;
    if (after_tick_) after_tick_(st, ts);
  }
  return emitted;
}

}  // namespace mdml
