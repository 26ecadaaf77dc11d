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

// mdml: command-line entry point.
//
// Exit codes: 0 success, 1 validation or runtime error, 2 bad usage.

#include <pthread.h>
#include <signal.h>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stop_token>
#include <thread>

#include "mdml/archive.hpp"
#include "mdml/demo.hpp"
#include "mdml/error.hpp"
#include "mdml/executor.hpp"
#include "mdml/gateway.hpp"
#include "mdml/mqtt.hpp"
#include "mdml/pipeline.hpp"
#include "mdml/sim.hpp"
#include "mdml/topic.hpp"

namespace {

using namespace mdml;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

/// Turns SIGINT/SIGTERM into a stop request. Signals are blocked in every
/// thread (the mask is inherited) and collected by one waiter.
class SignalStop {
 public:
  SignalStop() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, nullptr);
    waiter_ = std::jthread([this](std::stop_token st) {
      timespec tick{0, 200'000'000};
      while (!st.stop_requested()) {
        int sig = sigtimedwait(&set_, nullptr, &tick);
        if (sig > 0) {
          spdlog::info("received signal {}, shutting down", sig);
          source_.request_stop();
        }
      }
    });
  }

  std::stop_token token() const { return source_.get_token(); }
  void wait() const {
    while (!source_.stop_requested()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }

 private:
  sigset_t set_{};
  std::stop_source source_;
  std::jthread waiter_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::unique_ptr<Transport> connect(const std::string& broker, const std::string& client_id) {
  auto t = make_transport(TransportConfig::from_uri(broker, client_id));
  if (auto* m = dynamic_cast<MqttTransport*>(t.get())) {
    if (!m->wait_connected(std::chrono::seconds(10))) {
      spdlog::warn("broker {} not reachable yet; retrying in the background", broker);
    }
  }
  return t;
}

/// {"functions":[{"name":..,"version":1,"command":[..],"timeout_ms":..}]}
void load_functions(FunctionRegistry& registry, const std::string& path) {
  Json doc = Json::parse(read_file(path));
  for (const auto& f : doc.at("functions")) {
    FunctionDef def;
    def.name = f.at("name").get<std::string>();
    def.version = f.value("version", 1);
    def.kind = FunctionKind::kSubprocess;
    def.command = f.at("command").get<std::vector<std::string>>();
    def.timeout_ms = f.value("timeout_ms", int64_t{30'000});
    registry.register_function(std::move(def));
  }
}

struct Common {
  std::string log_level = "info";
  std::string broker = "inproc://";
  std::string client_id = "mdml";
};

int cmd_pipeline_validate(const std::string& config_path) {
  auto config = parse_pipeline(read_file(config_path));
  std::cout << "ok: pipeline '" << config.pipeline_id << "' (" << config.nodes.size() << " nodes, "
            << config.edges.size() << " edges)\n";
  return kExitOk;
}

struct PipelineRunArgs {
  std::string config;
  std::string archive_root;
  std::string functions;
  double duration_s = 0.0;
};

int cmd_pipeline_run(const Common& common, const PipelineRunArgs& a, SignalStop& signals) {
  auto config = parse_pipeline(read_file(a.config));
  FunctionRegistry registry;
  register_builtins(registry);
  if (!a.functions.empty()) load_functions(registry, a.functions);
  for (const auto& n : config.nodes) {
    if (const auto* f = std::get_if<FunctionNodeConfig>(&n.config); f && !registry.find(f->function)) {
      throw Error(ErrorCode::kBadNodeConfig,
                  "node '" + n.id + "': function " + to_string(f->function) + " is not registered");
    }
  }
  std::unique_ptr<ArchiveWriter> archive;
  bool needs_archive = std::any_of(config.nodes.begin(), config.nodes.end(),
                                   [](const NodeSpec& n) { return n.kind == NodeKind::kArchiveSink; });
  if (needs_archive) {
    if (a.archive_root.empty()) throw Error(ErrorCode::kInvalidArgument, "the config has an archive_sink: pass --archive-dir");
    archive = std::make_unique<ArchiveWriter>(a.archive_root, config.experiment_id);
  }
  auto transport = connect(common.broker, common.client_id);
  Executor executor(registry);
  auto pipeline = Pipeline::start(config, PipelineDeps{*transport, executor, SystemClock::instance(), archive.get()});
  spdlog::info("pipeline {} running", config.pipeline_id);
  if (a.duration_s > 0) {
    SystemClock::instance().sleep_for(static_cast<int64_t>(a.duration_s * 1e6), signals.token());
  } else {
    signals.wait();
  }
  pipeline->shutdown();
  if (archive) archive->close();
  for (const auto& s : pipeline->status()) std::cout << s.to_json().dump() << "\n";
  return kExitOk;
}

struct SimArgs {
  std::string experiment = "fsp-demo";
  uint64_t seed = 0;
  int64_t plif_ms = 50;
  int64_t spectro_ms = 5000;
  int64_t psd_ms = 5000;
  double u0 = 0.9;
  double sigma = 0.02;
  bool listen_control = false;
  double duration_s = 0.0;
};

int cmd_sim_run(const Common& common, const SimArgs& a, SignalStop& signals) {
  SimulatorConfig sc;
  sc.experiment_id = a.experiment;
  sc.params.seed = a.seed;
  sc.params.sigma = a.sigma;
  sc.params.plif_period_ms = a.plif_ms;
  sc.params.spectro_period_ms = a.spectro_ms;
  sc.params.psd_period_ms = a.psd_ms;
  sc.u0 = a.u0;
  sc.listen_control = a.listen_control;
  if (a.duration_s > 0) sc.ticks = static_cast<uint64_t>(std::llround(a.duration_s * 1000.0 / a.plif_ms));
  auto transport = connect(common.broker, common.client_id);
  Simulator sim(sc, *transport);
  uint64_t n = sim.run(signals.token());
  auto st = sim.state();
  spdlog::info("simulator emitted {} ticks; final u={} s={}", n, st.u, st.s);
  return kExitOk;
}

int cmd_archive_verify(const std::string& dir) {
  auto report = verify_archive(resolve_archive_dir(dir));
  std::cout << report.to_json().dump(2) << "\n";
  return report.clean() ? kExitOk : kExitError;
}

int cmd_archive_replay(const Common& common, const std::string& dir, const std::string& speed,
                       bool to_broker, SignalStop& signals) {
  ReplayOptions opts;
  opts.stop = signals.token();
  if (speed == "inf") {
    opts.speed = std::numeric_limits<double>::infinity();
  } else {
    try {
      opts.speed = std::stod(speed);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "--speed must be a number or 'inf'");
    }
  }
  auto resolved = resolve_archive_dir(dir);
  uint64_t n = 0;
  if (to_broker) {
    auto transport = connect(common.broker, common.client_id);
    n = replay_archive(resolved, opts, *transport);
  } else {
    std::ios::sync_with_stdio(false);
    n = replay_archive(resolved, opts, [](const Envelope&, const std::string& bytes) { std::cout << bytes << '\n'; });
    std::cout.flush();
  }
  spdlog::info("replayed {} envelopes", n);
  return kExitOk;
}

struct GatewayArgs {
  std::string tokens;
  std::string bind = "127.0.0.1";
  uint16_t port = 8080;
  std::vector<std::string> experiments;
  size_t ring = 10'000;
};

int cmd_gateway(const Common& common, const GatewayArgs& a, SignalStop& signals) {
  auto transport = connect(common.broker, common.client_id);
  GatewayOptions go;
  go.bind_address = a.bind;
  go.port = a.port;
  go.experiments = a.experiments;
  go.ring_size = a.ring;
  Gateway gw(*transport, TokenTable::load(a.tokens), go);
  gw.start();
  std::cout << "listening on " << a.bind << ":" << gw.port() << std::endl;
  signals.wait();
  gw.stop();
  return kExitOk;
}

struct DemoArgs {
  DemoOptions options;
  bool no_controller = false;
  bool no_pace = false;
  std::string archive_root;
  int port = -1;
  std::string tokens;
  std::string trajectory;
};

int cmd_demo(DemoArgs a, SignalStop& signals) {
  auto& o = a.options;
  o.controller = !a.no_controller;
  o.pace = !a.no_pace;
  if (!a.archive_root.empty()) o.archive_root = a.archive_root;
  if (a.port >= 0) o.gateway_port = static_cast<uint16_t>(a.port);
  if (!a.tokens.empty()) o.tokens_file = a.tokens;
  auto result = run_demo(o, signals.token(), [](uint16_t port) {
    std::cout << "gateway listening on 127.0.0.1:" << port << std::endl;
  });
  if (!a.trajectory.empty()) {
    std::ofstream out(a.trajectory);
    out.precision(17);
    out << "k,ts_us,u,s,index\n";
    for (const auto& t : result.ticks) out << t.k << ',' << t.ts_us << ',' << t.u << ',' << t.s << ',' << t.index << '\n';
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + a.trajectory);
  }
  OrderedJson summary;
  summary["ticks"] = result.ticks.size();
  summary["final_u"] = result.ticks.empty() ? 0.0 : result.ticks.back().u;
  summary["final_s"] = result.ticks.empty() ? 0.0 : result.ticks.back().s;
  summary["tail_mean_index"] = result.tail_mean(static_cast<size_t>(std::llround(20'000.0 / o.plif_period_ms)));
  summary["controls_applied"] = result.controls_applied;
  summary["lockstep_timeouts"] = result.lockstep_timeouts;
  if (result.archive_dir) summary["archive_dir"] = result.archive_dir->string();
  summary["wall_seconds"] = result.wall_seconds;
  std::cout << summary.dump(2) << "\n";
  return result.lockstep_timeouts == 0 ? kExitOk : kExitError;
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::stderr_color_mt("mdml");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e%z level=%l thread=%t msg=\"%v\"");
  auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") {
    throw CLI::ValidationError("--log-level", "unknown level '" + level + "'");
  }
  spdlog::set_level(lvl);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mdml: streaming data platform for steerable experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  auto broker_opts = [&](CLI::App* sub) {
    sub->add_option("--broker", common.broker, "inproc:// or mqtt://host[:port]")->capture_default_str();
    sub->add_option("--client-id", common.client_id, "MQTT client id")->capture_default_str();
  };

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "validate or run a pipeline");
  pipeline->require_subcommand(1);
  pipeline->fallthrough();
  std::string validate_config;
  auto* p_validate = pipeline->add_subcommand("validate", "check a pipeline config");
  p_validate->add_option("--config", validate_config, "pipeline JSON")->required();
  PipelineRunArgs prun;
  auto* p_run = pipeline->add_subcommand("run", "run a pipeline against a broker");
  p_run->add_option("--config", prun.config, "pipeline JSON")->required();
  p_run->add_option("--archive-dir", prun.archive_root, "archive root for archive_sink nodes");
  p_run->add_option("--functions", prun.functions, "subprocess function definitions (JSON)");
  p_run->add_option("--duration-s", prun.duration_s, "stop after this many seconds (0: until signalled)");
  broker_opts(p_run);

  // sim
  auto* sim = app.add_subcommand("sim", "instrument simulator");
  sim->require_subcommand(1);
  sim->fallthrough();
  SimArgs simargs;
  auto* s_run = sim->add_subcommand("run", "publish simulated instrument streams");
  broker_opts(s_run);
  s_run->add_option("--experiment", simargs.experiment)->capture_default_str();
  s_run->add_option("--seed", simargs.seed)->capture_default_str();
  s_run->add_option("--plif-period-ms", simargs.plif_ms)->capture_default_str();
  s_run->add_option("--spectro-period-ms", simargs.spectro_ms)->capture_default_str();
  s_run->add_option("--psd-period-ms", simargs.psd_ms)->capture_default_str();
  s_run->add_option("--u0", simargs.u0)->capture_default_str();
  s_run->add_option("--sigma", simargs.sigma)->capture_default_str();
  s_run->add_flag("--listen-control", simargs.listen_control, "apply set_u commands from the control topic");
  s_run->add_option("--duration-s", simargs.duration_s, "0 runs until signalled")->capture_default_str();

  // archive
  auto* archive = app.add_subcommand("archive", "inspect or replay an archive");
  archive->require_subcommand(1);
  archive->fallthrough();
  std::string archive_dir;
  std::string speed = "1";
  bool replay_to_broker = false;
  auto* a_verify = archive->add_subcommand("verify", "recompute checksums and counts");
  a_verify->add_option("--dir", archive_dir, "experiment directory or archive root")->required();
  auto* a_replay = archive->add_subcommand("replay", "re-emit archived envelopes in order");
  a_replay->add_option("--dir", archive_dir, "experiment directory or archive root")->required();
  a_replay->add_option("--speed", speed, "time scale; 'inf' for no pacing")->capture_default_str();
  a_replay->add_flag("--publish", replay_to_broker, "publish to --broker instead of writing to stdout");
  broker_opts(a_replay);

  // gateway
  GatewayArgs gwargs;
  auto* gateway = app.add_subcommand("gateway", "HTTP/WebSocket gateway");
  broker_opts(gateway);
  gateway->add_option("--tokens", gwargs.tokens, "token table JSON")->required();
  gateway->add_option("--bind", gwargs.bind)->capture_default_str();
  gateway->add_option("--port", gwargs.port)->capture_default_str();
  gateway->add_option("--experiment", gwargs.experiments, "experiment known before any traffic");
  gateway->add_option("--ring-size", gwargs.ring, "records kept per device")->capture_default_str();

  // demo
  DemoArgs demo;
  auto* d = app.add_subcommand("demo", "closed-loop flame steering in one process");
  d->add_option("--experiment", demo.options.experiment_id)->capture_default_str();
  d->add_option("--seed", demo.options.seed)->capture_default_str();
  d->add_option("--sigma", demo.options.sigma)->capture_default_str();
  d->add_option("--u0", demo.options.u0)->capture_default_str();
  d->add_option("--duration-s", demo.options.duration_s)->capture_default_str();
  d->add_option("--plif-period-ms", demo.options.plif_period_ms)->capture_default_str();
  d->add_option("--spectro-period-ms", demo.options.spectro_period_ms)->capture_default_str();
  d->add_option("--cv-max", demo.options.cv_max)->capture_default_str();
  d->add_option("--step", demo.options.step_size, "controller step size")->capture_default_str();
  d->add_flag("--no-controller", demo.no_controller, "open loop: u stays at u0");
  d->add_flag("--no-pace", demo.no_pace, "run as fast as the pipeline allows");
  d->add_option("--archive-dir", demo.archive_root, "record every stream under this root");
  d->add_option("--port", demo.port, "serve the gateway on this port (0: any free port)");
  d->add_option("--tokens", demo.tokens, "token table for the gateway");
  d->add_option("--trajectory", demo.trajectory, "write k,ts_us,u,s,index as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    setup_logging(common.log_level);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  SignalStop signals;
  try {
    if (p_validate->parsed()) return cmd_pipeline_validate(validate_config);
    if (p_run->parsed()) return cmd_pipeline_run(common, prun, signals);
    if (s_run->parsed()) return cmd_sim_run(common, simargs, signals);
    if (a_verify->parsed()) return cmd_archive_verify(archive_dir);
    if (a_replay->parsed()) return cmd_archive_replay(common, archive_dir, speed, replay_to_broker, signals);
    if (gateway->parsed()) return cmd_gateway(common, gwargs, signals);
    if (d->parsed()) return cmd_demo(demo, signals);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
