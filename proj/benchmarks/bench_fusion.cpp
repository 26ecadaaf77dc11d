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

#include <benchmark/benchmark.h>

#include "mdml/fusion.hpp"

namespace mdml {
namespace {

BatchingRule rule_for(RuleKind kind, int devices) {
  BatchingRule r;
  r.kind = kind;
  for (int d = 0; d < devices; ++d) r.devices.push_back("dev-" + std::to_string(d));
  r.max_lateness_ms = 20;
  switch (kind) {
    case RuleKind::kTumbling: r.width_ms = 100; break;
    case RuleKind::kCount: r.devices.resize(1); r.n = 10; break;
    case RuleKind::kTrigger: r.trigger_device = "dev-0"; break;
  }
  return r;
}

// Round-robin envelopes at 50 ms per device, 5 ms apart across devices.
std::vector<Envelope> stream(int devices, int per_device) {
  std::vector<Envelope> out;
  for (int i = 0; i < per_device; ++i) {
    for (int d = 0; d < devices; ++d) {
      Envelope e;
      e.experiment_id = "bench";
      e.device_id = "dev-" + std::to_string(d);
      e.seq = static_cast<uint64_t>(i);
      e.ts_us = static_cast<int64_t>(i) * 50'000 + d * 5'000;
      e.schema = {{"x", FieldType::kF64, ""}, {"k", FieldType::kI64, ""}};
      e.payload = RowSet{{Cell{0.5 * i}, Cell{static_cast<int64_t>(i)}}};
      out.push_back(std::move(e));
    }
  }
  return out;
}

void run(benchmark::State& state, RuleKind kind) {
  const int devices = kind == RuleKind::kCount ? 1 : static_cast<int>(state.range(0));
  auto input = stream(devices, 1000);
  auto rule = rule_for(kind, devices);
  for (auto _ : state) {
    FusionEngine engine(rule);
    size_t n = 0;
    for (const auto& e : input) {
      engine.ingest(e);
      n += engine.take().size();
    }
    n += engine.drain().size();
    benchmark::DoNotOptimize(n);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(input.size()));
}

void BM_FuseTumbling(benchmark::State& s) { run(s, RuleKind::kTumbling); }
void BM_FuseCount(benchmark::State& s) { run(s, RuleKind::kCount); }
void BM_FuseTrigger(benchmark::State& s) { run(s, RuleKind::kTrigger); }
BENCHMARK(BM_FuseTumbling)->Arg(1)->Arg(5)->Arg(10);
BENCHMARK(BM_FuseCount)->Arg(1);
BENCHMARK(BM_FuseTrigger)->Arg(2)->Arg(5)->Arg(10);

}  // namespace
}  // namespace mdml
