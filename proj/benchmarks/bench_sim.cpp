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

#include "mdml/sim.hpp"

namespace mdml {
namespace {

void BM_PlifFrame(benchmark::State& state) {
  SimParams p;
  uint64_t k = 0;
  for (auto _ : state) benchmark::DoNotOptimize(plif_frame({0.7, 0.5, k++}, p));
}
BENCHMARK(BM_PlifFrame);

void BM_StabilityIndex(benchmark::State& state) {
  auto frame = plif_frame({0.7, 0.5, 1}, SimParams{});
  for (auto _ : state) benchmark::DoNotOptimize(stability_index(frame, 1.0));
}
BENCHMARK(BM_StabilityIndex);

// One stability_index call through the builtin's JSON payload convention.
void BM_StabilityIndexBuiltin(benchmark::State& state) {
  FunctionRegistry reg;
  register_builtins(reg);
  auto def = reg.find({"stability_index", 1});
  FunctionContext ctx{SystemClock::instance(), {}};
  OrderedJson req;
  req["args"] = {{"cv_max", 1.0}};
  req["input"] = to_json(emit_plif({0.7, 0.5, 1}, SimParams{}, {"bench", "plif", 0, 0}));
  const std::string payload = req.dump();
  for (auto _ : state) benchmark::DoNotOptimize(def->builtin(payload, ctx));
}
BENCHMARK(BM_StabilityIndexBuiltin);

void BM_SimStep(benchmark::State& state) {
  SimParams p;
  SimState s{0.5, 0.6, 0};
  for (auto _ : state) {
    s = step(s, p);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_SimStep);

}  // namespace
}  // namespace mdml
