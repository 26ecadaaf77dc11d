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

#include "mdml/envelope.hpp"
#include "mdml/sim.hpp"
#include "mdml/transport.hpp"

namespace mdml {
namespace {

Envelope scalar(uint64_t seq) {
  Envelope e;
  e.experiment_id = "bench";
  e.device_id = "adc";
  e.seq = seq;
  e.ts_us = static_cast<int64_t>(seq) * 1000;
  e.schema = {{"v", FieldType::kF64, "V"}, {"n", FieldType::kI64, ""}};
  e.payload = RowSet{{Cell{0.25 * static_cast<double>(seq)}, Cell{static_cast<int64_t>(seq)}}};
  return e;
}

Envelope plif() { return emit_plif({0.6, 0.5, 3}, SimParams{}, {"bench", "plif", 0, 0}); }

void BM_EncodeScalar(benchmark::State& state) {
  auto e = scalar(7);
  for (auto _ : state) benchmark::DoNotOptimize(encode(e));
}
BENCHMARK(BM_EncodeScalar);

void BM_DecodeScalar(benchmark::State& state) {
  auto bytes = encode(scalar(7));
  for (auto _ : state) benchmark::DoNotOptimize(decode(bytes));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_DecodeScalar);

void BM_EncodePlifFrame(benchmark::State& state) {
  auto e = plif();
  for (auto _ : state) benchmark::DoNotOptimize(encode(e));
}
BENCHMARK(BM_EncodePlifFrame);

void BM_DecodePlifFrame(benchmark::State& state) {
  auto bytes = encode(plif());
  for (auto _ : state) benchmark::DoNotOptimize(decode(bytes));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_DecodePlifFrame);

// Publish to one matching subscriber and pop it back.
void BM_InprocRoundTrip(benchmark::State& state) {
  InprocBus bus;
  auto sub = bus.subscribe("mdml/v1/bench/data/+");
  auto bytes = encode(scalar(1));
  for (auto _ : state) {
    bus.publish("mdml/v1/bench/data/adc", bytes);
    benchmark::DoNotOptimize(sub->try_pop());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_InprocRoundTrip);

}  // namespace
}  // namespace mdml
