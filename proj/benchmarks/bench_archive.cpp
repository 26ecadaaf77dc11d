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
#include <unistd.h>

#include <filesystem>

#include "mdml/archive.hpp"
#include "mdml/sim.hpp"

namespace mdml {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const char* tag) {
  static int counter = 0;
  auto p = fs::temp_directory_path() /
           ("mdml-bench-" + std::string(tag) + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Appends 1000 PLIF frames and seals the archive.
void BM_ArchivePlifAppend(benchmark::State& state) {
  SimParams p;
  std::vector<Envelope> frames;
  for (uint64_t i = 0; i < 1000; ++i) {
    frames.push_back(emit_plif({0.5, 0.5, i}, p, {"bench", "plif", i, static_cast<int64_t>(i) * 50'000}));
  }
  for (auto _ : state) {
    state.PauseTiming();
    auto root = scratch("append");
    state.ResumeTiming();
    {
      ArchiveWriter w(root, "bench");
      for (const auto& f : frames) w.append(f);
      w.close();
    }
    state.PauseTiming();
    fs::remove_all(root);
    state.ResumeTiming();
  }
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_ArchivePlifAppend)->Unit(benchmark::kMillisecond);

void BM_ArchiveVerifyAndReplay(benchmark::State& state) {
  auto root = scratch("replay");
  {
    SimParams p;
    ArchiveWriter w(root, "bench");
    for (uint64_t i = 0; i < 1000; ++i) {
      w.append(emit_plif({0.5, 0.5, i}, p, {"bench", "plif", i, static_cast<int64_t>(i) * 50'000}));
    }
    w.close();
  }
  auto dir = root / "bench";
  for (auto _ : state) {
    benchmark::DoNotOptimize(verify_archive(dir).clean());
    size_t n = 0;
    replay_archive(dir, {}, [&](const Envelope&, const std::string&) { ++n; });
    benchmark::DoNotOptimize(n);
  }
  state.SetItemsProcessed(state.iterations() * 1000);
  fs::remove_all(root);
}
BENCHMARK(BM_ArchiveVerifyAndReplay)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace mdml
