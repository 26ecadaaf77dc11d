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

#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <stop_token>

namespace mdml {

/// Microsecond time source. Everything that sleeps or measures latency goes
/// through a Clock so tests can drive time by hand.
class Clock {
 public:
  virtual ~Clock() = default;

  virtual int64_t now_us() const = 0;

  /// Blocks until now_us() >= deadline_us or the stop token fires.
  /// Returns false if interrupted.
  virtual bool sleep_until(int64_t deadline_us, std::stop_token stop = {}) = 0;

  bool sleep_for(int64_t duration_us, std::stop_token stop = {}) {
    return sleep_until(now_us() + duration_us, stop);
  }
};

/// Wall clock (system_clock for timestamps, steady waits).
class SystemClock final : public Clock {
 public:
  int64_t now_us() const override;
  bool sleep_until(int64_t deadline_us, std::stop_token stop = {}) override;

  static SystemClock& instance();
};

/// Test clock: time only moves when advance()/set() is called. Sleepers are
/// counted so a driver can wait for a known number of them before stepping.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(int64_t start_us = 0) : now_(start_us) {}

  int64_t now_us() const override;
  bool sleep_until(int64_t deadline_us, std::stop_token stop = {}) override;

  void advance(int64_t delta_us);
  void set(int64_t now_us);

  /// Number of threads currently blocked in sleep_until.
  int sleepers() const;

  /// Earliest deadline among blocked sleepers.
  std::optional<int64_t> next_deadline() const;

  /// Waits (in real time, bounded) until at least `n` threads sleep.
  bool wait_for_sleepers(int n, int64_t real_timeout_ms = 5000) const;

 private:
  int blocked_locked() const;

  mutable std::mutex mu_;
  mutable std::condition_variable_any cv_;
  int64_t now_;
  std::multiset<int64_t> pending_;
};

}  // namespace mdml
