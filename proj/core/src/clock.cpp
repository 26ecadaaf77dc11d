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

#include "mdml/clock.hpp"

#include <chrono>
#include <iterator>
#include <thread>

namespace mdml {

int64_t SystemClock::now_us() const {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

bool SystemClock::sleep_until(int64_t deadline_us, std::stop_token stop) {
  std::mutex mu;
  std::condition_variable_any cv;
  std::unique_lock lock(mu);
  while (true) {
    if (stop.stop_requested()) return false;
    const int64_t now = now_us();
    if (now >= deadline_us) return true;
    cv.wait_for(lock, stop, std::chrono::microseconds(deadline_us - now),
                [] { return false; });
  }
}

SystemClock& SystemClock::instance() {
  static SystemClock clock;
  return clock;
}

int64_t ManualClock::now_us() const {
  std::lock_guard lock(mu_);
  return now_;
}

bool ManualClock::sleep_until(int64_t deadline_us, std::stop_token stop) {
  std::unique_lock lock(mu_);
  if (now_ >= deadline_us) return true;
  auto it = pending_.insert(deadline_us);
  cv_.notify_all();
  const bool reached = cv_.wait(lock, stop, [&] { return now_ >= deadline_us; });
  pending_.erase(it);
  cv_.notify_all();
  return reached;
}

void ManualClock::advance(int64_t delta_us) {
  {
    std::lock_guard lock(mu_);
    now_ += delta_us;
  }
  cv_.notify_all();
}

void ManualClock::set(int64_t now_us) {
  {
    std::lock_guard lock(mu_);
    now_ = now_us;
  }
  cv_.notify_all();
}

// A sleeper whose deadline has passed but has not woken yet is not counted.
int ManualClock::blocked_locked() const {
  return static_cast<int>(std::distance(pending_.upper_bound(now_), pending_.end()));
}

int ManualClock::sleepers() const {
  std::lock_guard lock(mu_);
  return blocked_locked();
}

std::optional<int64_t> ManualClock::next_deadline() const {
  std::lock_guard lock(mu_);
  auto it = pending_.upper_bound(now_);
  if (it == pending_.end()) return std::nullopt;
  return *it;
}

bool ManualClock::wait_for_sleepers(int n, int64_t real_timeout_ms) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, std::chrono::milliseconds(real_timeout_ms),
                      [&] { return blocked_locked() >= n; });
}

}  // namespace mdml
