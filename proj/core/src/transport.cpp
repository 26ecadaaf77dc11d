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

#include "mdml/transport.hpp"

#include <algorithm>
#include <cmath>

#include "mdml/error.hpp"
#include "mdml/topic.hpp"

namespace mdml {

Subscription::Subscription(std::string filter, size_t capacity)
    : filter_(std::move(filter)), capacity_(std::max<size_t>(1, capacity)) {}

std::optional<Delivery> Subscription::pop(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  if (!not_empty_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; })) {
    return std::nullopt;
  }
  if (queue_.empty()) return std::nullopt;
  Delivery d = std::move(queue_.front());
  queue_.pop_front();
  not_full_.notify_one();
  return d;
}

std::optional<Delivery> Subscription::try_pop() {
  std::lock_guard lock(mu_);
  if (queue_.empty()) return std::nullopt;
  Delivery d = std::move(queue_.front());
  queue_.pop_front();
  not_full_.notify_one();
  return d;
}

void Subscription::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  not_empty_.notify_all();
  not_full_.notify_all();
}

bool Subscription::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

size_t Subscription::size() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

bool Subscription::push(Delivery d) {
  std::unique_lock lock(mu_);
  not_full_.wait(lock, [&] { return queue_.size() < capacity_ || closed_; });
  if (closed_) return false;
  queue_.push_back(std::move(d));
  not_empty_.notify_one();
  return true;
}

SubscriptionPtr SubscriptionTable::add(std::string_view filter, size_t capacity) {
  if (!is_valid_topic_filter(filter)) {
    throw Error(ErrorCode::kFilterInvalid, "'" + std::string(filter) + "'");
  }
  auto sub = std::make_shared<Subscription>(std::string(filter), capacity);
  std::unique_lock lock(mu_);
  std::erase_if(subs_, [](const SubscriptionPtr& s) { return s->closed(); });
  subs_.push_back(sub);
  return sub;
}

void SubscriptionTable::dispatch(const std::string& topic, std::string_view payload) {
  std::vector<SubscriptionPtr> targets;
  {
    std::shared_lock lock(mu_);
    for (const auto& s : subs_) {
      if (topic_matches(s->filter(), topic)) targets.push_back(s);
    }
  }
  // pushes happen outside the lock; a full queue only stalls this publisher
  for (auto& s : targets) s->push(Delivery{topic, std::string(payload)});
}

std::vector<std::string> SubscriptionTable::filters() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& s : subs_) {
    if (!s->closed()) out.push_back(s->filter());
  }
  return out;
}

void SubscriptionTable::close_all() {
  std::unique_lock lock(mu_);
  for (auto& s : subs_) s->close();
  subs_.clear();
}

InprocBus::~InprocBus() { table_.close_all(); }

void InprocBus::publish(std::string_view topic, std::string_view payload) {
  if (!connected_) throw Error(ErrorCode::kNotConnected, "inproc bus is disconnected");
  if (!is_valid_topic_name(topic)) {
    throw Error(ErrorCode::kTopicInvalid, "'" + std::string(topic) + "'");
  }
  table_.dispatch(std::string(topic), payload);
}

SubscriptionPtr InprocBus::subscribe(std::string_view filter) { return table_.add(filter); }

bool InprocBus::connected() const { return connected_; }

void InprocBus::connect() { connected_ = true; }

void InprocBus::disconnect() { connected_ = false; }

DuplicatingTransport::DuplicatingTransport(Transport& inner, double duplicate_fraction, uint64_t seed)
    : inner_(inner), fraction_(duplicate_fraction), rng_(seed) {}

void DuplicatingTransport::publish(std::string_view topic, std::string_view payload) {
  // Holding the lock across both publishes keeps original+duplicate adjacent.
  std::lock_guard lock(mu_);
  inner_.publish(topic, payload);
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < fraction_) {
    inner_.publish(topic, payload);
    ++duplicates_;
  }
}

SubscriptionPtr DuplicatingTransport::subscribe(std::string_view filter) {
  return inner_.subscribe(filter);
}

bool DuplicatingTransport::connected() const { return inner_.connected(); }

uint64_t DuplicatingTransport::duplicates() const {
  std::lock_guard lock(mu_);
  return duplicates_;
}

void BackoffPolicy::validate() const {
  if (initial_ms <= 0 || max_ms < initial_ms) {
    throw Error(ErrorCode::kInvalidArgument, "backoff requires 0 < initial <= max");
  }
  if (jitter < 0.0 || jitter >= 1.0) throw Error(ErrorCode::kInvalidArgument, "jitter must be in [0, 1)");
}

int64_t BackoffPolicy::base_delay_ms(int attempt) const {
  int64_t delay = initial_ms;
  for (int i = 0; i < attempt && delay < max_ms; ++i) delay *= 2;
  return std::min(delay, max_ms);
}

int64_t BackoffPolicy::jittered_delay_ms(int attempt, std::mt19937_64& rng) const {
  const double base = static_cast<double>(base_delay_ms(attempt));
  const double factor = std::uniform_real_distribution<double>(1.0 - jitter, 1.0 + jitter)(rng);
  return std::max<int64_t>(1, std::llround(base * factor));
}

TransportConfig TransportConfig::from_uri(std::string_view uri, std::string client_id) {
  TransportConfig cfg;
  cfg.client_id = std::move(client_id);
  if (uri.empty() || uri == "inproc" || uri.starts_with("inproc://")) {
    cfg.backend = TransportBackend::kInproc;
    return cfg;
  }
  if (uri.starts_with("mqtt://") || uri.starts_with("tcp://")) {
    cfg.backend = TransportBackend::kMqtt;
    cfg.broker_uri = std::string(uri);
    return cfg;
  }
  throw Error(ErrorCode::kInvalidArgument, "unsupported broker uri '" + std::string(uri) + "'");
}

}  // namespace mdml
