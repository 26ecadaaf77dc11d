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
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace mdml {

struct Delivery {
  std::string topic;
  std::string payload;

  bool operator==(const Delivery&) const = default;
};

/// Queue of deliveries for one filter. Owned jointly by the transport (which
/// pushes) and exactly one reader (which pops). Bounded; a full queue blocks
/// the pushing side.
class Subscription {
 public:
  static constexpr size_t kDefaultCapacity = 1 << 16;

  explicit Subscription(std::string filter, size_t capacity = kDefaultCapacity);

  const std::string& filter() const noexcept { return filter_; }

  /// Waits up to `timeout`. Returns nullopt on timeout, or once closed and
  /// drained.
  std::optional<Delivery> pop(std::chrono::milliseconds timeout);
  std::optional<Delivery> try_pop();

  /// Stops further deliveries. Already queued deliveries stay poppable.
  void close();
  bool closed() const;
  size_t size() const;

  /// Transport side. Returns false if the subscription is closed.
  bool push(Delivery d);

 private:
  const std::string filter_;
  const size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<Delivery> queue_;
  bool closed_ = false;
};

using SubscriptionPtr = std::shared_ptr<Subscription>;

/// Pub/sub with at-least-once delivery and per-(publisher, topic) ordering.
class Transport {
 public:
  virtual ~Transport() = default;

  /// Throws kNotConnected / kTopicInvalid.
  virtual void publish(std::string_view topic, std::string_view payload) = 0;

  /// No replay of earlier messages. Throws kFilterInvalid.
  virtual SubscriptionPtr subscribe(std::string_view filter) = 0;

  virtual bool connected() const = 0;
};

/// Fan-out over matching subscriptions; shared by the in-process bus and the
/// MQTT client's inbound path.
class SubscriptionTable {
 public:
  SubscriptionPtr add(std::string_view filter, size_t capacity = Subscription::kDefaultCapacity);
  void dispatch(const std::string& topic, std::string_view payload);
  std::vector<std::string> filters() const;
  void close_all();

 private:
  mutable std::shared_mutex mu_;
  std::vector<SubscriptionPtr> subs_;
};

/// In-process backend. Starts connected; disconnect()/connect() exist so the
/// NotConnected path is testable.
class InprocBus final : public Transport {
 public:
  InprocBus() = default;
  ~InprocBus() override;

  void publish(std::string_view topic, std::string_view payload) override;
  SubscriptionPtr subscribe(std::string_view filter) override;
  bool connected() const override;

  void connect();
  void disconnect();

 private:
  SubscriptionTable table_;
  std::atomic<bool> connected_{true};
};

/// Decorator that re-publishes a fraction of messages to simulate QoS 1
/// redelivery. Duplicates follow their original immediately so ordering per
/// (publisher, topic) is preserved.
class DuplicatingTransport final : public Transport {
 public:
  DuplicatingTransport(Transport& inner, double duplicate_fraction, uint64_t seed);

  void publish(std::string_view topic, std::string_view payload) override;
  SubscriptionPtr subscribe(std::string_view filter) override;
  bool connected() const override;

  uint64_t duplicates() const;

 private:
  Transport& inner_;
  double fraction_;
  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  uint64_t duplicates_ = 0;
};

/// Reconnect delays: initial, doubling, capped at max, then +-jitter.
struct BackoffPolicy {
  int64_t initial_ms = 100;
  int64_t max_ms = 10'000;
  double jitter = 0.2;

  void validate() const;
  int64_t base_delay_ms(int attempt) const;
  int64_t jittered_delay_ms(int attempt, std::mt19937_64& rng) const;
};

enum class TransportBackend { kInproc, kMqtt };

struct TransportConfig {
  TransportBackend backend = TransportBackend::kInproc;
  std::string broker_uri;  // mqtt://host:port
  std::string client_id = "mdml";
  BackoffPolicy backoff;
  int keepalive_s = 30;

  /// "inproc" / "inproc://" or "mqtt://host[:port]" (also tcp://).
  static TransportConfig from_uri(std::string_view uri, std::string client_id = "mdml");
};

enum class TransportStatus { kConnected, kDisconnected };

}  // namespace mdml
