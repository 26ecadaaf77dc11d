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
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "mdml/clock.hpp"
#include "mdml/transport.hpp"

namespace mdml {
namespace mqtt {

/// MQTT 3.1.1 control packet types.
enum class PacketType : uint8_t {
  kConnect = 1,
  kConnack = 2,
  kPublish = 3,
  kPuback = 4,
  kSubscribe = 8,
  kSuback = 9,
  kUnsubscribe = 10,
  kUnsuback = 11,
  kPingreq = 12,
  kPingresp = 13,
  kDisconnect = 14,
};

struct Packet {
  PacketType type;
  uint8_t flags = 0;
  std::string body;  // variable header + payload
};

struct PublishPacket {
  std::string topic;
  std::string payload;
  int qos = 0;
  bool dup = false;
  uint16_t packet_id = 0;
};

std::string encode_remaining_length(size_t n);
std::string serialize(const Packet& p);

std::string connect_packet(std::string_view client_id, uint16_t keepalive_s, bool clean_session);
std::string connack_packet(uint8_t return_code);
std::string publish_packet(const PublishPacket& p);
std::string puback_packet(uint16_t packet_id);
std::string subscribe_packet(uint16_t packet_id, const std::vector<std::string>& filters, int qos);
std::string suback_packet(uint16_t packet_id, const std::vector<uint8_t>& granted);
std::string unsubscribe_packet(uint16_t packet_id, const std::vector<std::string>& filters);
std::string unsuback_packet(uint16_t packet_id);
std::string pingreq_packet();
std::string pingresp_packet();
std::string disconnect_packet();

/// Parses one packet from the front of `buf`. Returns nullopt if more bytes
/// are needed; sets `consumed`. Throws kParseError on malformed framing.
std::optional<Packet> parse_packet(std::string_view buf, size_t& consumed);

PublishPacket parse_publish(const Packet& p);
uint16_t parse_packet_id(const Packet& p);

struct ConnectInfo {
  std::string client_id;
  uint16_t keepalive_s = 0;
  bool clean_session = true;
};
ConnectInfo parse_connect(const Packet& p);

struct SubscribeInfo {
  uint16_t packet_id = 0;
  std::vector<std::pair<std::string, int>> filters;
};
SubscribeInfo parse_subscribe(const Packet& p);
SubscribeInfo parse_unsubscribe(const Packet& p);

/// Blocking socket helpers shared by the client and the test broker.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  static Socket connect_tcp(const std::string& host, uint16_t port, int timeout_ms);

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void write_all(std::string_view data);
  /// Shuts down both directions without closing the descriptor.
  void shutdown();
  void close();

  /// Reads one packet, waiting at most `timeout_ms` for the first byte.
  /// Returns nullopt on timeout. Throws kIoError on EOF/error.
  std::optional<Packet> read_packet(int timeout_ms);

 private:
  int fd_ = -1;
  std::string rbuf_;
};

}  // namespace mqtt

/// MQTT 3.1.1 client backend: QoS 1 publishes and subscriptions, clean
/// sessions, exponential-backoff reconnect with resubscription.
class MqttTransport final : public Transport {
 public:
  using StatusListener = std::function<void(TransportStatus)>;

  explicit MqttTransport(TransportConfig config, Clock& clock = SystemClock::instance());
  ~MqttTransport() override;

  void publish(std::string_view topic, std::string_view payload) override;
  SubscriptionPtr subscribe(std::string_view filter) override;
  bool connected() const override;

  void set_status_listener(StatusListener listener);
  bool wait_connected(std::chrono::milliseconds timeout) const;

  /// Delays (ms) the reconnect loop has slept so far, after jitter.
  std::vector<int64_t> backoff_history() const;

  void shutdown();

 private:
  void run(std::stop_token stop);
  bool connect_once(std::stop_token stop);
  void session_loop(std::stop_token stop);
  void handle(const mqtt::Packet& p);
  void set_connected(bool up);
  uint16_t next_packet_id_locked();
  void send(std::string_view bytes);

  TransportConfig config_;
  Clock& clock_;
  std::string host_;
  uint16_t port_ = 1883;

  SubscriptionTable table_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mqtt::Socket sock_;
  std::mutex write_mu_;
  bool connected_ = false;
  uint16_t last_pid_ = 0;
  std::map<uint16_t, std::string> inflight_;  // serialized PUBLISH awaiting PUBACK
  std::set<uint16_t> pending_acks_;            // SUBSCRIBE/UNSUBSCRIBE awaiting ack
  std::vector<int64_t> backoff_history_;
  StatusListener listener_;
  int64_t last_send_us_ = 0;

  std::jthread worker_;
};

/// Builds the backend named by `config`.
std::unique_ptr<Transport> make_transport(const TransportConfig& config);

}  // namespace mdml
