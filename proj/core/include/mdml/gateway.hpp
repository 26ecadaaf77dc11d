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

#include <cstdint>
#include <deque>
#include <filesystem>
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
#include "mdml/envelope.hpp"
#include "mdml/pipeline.hpp"
#include "mdml/transport.hpp"

namespace mdml {

inline constexpr std::string_view kScopeRead = "read";
inline constexpr std::string_view kScopeControl = "control";

struct TokenRecord {
  std::string token;
  std::string principal;
  std::set<std::string, std::less<>> scopes;
  std::optional<int64_t> expiry_us;  // none: never expires

  bool has_scope(std::string_view scope) const { return scopes.contains(scope); }
};

/// Static bearer-token table.
///
/// File format: {"tokens":[{"token":..,"principal":..,"scopes":["read"],
/// "expires_us":..}]}; "expires_us" is optional.
class TokenTable {
 public:
  static TokenTable from_json(const Json& j);
  static TokenTable load(const std::filesystem::path& path);

  void add(TokenRecord record);

  /// Throws kUnauthorized for unknown or expired tokens.
  TokenRecord introspect(std::string_view token, int64_t now_us) const;

 private:
  std::map<std::string, TokenRecord, std::less<>> tokens_;
};

struct LiveEvent {
  std::string channel;  // data | results | status
  std::string experiment_id;
  int64_t ts_us = 0;    // server time
  OrderedJson body;

  OrderedJson to_json() const;
};

struct GatewayOptions {
  std::string bind_address = "127.0.0.1";
  uint16_t port = 8080;  // 0 picks a free port
  size_t ring_size = 10'000;
  size_t ws_queue_limit = 1'000;
  std::vector<std::string> experiments;  // known before any traffic
};

struct HttpResult {
  int status = 200;
  std::string body;
};

/// HTTP/WebSocket facade. Taps the transport directly (data, results and
/// events wildcards) and keeps a bounded ring of recent records per device.
class Gateway {
 public:
  using StatusProvider = std::function<std::vector<NodeStatus>()>;

  Gateway(Transport& transport, TokenTable tokens, GatewayOptions options = {},
          Clock& clock = SystemClock::instance());
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void set_status_provider(StatusProvider provider);

  /// Subscribes the taps and starts listening. Throws kIoError on bind failure.
  void start();
  void stop();
  uint16_t port() const noexcept { return port_; }

  /// Request handling without sockets. `target` is path plus query string.
  HttpResult handle_http(std::string_view method, std::string_view target,
                         std::string_view authorization, std::string_view body);

  size_t ws_clients() const;

  struct Client;

 private:
  void tap_loop(SubscriptionPtr sub, std::string channel, std::stop_token stop);
  void broadcast(const LiveEvent& event);
  void accept_loop(std::stop_token stop);
  void serve(int fd, std::stop_token stop);

  std::optional<TokenRecord> authorize(std::string_view authorization) const;
  HttpResult streams(std::string_view exp, std::string_view device, std::string_view query);
  HttpResult control(std::string_view exp, std::string_view device, std::string_view body,
                     const TokenRecord& who);

  Transport& transport_;
  TokenTable tokens_;
  GatewayOptions options_;
  Clock& clock_;
  uint16_t port_ = 0;
  int listen_fd_ = -1;

  StatusProvider status_provider_;

  mutable std::mutex mu_;
  std::set<std::string, std::less<>> experiments_;
  std::map<std::pair<std::string, std::string>, std::deque<OrderedJson>> rings_;
  std::vector<std::shared_ptr<Client>> clients_;

  std::mutex control_mu_;
  std::map<std::pair<std::string, std::string>, uint64_t> control_seq_;

  std::mutex conn_mu_;
  std::set<int> conn_fds_;
  std::vector<std::jthread> conn_threads_;

  std::vector<std::jthread> taps_;
  std::jthread acceptor_;
  bool running_ = false;
};

}  // namespace mdml
