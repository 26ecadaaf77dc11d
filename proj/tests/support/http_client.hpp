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

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

namespace mdml::testing {

struct HttpReply {
  int status = 0;
  std::string body;
  std::string allow_origin;
};

/// Blocking HTTP/1.1 request against 127.0.0.1:port. Empty token sends no
/// Authorization header.
HttpReply http_request(uint16_t port, const std::string& method, const std::string& target,
                       const std::string& token = {}, const std::string& body = {});

/// Minimal WebSocket client for gateway tests.
class WsClient {
 public:
  WsClient(uint16_t port, const std::string& target);
  ~WsClient();

  /// Next text message, or nullopt on timeout / close.
  std::optional<std::string> read(std::chrono::milliseconds timeout);
  /// Close code received from the server (0 until the connection closes).
  int close_code() const;
  bool closed() const;
  /// Stop reading so the server-side queue fills up.
  void stall();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace mdml::testing
