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

#include "mdml/gateway.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <condition_variable>
#include <fstream>

#include "mdml/error.hpp"
#include "mdml/topic.hpp"

namespace mdml {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

// ---------------------------------------------------------------------------
// tokens

TokenTable TokenTable::from_json(const Json& j) {
  TokenTable t;
  try {
    for (const auto& e : j.at("tokens")) {
      TokenRecord r;
      r.token = e.at("token").get<std::string>();
      r.principal = e.value("principal", "");
      for (const auto& s : e.at("scopes")) {
        auto scope = s.get<std::string>();
        if (scope != kScopeRead && scope != kScopeControl) {
          throw Error(ErrorCode::kInvalidArgument, "unknown scope '" + scope + "'");
        }
        r.scopes.insert(scope);
      }
      if (e.contains("expires_us") && !e.at("expires_us").is_null()) {
        r.expiry_us = e.at("expires_us").get<int64_t>();
      }
      if (r.token.empty()) throw Error(ErrorCode::kInvalidArgument, "empty token");
      t.add(std::move(r));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("token table: ") + e.what());
  }
  return t;
}

TokenTable TokenTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  try {
    return from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

void TokenTable::add(TokenRecord record) {
  auto key = record.token;
  tokens_.insert_or_assign(std::move(key), std::move(record));
}

TokenRecord TokenTable::introspect(std::string_view token, int64_t now_us) const {
  auto it = tokens_.find(token);
  if (it == tokens_.end()) throw Error(ErrorCode::kUnauthorized, "unknown token");
  if (it->second.expiry_us && now_us >= *it->second.expiry_us) {
    throw Error(ErrorCode::kUnauthorized, "token expired");
  }
  return it->second;
}

OrderedJson LiveEvent::to_json() const {
  OrderedJson j;
  j["channel"] = channel;
  j["experiment_id"] = experiment_id;
  j["ts_us"] = ts_us;
  j["body"] = body;
  return j;
}

// ---------------------------------------------------------------------------
// helpers

namespace {

std::string percent_decode(std::string_view s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      int v = 0;
      auto [p, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
      if (ec == std::errc() && p == s.data() + i + 3) {
        out.push_back(static_cast<char>(v));
        i += 2;
        continue;
      }
    }
    out.push_back(s[i] == '+' ? ' ' : s[i]);
  }
  return out;
}

std::map<std::string, std::string> parse_query(std::string_view q) {
  std::map<std::string, std::string> out;
  while (!q.empty()) {
    auto amp = q.find('&');
    auto part = q.substr(0, amp);
    auto eq = part.find('=');
    if (!part.empty()) {
      out[percent_decode(part.substr(0, eq))] =
          eq == std::string_view::npos ? "" : percent_decode(part.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  return out;
}

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  while (!path.empty()) {
    if (path.front() == '/') {
      path.remove_prefix(1);
      continue;
    }
    auto slash = path.find('/');
    parts.push_back(path.substr(0, slash));
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash);
  }
  return parts;
}

HttpResult json_result(int status, const OrderedJson& body) { return {status, body.dump()}; }

HttpResult error_result(int status, std::string_view error, std::string_view detail = {}) {
  OrderedJson j;
  j["error"] = error;
  if (!detail.empty()) j["detail"] = detail;
  return json_result(status, j);
}

std::optional<int64_t> parse_i64(std::string_view s) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string_view bearer(std::string_view authorization) {
  constexpr std::string_view prefix = "Bearer ";
  if (authorization.size() <= prefix.size() || !authorization.starts_with(prefix)) return {};
  return authorization.substr(prefix.size());
}

OrderedJson ring_record(const Envelope& e) {
  OrderedJson r;
  r["seq"] = e.seq;
  r["ts_us"] = e.ts_us;
  r["fields"] = schema_to_json(e.schema);
  OrderedJson full = to_json(e);
  if (e.content_type() == ContentType::kRows) {
    r["rows"] = full["payload"];
  } else {
    r["blob"] = {{"media_type", e.blob().media_type}, {"bytes", e.blob().data.size()}};
  }
  return r;
}

constexpr auto kCloseUnauthorized = static_cast<websocket::close_code>(4401);
constexpr auto kCloseOverflow = static_cast<websocket::close_code>(4008);

std::string_view sv(beast::string_view s) { return {s.data(), s.size()}; }

}  // namespace

// ---------------------------------------------------------------------------
// Gateway

struct Gateway::Client {
  std::optional<std::string> experiment;
  std::set<std::string, std::less<>> channels;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> queue;
  bool overflow = false;
  bool closed = false;
};

Gateway::Gateway(Transport& transport, TokenTable tokens, GatewayOptions options, Clock& clock)
    : transport_(transport), tokens_(std::move(tokens)), options_(std::move(options)), clock_(clock) {
  if (options_.ring_size == 0 || options_.ws_queue_limit == 0) {
    throw Error(ErrorCode::kInvalidArgument, "ring size and queue limit must be positive");
  }
  for (const auto& e : options_.experiments) {
    require_identifier(e, "experiment_id");
    experiments_.insert(e);
  }
}

Gateway::~Gateway() { stop(); }

void Gateway::set_status_provider(StatusProvider provider) {
  std::lock_guard lock(mu_);
  status_provider_ = std::move(provider);
}

void Gateway::start() {
  if (running_) return;
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(ErrorCode::kIoError, "socket failed");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.bind_address.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error(ErrorCode::kInvalidArgument, "bad bind address '" + options_.bind_address + "'");
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 64) != 0) {
    int err = errno;
    ::close(fd);
    throw Error(ErrorCode::kIoError, "cannot listen on " + options_.bind_address + ":" +
                                         std::to_string(options_.port) + ": " + std::strerror(err));
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  listen_fd_ = fd;

  for (auto [filter, channel] : {std::pair{"mdml/v1/+/data/+", "data"},
                                 std::pair{"mdml/v1/+/results/+", "results"},
                                 std::pair{"mdml/v1/+/events", "status"}}) {
    auto sub = transport_.subscribe(filter);
    taps_.emplace_back([this, sub, ch = std::string(channel)](std::stop_token st) { tap_loop(sub, ch, st); });
  }
  acceptor_ = std::jthread([this](std::stop_token st) { accept_loop(st); });
  running_ = true;
  spdlog::info("gateway listening on {}:{}", options_.bind_address, port_);
}

void Gateway::stop() {
  if (!running_) return;
  running_ = false;
  acceptor_.request_stop();
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  listen_fd_ = -1;
  {
    std::lock_guard lock(mu_);
    for (auto& c : clients_) {
      std::lock_guard cl(c->mu);
      c->closed = true;
      c->cv.notify_all();
    }
  }
  std::vector<std::jthread> threads;
  {
    std::lock_guard lock(conn_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    threads = std::move(conn_threads_);
  }
  for (auto& t : threads) t.request_stop();
  threads.clear();
  for (auto& t : taps_) t.request_stop();
  taps_.clear();
}

size_t Gateway::ws_clients() const {
  std::lock_guard lock(mu_);
  return clients_.size();
}

void Gateway::tap_loop(SubscriptionPtr sub, std::string channel, std::stop_token stop) {
  while (!stop.stop_requested()) {
    auto d = sub->pop(std::chrono::milliseconds(50));
    if (!d) continue;
    auto parsed = parse_topic(d->topic);
    if (!parsed) continue;
    LiveEvent ev;
    ev.channel = channel;
    ev.experiment_id = parsed->experiment_id;
    ev.ts_us = clock_.now_us();
    try {
      if (channel == "data") {
        Envelope e = decode(d->payload);
        {
          std::lock_guard lock(mu_);
          experiments_.insert(parsed->experiment_id);
          auto& ring = rings_[{parsed->experiment_id, e.device_id}];
          ring.push_back(ring_record(e));
          while (ring.size() > options_.ring_size) ring.pop_front();
        }
        ev.body = to_json(e);
      } else {
        ev.body = OrderedJson::parse(d->payload);
        StatusProvider provider;
        {
          std::lock_guard lock(mu_);
          experiments_.insert(parsed->experiment_id);
          if (channel == "status") provider = status_provider_;
        }
        // Node state changes carry the node's full status when it is known.
        if (provider && ev.body.is_object() && ev.body.contains("node")) {
          const auto node = ev.body.value("node", "");
          for (const auto& st : provider()) {
            if (st.node_id != node) continue;
            auto full = st.to_json();
            full["state"] = ev.body["state"];  // the state this event reports
            ev.body = std::move(full);
          }
        }
      }
    } catch (const std::exception& e) {
      spdlog::debug("gateway: dropping malformed {} message on {}: {}", channel, d->topic, e.what());
      continue;
    }
    broadcast(ev);
  }
  sub->close();
}

void Gateway::broadcast(const LiveEvent& event) {
  std::string text;
  std::lock_guard lock(mu_);
  for (auto& c : clients_) {
    if (!c->channels.contains(event.channel)) continue;
    if (c->experiment && *c->experiment != event.experiment_id) continue;
    if (text.empty()) text = event.to_json().dump();
    std::lock_guard cl(c->mu);
    if (c->closed || c->overflow) continue;
    if (c->queue.size() >= options_.ws_queue_limit) {
      c->overflow = true;
    } else {
      c->queue.push_back(text);
    }
    c->cv.notify_one();
  }
}

std::optional<TokenRecord> Gateway::authorize(std::string_view authorization) const {
  auto token = bearer(authorization);
  if (token.empty()) return std::nullopt;
  try {
    return tokens_.introspect(token, clock_.now_us());
  } catch (const Error&) {
    return std::nullopt;
  }
}

HttpResult Gateway::handle_http(std::string_view method, std::string_view target,
                                std::string_view authorization, std::string_view body) {
  auto qpos = target.find('?');
  std::string_view path = target.substr(0, qpos);
  std::string_view query = qpos == std::string_view::npos ? std::string_view{} : target.substr(qpos + 1);
  auto parts = split_path(path);
  if (parts.size() < 2 || parts[0] != "api" || parts[1] != "v1") return error_result(404, "not found");

  auto who = authorize(authorization);
  if (!who) return error_result(401, "unauthorized");

  auto need = [&](std::string_view scope) -> std::optional<HttpResult> {
    if (who->has_scope(scope)) return std::nullopt;
    OrderedJson j;
    j["error"] = "forbidden";
    j["required_scope"] = scope;
    return json_result(403, j);
  };
  auto method_is = [&](std::string_view m) { return method == m; };

  // /api/v1/experiments
  if (parts.size() == 3 && parts[2] == "experiments") {
    if (!method_is("GET")) return error_result(405, "method not allowed");
    if (auto r = need(kScopeRead)) return *r;
    OrderedJson j;
    std::lock_guard lock(mu_);
    j["experiments"] = OrderedJson(experiments_);
    return json_result(200, j);
  }
  // /api/v1/pipeline/status
  if (parts.size() == 4 && parts[2] == "pipeline" && parts[3] == "status") {
    if (!method_is("GET")) return error_result(405, "method not allowed");
    if (auto r = need(kScopeRead)) return *r;
    StatusProvider provider;
    {
      std::lock_guard lock(mu_);
      provider = status_provider_;
    }
    OrderedJson nodes = OrderedJson::array();
    if (provider) {
      for (const auto& s : provider()) nodes.push_back(s.to_json());
    }
    OrderedJson j;
    j["nodes"] = std::move(nodes);
    return json_result(200, j);
  }
  // /api/v1/experiments/{id}/streams/{device}
  if (parts.size() == 6 && parts[2] == "experiments" && parts[4] == "streams") {
    if (!method_is("GET")) return error_result(405, "method not allowed");
    if (auto r = need(kScopeRead)) return *r;
    return streams(parts[3], parts[5], query);
  }
  // /api/v1/experiments/{id}/control/{device}
  if (parts.size() == 6 && parts[2] == "experiments" && parts[4] == "control") {
    if (!method_is("POST")) return error_result(405, "method not allowed");
    if (auto r = need(kScopeControl)) return *r;
    return control(parts[3], parts[5], body, *who);
  }
  return error_result(404, "not found");
}

HttpResult Gateway::streams(std::string_view exp, std::string_view device, std::string_view query) {
  auto q = parse_query(query);
  std::optional<int64_t> since;
  size_t limit = 100;
  if (auto it = q.find("since_us"); it != q.end()) {
    since = parse_i64(it->second);
    if (!since) return error_result(400, "bad request", "since_us must be an integer");
  }
  if (auto it = q.find("limit"); it != q.end()) {
    auto l = parse_i64(it->second);
    if (!l || *l < 1) return error_result(400, "bad request", "limit must be a positive integer");
    limit = static_cast<size_t>(std::min<int64_t>(*l, static_cast<int64_t>(options_.ring_size)));
  }
  std::lock_guard lock(mu_);
  if (!experiments_.contains(exp)) return error_result(404, "unknown experiment");
  auto it = rings_.find({std::string(exp), std::string(device)});
  if (it == rings_.end()) return error_result(404, "unknown device");
  const auto& ring = it->second;
  // Newest `limit` records with ts_us > since, oldest first.
  std::vector<const OrderedJson*> picked;
  for (auto r = ring.rbegin(); r != ring.rend() && picked.size() < limit; ++r) {
    if (since && (*r)["ts_us"].get<int64_t>() <= *since) continue;
    picked.push_back(&*r);
  }
  OrderedJson records = OrderedJson::array();
  for (auto p = picked.rbegin(); p != picked.rend(); ++p) records.push_back(**p);
  OrderedJson j;
  j["experiment_id"] = exp;
  j["device_id"] = device;
  j["records"] = std::move(records);
  return json_result(200, j);
}

HttpResult Gateway::control(std::string_view exp, std::string_view device, std::string_view body,
                            const TokenRecord& who) {
  {
    std::lock_guard lock(mu_);
    if (!experiments_.contains(exp)) return error_result(404, "unknown experiment");
  }
  if (!is_valid_identifier(device)) return error_result(404, "unknown device");
  std::pair<std::string, std::map<std::string, ParamValue>> cmd;
  try {
    cmd = parse_command_body(Json::parse(body));
  } catch (const Json::exception& e) {
    return error_result(400, "bad request", e.what());
  } catch (const Error& e) {
    return error_result(400, "bad request", e.what());
  }

  std::lock_guard lock(control_mu_);
  uint64_t& next = control_seq_[{std::string(exp), std::string(device)}];
  ControlMessage m;
  m.experiment_id = std::string(exp);
  m.device_id = std::string(device);
  m.seq = next;
  m.ts_us = clock_.now_us();
  m.command_name = cmd.first;
  m.params = std::move(cmd.second);
  std::string topic = topic_for(TopicKind::kControl, exp, device);
  try {
    transport_.publish(topic, encode(m));
  } catch (const Error& e) {
    return error_result(503, "unavailable", e.what());
  }
  ++next;
  spdlog::info("gateway: {} sent {} to {}/{} (seq {})", who.principal, m.command_name, exp, device, m.seq);
  OrderedJson j;
  j["seq"] = m.seq;
  j["topic"] = topic;
  return json_result(200, j);
}

void Gateway::accept_loop(std::stop_token stop) {
  while (!stop.stop_requested()) {
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    timeval tv{30, 0};
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    std::lock_guard lock(conn_mu_);
    conn_fds_.insert(fd);
    conn_threads_.emplace_back([this, fd](std::stop_token st) {
      try {
        serve(fd, st);
      } catch (const std::exception& e) {
        spdlog::debug("gateway connection: {}", e.what());
      }
      std::lock_guard l(conn_mu_);
      conn_fds_.erase(fd);
    });
  }
}

void Gateway::serve(int fd, std::stop_token stop) {
  asio::io_context ioc;
  tcp::socket sock(ioc);
  sock.assign(tcp::v4(), fd);
  beast::flat_buffer buffer;

  for (;;) {
    http::request<http::string_body> req;
    beast::error_code ec;
    http::read(sock, buffer, req, ec);
    if (ec) return;

    if (websocket::is_upgrade(req)) {
      std::string target(req.target());
      websocket::stream<tcp::socket> ws(std::move(sock));
      ws.set_option(websocket::stream_base::decorator([](websocket::response_type& res) {
        res.set(http::field::server, "mdml-gateway");
      }));
      ws.accept(req, ec);
      if (ec) return;

      auto qpos = target.find('?');
      auto path = std::string_view(target).substr(0, qpos);
      auto q = parse_query(qpos == std::string::npos ? std::string_view{} : std::string_view(target).substr(qpos + 1));
      if (path != "/api/v1/ws") {
        ws.close(websocket::close_reason(websocket::close_code::policy_error, "unknown endpoint"), ec);
        return;
      }
      std::string token = q.count("token") ? q["token"] : std::string(bearer(sv(req[http::field::authorization])));
      std::optional<TokenRecord> who;
      try {
        who = tokens_.introspect(token, clock_.now_us());
      } catch (const Error&) {
      }
      if (!who || !who->has_scope(kScopeRead)) {
        ws.close(websocket::close_reason(kCloseUnauthorized, "unauthorized"), ec);
        return;
      }
      auto client = std::make_shared<Client>();
      if (q.count("experiment") && !q["experiment"].empty()) client->experiment = q["experiment"];
      std::string_view chans = q.count("channels") ? std::string_view(q["channels"]) : "data,results,status";
      while (!chans.empty()) {
        auto comma = chans.find(',');
        auto c = chans.substr(0, comma);
        if (c == "data" || c == "results" || c == "status") client->channels.insert(std::string(c));
        if (comma == std::string_view::npos) break;
        chans.remove_prefix(comma + 1);
      }
      {
        std::lock_guard lock(mu_);
        clients_.push_back(client);
      }
      ws.text(true);
      for (;;) {
        std::string msg;
        {
          std::unique_lock cl(client->mu);
          client->cv.wait(cl, [&] {
            return !client->queue.empty() || client->overflow || client->closed || stop.stop_requested();
          });
          // Events queued before the overflow are still delivered, then the close.
          if (client->queue.empty()) break;
          msg = std::move(client->queue.front());
          client->queue.pop_front();
        }
        ws.write(asio::buffer(msg), ec);
        if (ec) break;
      }
      bool overflow;
      {
        std::lock_guard cl(client->mu);
        overflow = client->overflow;
        client->closed = true;
      }
      {
        std::lock_guard lock(mu_);
        std::erase(clients_, client);
      }
      if (!ec) {
        if (overflow) {
          ws.close(websocket::close_reason(kCloseOverflow, "queue overflow"), ec);
        } else {
          ws.close(websocket::close_reason(websocket::close_code::going_away), ec);
        }
      }
      return;
    }

    HttpResult result;
    if (req.method() == http::verb::options) {
      result = {204, ""};
    } else {
      result = handle_http(sv(req.method_string()), sv(req.target()),
                           sv(req[http::field::authorization]), req.body());
    }
    http::response<http::string_body> res{static_cast<http::status>(result.status), req.version()};
    res.set(http::field::server, "mdml-gateway");
    res.set(http::field::access_control_allow_origin, "*");
    res.set(http::field::access_control_allow_headers, "Authorization, Content-Type");
    res.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
    if (!result.body.empty()) res.set(http::field::content_type, "application/json");
    res.body() = std::move(result.body);
    res.keep_alive(req.keep_alive());
    res.prepare_payload();
    http::write(sock, res, ec);
    if (ec || !res.keep_alive()) {
      sock.shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
  }
}

}  // namespace mdml
