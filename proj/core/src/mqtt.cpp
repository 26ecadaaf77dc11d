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

#include "mdml/mqtt.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <random>

#include <spdlog/spdlog.h>

#include "mdml/error.hpp"
#include "mdml/topic.hpp"

namespace mdml {
namespace mqtt {
namespace {

constexpr size_t kMaxRemainingLength = 268'435'455;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xFF));
}

void put_str(std::string& out, std::string_view s) {
  if (s.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "mqtt string too long");
  put_u16(out, static_cast<uint16_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(data_[pos_++]);
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>((static_cast<uint8_t>(data_[pos_]) << 8) |
                                             static_cast<uint8_t>(data_[pos_ + 1]));
    pos_ += 2;
    return v;
  }
  std::string str() {
    const uint16_t n = u16();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string rest() {
    std::string s(data_.substr(pos_));
    pos_ = data_.size();
    return s;
  }
  bool done() const { return pos_ >= data_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::kParseError, "truncated mqtt packet");
  }
  std::string_view data_;
  size_t pos_ = 0;
};

std::string simple(PacketType type, uint8_t flags, std::string body) {
  return serialize(Packet{type, flags, std::move(body)});
}

}  // namespace

std::string encode_remaining_length(size_t n) {
  if (n > kMaxRemainingLength) throw Error(ErrorCode::kInvalidArgument, "mqtt packet too large");
  std::string out;
  do {
    uint8_t byte = n % 128;
    n /= 128;
    if (n > 0) byte |= 0x80;
    out.push_back(static_cast<char>(byte));
  } while (n > 0);
  return out;
}

std::string serialize(const Packet& p) {
  std::string out;
  out.push_back(static_cast<char>((static_cast<uint8_t>(p.type) << 4) | (p.flags & 0x0F)));
  out += encode_remaining_length(p.body.size());
  out += p.body;
  return out;
}

std::string connect_packet(std::string_view client_id, uint16_t keepalive_s, bool clean_session) {
  std::string body;
  put_str(body, "MQTT");
  body.push_back(4);  // protocol level 3.1.1
  body.push_back(clean_session ? 0x02 : 0x00);
  put_u16(body, keepalive_s);
  put_str(body, client_id);
  return simple(PacketType::kConnect, 0, std::move(body));
}

std::string connack_packet(uint8_t return_code) {
  return simple(PacketType::kConnack, 0, std::string{'\0', static_cast<char>(return_code)});
}

std::string publish_packet(const PublishPacket& p) {
  std::string body;
  put_str(body, p.topic);
  if (p.qos > 0) put_u16(body, p.packet_id);
  body += p.payload;
  const uint8_t flags = static_cast<uint8_t>((p.dup ? 0x08 : 0) | ((p.qos & 3) << 1));
  return simple(PacketType::kPublish, flags, std::move(body));
}

std::string puback_packet(uint16_t packet_id) {
  std::string body;
  put_u16(body, packet_id);
  return simple(PacketType::kPuback, 0, std::move(body));
}

std::string subscribe_packet(uint16_t packet_id, const std::vector<std::string>& filters, int qos) {
  std::string body;
  put_u16(body, packet_id);
  for (const auto& f : filters) {
    put_str(body, f);
    body.push_back(static_cast<char>(qos));
  }
  return simple(PacketType::kSubscribe, 0x02, std::move(body));
}

std::string suback_packet(uint16_t packet_id, const std::vector<uint8_t>& granted) {
  std::string body;
  put_u16(body, packet_id);
  for (auto g : granted) body.push_back(static_cast<char>(g));
  return simple(PacketType::kSuback, 0, std::move(body));
}

std::string unsubscribe_packet(uint16_t packet_id, const std::vector<std::string>& filters) {
  std::string body;
  put_u16(body, packet_id);
  for (const auto& f : filters) put_str(body, f);
  return simple(PacketType::kUnsubscribe, 0x02, std::move(body));
}

std::string unsuback_packet(uint16_t packet_id) {
  std::string body;
  put_u16(body, packet_id);
  return simple(PacketType::kUnsuback, 0, std::move(body));
}

std::string pingreq_packet() { return simple(PacketType::kPingreq, 0, {}); }
std::string pingresp_packet() { return simple(PacketType::kPingresp, 0, {}); }
std::string disconnect_packet() { return simple(PacketType::kDisconnect, 0, {}); }

std::optional<Packet> parse_packet(std::string_view buf, size_t& consumed) {
  consumed = 0;
  if (buf.size() < 2) return std::nullopt;
  size_t len = 0;
  size_t multiplier = 1;
  size_t i = 1;
  while (true) {
    if (i >= buf.size()) return std::nullopt;
    if (i > 4) throw Error(ErrorCode::kParseError, "mqtt remaining length exceeds 4 bytes");
    const auto byte = static_cast<uint8_t>(buf[i]);
    len += (byte & 0x7F) * multiplier;
    multiplier *= 128;
    ++i;
    if ((byte & 0x80) == 0) break;
  }
  if (buf.size() < i + len) return std::nullopt;
  const auto first = static_cast<uint8_t>(buf[0]);
  const uint8_t type = first >> 4;
  if (type == 0 || type == 15) throw Error(ErrorCode::kParseError, "reserved mqtt packet type");
  consumed = i + len;
  return Packet{static_cast<PacketType>(type), static_cast<uint8_t>(first & 0x0F),
                std::string(buf.substr(i, len))};
}

PublishPacket parse_publish(const Packet& p) {
  if (p.type != PacketType::kPublish) throw Error(ErrorCode::kParseError, "not a PUBLISH");
  PublishPacket out;
  out.dup = (p.flags & 0x08) != 0;
  out.qos = (p.flags >> 1) & 3;
  if (out.qos == 3) throw Error(ErrorCode::kParseError, "invalid qos 3");
  Reader r(p.body);
  out.topic = r.str();
  if (out.qos > 0) out.packet_id = r.u16();
  out.payload = r.rest();
  return out;
}

uint16_t parse_packet_id(const Packet& p) {
  Reader r(p.body);
  return r.u16();
}

ConnectInfo parse_connect(const Packet& p) {
  Reader r(p.body);
  if (r.str() != "MQTT") throw Error(ErrorCode::kParseError, "unsupported protocol name");
  if (r.u8() != 4) throw Error(ErrorCode::kParseError, "unsupported protocol level");
  const uint8_t flags = r.u8();
  ConnectInfo info;
  info.clean_session = (flags & 0x02) != 0;
  info.keepalive_s = r.u16();
  info.client_id = r.str();
  return info;
}

SubscribeInfo parse_subscribe(const Packet& p) {
  Reader r(p.body);
  SubscribeInfo info;
  info.packet_id = r.u16();
  while (!r.done()) {
    std::string f = r.str();
    const int qos = r.u8();
    info.filters.emplace_back(std::move(f), qos);
  }
  return info;
}

SubscribeInfo parse_unsubscribe(const Packet& p) {
  Reader r(p.body);
  SubscribeInfo info;
  info.packet_id = r.u16();
  while (!r.done()) info.filters.emplace_back(r.str(), 0);
  return info;
}

Socket::~Socket() { close(); }

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    rbuf_ = std::move(o.rbuf_);
    o.fd_ = -1;
  }
  return *this;
}

Socket Socket::connect_tcp(const std::string& host, uint16_t port, int timeout_ms) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::kIoError, "resolve " + host + ": " + gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  std::string last_error = "no addresses";
  for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!s.valid()) continue;
    const int flags = ::fcntl(s.fd(), F_GETFL, 0);
    ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd pfd{s.fd(), POLLOUT, 0};
      rc = ::poll(&pfd, 1, timeout_ms);
      if (rc == 1) {
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
        errno = err;
      } else {
        rc = -1;
        errno = ETIMEDOUT;
      }
    }
    if (rc == 0) {
      ::fcntl(s.fd(), F_SETFL, flags);
      int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return s;
    }
    last_error = std::strerror(errno);
  }
  throw Error(ErrorCode::kIoError, "connect " + host + ":" + service + ": " + last_error);
}

void Socket::write_all(std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoError, std::string("send: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<size_t>(n));
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  rbuf_.clear();
}

std::optional<Packet> Socket::read_packet(int timeout_ms) {
  bool waited = false;
  while (true) {
    size_t consumed = 0;
    if (auto p = parse_packet(rbuf_, consumed)) {
      rbuf_.erase(0, consumed);
      return p;
    }
    if (waited && rbuf_.empty()) return std::nullopt;
    pollfd pfd{fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoError, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) {
      // partial packets keep waiting; an idle socket reports a timeout
      if (rbuf_.empty()) return std::nullopt;
      waited = true;
      continue;
    }
    char buf[16384];
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n == 0) throw Error(ErrorCode::kIoError, "connection closed by peer");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error(ErrorCode::kIoError, std::string("recv: ") + std::strerror(errno));
    }
    rbuf_.append(buf, static_cast<size_t>(n));
  }
}

}  // namespace mqtt

namespace {

void parse_broker_uri(const std::string& uri, std::string& host, uint16_t& port) {
  std::string_view rest = uri;
  if (const auto pos = rest.find("://"); pos != std::string_view::npos) rest.remove_prefix(pos + 3);
  if (const auto slash = rest.find('/'); slash != std::string_view::npos) rest = rest.substr(0, slash);
  if (rest.empty()) throw Error(ErrorCode::kInvalidArgument, "broker uri has no host: " + uri);
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos) {
    host = std::string(rest);
    port = 1883;
    return;
  }
  host = std::string(rest.substr(0, colon));
  const int p = std::stoi(std::string(rest.substr(colon + 1)));
  if (p <= 0 || p > 65535) throw Error(ErrorCode::kInvalidArgument, "bad broker port in " + uri);
  port = static_cast<uint16_t>(p);
}

}  // namespace

MqttTransport::MqttTransport(TransportConfig config, Clock& clock)
    : config_(std::move(config)), clock_(clock) {
  config_.backoff.validate();
  parse_broker_uri(config_.broker_uri, host_, port_);
  worker_ = std::jthread([this](std::stop_token st) { run(st); });
}

MqttTransport::~MqttTransport() {
  shutdown();
  table_.close_all();
}

void MqttTransport::shutdown() {
  if (worker_.joinable()) {
    worker_.request_stop();
    cv_.notify_all();
    worker_.join();
  }
}

void MqttTransport::set_status_listener(StatusListener listener) {
  std::lock_guard lock(mu_);
  listener_ = std::move(listener);
}

bool MqttTransport::connected() const {
  std::lock_guard lock(mu_);
  return connected_;
}

bool MqttTransport::wait_connected(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return connected_; });
}

std::vector<int64_t> MqttTransport::backoff_history() const {
  std::lock_guard lock(mu_);
  return backoff_history_;
}

uint16_t MqttTransport::next_packet_id_locked() {
  for (int tries = 0; tries < 0x10000; ++tries) {
    ++last_pid_;
    if (last_pid_ == 0) continue;
    if (!inflight_.contains(last_pid_) && !pending_acks_.contains(last_pid_)) return last_pid_;
  }
  throw Error(ErrorCode::kIoError, "mqtt packet ids exhausted");
}

void MqttTransport::send(std::string_view bytes) {
  std::lock_guard lock(write_mu_);
  try {
    sock_.write_all(bytes);
    last_send_us_ = clock_.now_us();
  } catch (const Error&) {
    // the session loop sees the broken socket and reconnects
    sock_.shutdown();
  }
}

void MqttTransport::publish(std::string_view topic, std::string_view payload) {
  if (!is_valid_topic_name(topic)) {
    throw Error(ErrorCode::kTopicInvalid, "'" + std::string(topic) + "'");
  }
  std::string packet;
  {
    std::lock_guard lock(mu_);
    if (!connected_) throw Error(ErrorCode::kNotConnected, "mqtt client is not connected to " + host_);
    mqtt::PublishPacket p{std::string(topic), std::string(payload), 1, false, next_packet_id_locked()};
    packet = mqtt::publish_packet(p);
    inflight_.emplace(p.packet_id, packet);
  }
  send(packet);
}

SubscriptionPtr MqttTransport::subscribe(std::string_view filter) {
  auto sub = table_.add(filter);
  uint16_t pid = 0;
  {
    std::lock_guard lock(mu_);
    if (!connected_) return sub;  // sent on (re)connect
    pid = next_packet_id_locked();
    pending_acks_.insert(pid);
  }
  send(mqtt::subscribe_packet(pid, {std::string(filter)}, 1));
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, std::chrono::seconds(5), [&] { return !pending_acks_.contains(pid) || !connected_; });
  pending_acks_.erase(pid);
  return sub;
}

void MqttTransport::set_connected(bool up) {
  StatusListener listener;
  {
    std::lock_guard lock(mu_);
    if (connected_ == up) return;
    connected_ = up;
    if (!up) pending_acks_.clear();
    listener = listener_;
  }
  cv_.notify_all();
  if (up) {
    spdlog::info("mqtt connected to {}:{}", host_, port_);
  } else {
    spdlog::warn("mqtt disconnected from {}:{}", host_, port_);
  }
  if (listener) listener(up ? TransportStatus::kConnected : TransportStatus::kDisconnected);
}

bool MqttTransport::connect_once(std::stop_token stop) {
  mqtt::Socket s;
  try {
    s = mqtt::Socket::connect_tcp(host_, port_, 2000);
    s.write_all(mqtt::connect_packet(config_.client_id, static_cast<uint16_t>(config_.keepalive_s), true));
    std::optional<mqtt::Packet> ack;
    for (int i = 0; i < 25 && !ack && !stop.stop_requested(); ++i) ack = s.read_packet(200);
    if (!ack || ack->type != mqtt::PacketType::kConnack || ack->body.size() != 2 || ack->body[1] != 0) {
      return false;
    }
  } catch (const Error& e) {
    spdlog::debug("mqtt connect failed: {}", e.what());
    return false;
  }

  std::vector<std::string> resend;
  std::string resubscribe;
  {
    std::lock_guard lock(mu_);
    for (auto& [pid, bytes] : inflight_) {
      std::string dup = bytes;
      dup[0] = static_cast<char>(dup[0] | 0x08);
      resend.push_back(std::move(dup));
    }
    if (auto filters = table_.filters(); !filters.empty()) {
      resubscribe = mqtt::subscribe_packet(next_packet_id_locked(), filters, 1);
    }
  }
  {
    std::lock_guard lock(write_mu_);
    sock_ = std::move(s);
    try {
      if (!resubscribe.empty()) sock_.write_all(resubscribe);
      for (const auto& r : resend) sock_.write_all(r);
    } catch (const Error&) {
      sock_.close();
      return false;
    }
    last_send_us_ = clock_.now_us();
  }
  set_connected(true);
  return true;
}

void MqttTransport::handle(const mqtt::Packet& p) {
  switch (p.type) {
    case mqtt::PacketType::kPublish: {
      auto pub = mqtt::parse_publish(p);
      table_.dispatch(pub.topic, pub.payload);
      if (pub.qos == 1) send(mqtt::puback_packet(pub.packet_id));
      break;
    }
    case mqtt::PacketType::kPuback: {
      const uint16_t pid = mqtt::parse_packet_id(p);
      std::lock_guard lock(mu_);
      inflight_.erase(pid);
      break;
    }
    case mqtt::PacketType::kSuback:
    case mqtt::PacketType::kUnsuback: {
      const uint16_t pid = mqtt::parse_packet_id(p);
      {
        std::lock_guard lock(mu_);
        pending_acks_.erase(pid);
      }
      cv_.notify_all();
      break;
    }
    default:
      break;
  }
}

void MqttTransport::session_loop(std::stop_token stop) {
  const int64_t ping_every_us = std::max(1, config_.keepalive_s) * 1'000'000LL / 2;
  while (!stop.stop_requested()) {
    try {
      auto p = sock_.read_packet(100);
      if (p) handle(*p);
    } catch (const Error& e) {
      spdlog::debug("mqtt session ended: {}", e.what());
      break;
    }
    int64_t last_send = 0;
    {
      std::lock_guard lock(write_mu_);
      last_send = last_send_us_;
    }
    if (clock_.now_us() - last_send >= ping_every_us) send(mqtt::pingreq_packet());
  }
  if (stop.stop_requested()) send(mqtt::disconnect_packet());
  set_connected(false);
  std::lock_guard lock(write_mu_);
  sock_.close();
}

void MqttTransport::run(std::stop_token stop) {
  std::mt19937_64 rng(std::hash<std::string>{}(config_.client_id));
  int attempt = 0;
  while (!stop.stop_requested()) {
    if (connect_once(stop)) {
      attempt = 0;
      session_loop(stop);
      continue;  // reconnect immediately once, then back off
    }
    if (stop.stop_requested()) break;
    const int64_t delay_ms = config_.backoff.jittered_delay_ms(attempt++, rng);
    {
      std::lock_guard lock(mu_);
      backoff_history_.push_back(delay_ms);
    }
    clock_.sleep_for(delay_ms * 1000, stop);
  }
}

std::unique_ptr<Transport> make_transport(const TransportConfig& config) {
  if (config.backend == TransportBackend::kInproc) return std::make_unique<InprocBus>();
  return std::make_unique<MqttTransport>(config);
}

}  // namespace mdml
