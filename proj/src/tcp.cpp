// Copyright 2026 The fedflag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedflag/tcp.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string_view>

#include "fedflag/error.hpp"

namespace fedflag::transport {

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw Error(ErrorCode::kTransport, what + ": " + std::strerror(errno));
}

void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      sys_fail("send");
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Reads exactly n bytes. Returns false on orderly EOF before the first byte.
bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw Error(ErrorCode::kTransport, "connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      sys_fail("recv");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

std::optional<ProtocolMessage> read_frame(int fd, std::size_t max_payload) {
  Bytes frame(4);
  if (!read_all(fd, frame.data(), 4)) return std::nullopt;
  const std::uint32_t len = (std::uint32_t{frame[0]} << 24) | (std::uint32_t{frame[1]} << 16) |
                            (std::uint32_t{frame[2]} << 8) | std::uint32_t{frame[3]};
  if (len < kHeaderBytes || len - kHeaderBytes > max_payload)
    throw Error(ErrorCode::kDecode, "frame length overflow");
  frame.resize(4 + std::size_t{len});
  if (!read_all(fd, frame.data() + 4, len))
    throw Error(ErrorCode::kTransport, "connection closed mid-frame");
  return decode_frame(frame, max_payload);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw Error(ErrorCode::kTransport, "cannot resolve host " + host);
  sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(port);
  return addr;
}

// Link-level control frames, distinguished from protocol control messages by
// an all-0xFF session id. Not counted in stats.
ProtocolMessage link_frame(PartyId self, std::string_view what) {
  ProtocolMessage m;
  m.session.fill(0xFF);
  m.sender = self;
  m.type = MsgType::kControl;
  m.payload.assign(what.begin(), what.end());
  return m;
}

bool is_link_frame(const ProtocolMessage& m, std::string_view what) {
  SessionId ff;
  ff.fill(0xFF);
  return m.type == MsgType::kControl && m.session == ff &&
         std::string_view(reinterpret_cast<const char*>(m.payload.data()), m.payload.size()) ==
             what;
}

}  // namespace

TcpAddress parse_tcp_address(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw Error(ErrorCode::kConfig, "expected host:port, got '" + s + "'");
  TcpAddress a;
  a.host = s.substr(0, colon);
  try {
    const unsigned long p = std::stoul(s.substr(colon + 1));
    if (p > 65535) throw std::out_of_range("port");
    a.port = static_cast<std::uint16_t>(p);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kConfig, "bad port in '" + s + "'");
  }
  return a;
}

struct TcpEndpoint::Link {
  PartyId peer;
  int fd = -1;
  std::mutex write_mu;
  std::thread reader;
};

TcpEndpoint::TcpEndpoint(PartyId self, TcpOptions opts) : self_(self), opts_(opts) {}

TcpEndpoint::~TcpEndpoint() { close(); }

std::uint16_t TcpEndpoint::listen(const std::string& host, std::uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) sys_fail("socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = resolve(host, port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) sys_fail("bind");
  if (::listen(listen_fd_, 64) < 0) sys_fail("listen");
  socklen_t len = sizeof addr;
  if (::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len) < 0)
    sys_fail("getsockname");
  return ntohs(addr.sin_port);
}

void TcpEndpoint::connect(const std::map<PartyId, TcpAddress>& peers) {
  const auto deadline = std::chrono::steady_clock::now() + opts_.connect_timeout;
  std::size_t to_accept = 0;
  for (const auto& [peer, addr] : peers) {
    if (peer == self_) continue;
    if (peer > self_) {
      ++to_accept;
      continue;
    }
    // Dial, retrying until the peer is listening.
    int fd = -1;
    while (true) {
      fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
      if (fd < 0) sys_fail("socket");
      sockaddr_in a = resolve(addr.host, addr.port);
      if (::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0) break;
      ::close(fd);
      if (std::chrono::steady_clock::now() >= deadline)
        throw Error(ErrorCode::kTransport, "cannot connect to " + to_string(peer));
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    set_nodelay(fd);
    const Bytes h = encode_frame(link_frame(self_, "hello"));
    write_all(fd, h.data(), h.size());
    auto link = std::make_unique<Link>();
    link->peer = peer;
    link->fd = fd;
    links_[peer] = std::move(link);
  }
  if (to_accept > 0 && listen_fd_ < 0)
    throw Error(ErrorCode::kTransport, "endpoint must listen before accepting peers");
  while (to_accept > 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, static_cast<int>(std::max<long long>(0, left.count())));
    if (pr < 0 && errno != EINTR) sys_fail("poll");
    if (pr == 0) throw Error(ErrorCode::kTimeout, "timed out waiting for peers to connect");
    if (pr < 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) sys_fail("accept");
    set_nodelay(fd);
    std::optional<ProtocolMessage> h;
    try {
      h = read_frame(fd, 1024);
    } catch (const Error&) {
      ::close(fd);
      throw;
    }
    if (!h || !is_link_frame(*h, "hello") || !peers.contains(h->sender) ||
        !(h->sender > self_) || links_.contains(h->sender)) {
      ::close(fd);
      throw Error(ErrorCode::kTransport, "unexpected peer handshake");
    }
    auto link = std::make_unique<Link>();
    link->peer = h->sender;
    link->fd = fd;
    links_[h->sender] = std::move(link);
    --to_accept;
  }
  for (auto& [peer, link] : links_) start_reader(peer);
}

void TcpEndpoint::start_reader(PartyId peer) {
  Link* l = links_.at(peer).get();
  l->reader = std::thread([this, l] { reader_loop(l); });
}

void TcpEndpoint::reader_loop(Link* link) {
  std::string failure;
  bool said_goodbye = false;
  try {
    while (true) {
      auto m = read_frame(link->fd, opts_.max_payload);
      if (!m) {
        if (!said_goodbye) failure = "peer " + to_string(link->peer) + " closed the connection";
        break;
      }
      if (is_link_frame(*m, "goodbye")) {
        said_goodbye = true;
        continue;
      }
      const std::size_t n = frame_size(*m);
      std::lock_guard lk(mu_);
      stats_.record(link->peer, self_, n);
      inbox_.push_back(Envelope{link->peer, self_, std::move(*m)});
      cv_.notify_one();
    }
  } catch (const Error& e) {
    failure = "link to " + to_string(link->peer) + ": " + e.what();
  }
  std::lock_guard lk(mu_);
  if (!closed_ && !failure.empty()) failures_.push_back(failure);
  cv_.notify_one();
}

void TcpEndpoint::send(PartyId to, const ProtocolMessage& m) {
  auto it = links_.find(to);
  if (it == links_.end()) throw Error(ErrorCode::kTransport, "no link to " + to_string(to));
  if (m.sender != self_) throw Error(ErrorCode::kTransport, "sender field does not match link");
  const Bytes f = encode_frame(m, opts_.max_payload);
  {
    std::lock_guard wl(it->second->write_mu);
    write_all(it->second->fd, f.data(), f.size());
  }
  std::lock_guard lk(mu_);
  stats_.record(self_, to, f.size());
}

std::optional<Envelope> TcpEndpoint::try_receive(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  cv_.wait_for(lk, timeout, [&] { return !inbox_.empty() || !failures_.empty(); });
  // Messages that arrived before a failure are still delivered first.
  if (!inbox_.empty()) {
    Envelope e = std::move(inbox_.front());
    inbox_.pop_front();
    return e;
  }
  if (!failures_.empty()) throw Error(ErrorCode::kTransport, failures_.front());
  return std::nullopt;
}

Envelope TcpEndpoint::receive(std::chrono::milliseconds timeout) {
  auto e = try_receive(timeout);
  if (!e) throw Error(ErrorCode::kTimeout, "no message within timeout");
  return std::move(*e);
}

CommStats TcpEndpoint::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

void TcpEndpoint::close() { shutdown_links(true); }

void TcpEndpoint::abort() { shutdown_links(false); }

void TcpEndpoint::shutdown_links(bool graceful) {
  {
    std::lock_guard lk(mu_);
    if (closed_) return;
    closed_ = true;
  }
  if (graceful) {
    const Bytes bye = encode_frame(link_frame(self_, "goodbye"));
    for (auto& [peer, link] : links_) {
      if (link->fd < 0) continue;
      try {
        std::lock_guard wl(link->write_mu);
        write_all(link->fd, bye.data(), bye.size());
      } catch (const Error&) {
      }
    }
  }
  for (auto& [peer, link] : links_)
    if (link->fd >= 0) ::shutdown(link->fd, SHUT_RDWR);
  for (auto& [peer, link] : links_) {
    if (link->reader.joinable()) link->reader.join();
    if (link->fd >= 0) ::close(link->fd);
    link->fd = -1;
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

namespace {

class TcpOutbox : public Outbox {
 public:
  explicit TcpOutbox(TcpEndpoint& ep) : ep_(ep) {}
  void send(PartyId to, ProtocolMessage m) override {
    m.sender = ep_.self();
    ep_.send(to, m);
  }

 private:
  TcpEndpoint& ep_;
};

}  // namespace

void run_tcp(Party& party, TcpEndpoint& ep, std::chrono::milliseconds idle_timeout) {
  TcpOutbox out(ep);
  while (!party.done()) {
    bool worked = false;
    for (int i = 0; i < 16 && party.poll(out); ++i) worked = true;
    if (party.done()) break;
    auto e = ep.try_receive(worked ? std::chrono::milliseconds(0) : idle_timeout);
    if (e) {
      party.on_message(*e, out);
    } else if (!worked) {
      throw Error(ErrorCode::kTimeout, to_string(party.id()) + ": no message within timeout");
    }
  }
}

}  // namespace fedflag::transport
