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

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedflag/transport.hpp"

namespace fedflag::transport {

struct TcpAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// "host:port".
TcpAddress parse_tcp_address(const std::string& s);

struct TcpOptions {
  std::chrono::milliseconds connect_timeout{10000};
  std::size_t max_payload = kDefaultMaxPayload;
};

// Point-to-point links to a fixed set of peers.
// Of each pair, the larger PartyId dials and announces itself with a hello
// frame; the smaller accepts, so the hub only listens.
// One reader thread per link feeds a shared inbox.
class TcpEndpoint {
 public:
  TcpEndpoint(PartyId self, TcpOptions opts = {});
  ~TcpEndpoint();
  TcpEndpoint(const TcpEndpoint&) = delete;
  TcpEndpoint& operator=(const TcpEndpoint&) = delete;

  // Binds and listens. Port 0 picks a free port. Returns the bound port.
  std::uint16_t listen(const std::string& host, std::uint16_t port);
  // Establishes a link to each peer listed (self is ignored).
  void connect(const std::map<PartyId, TcpAddress>& peers);

  PartyId self() const { return self_; }
  void send(PartyId to, const ProtocolMessage& m);
  // Throws kTimeout when nothing arrives in time and kTransport when a peer
  // link has failed or closed.
  Envelope receive(std::chrono::milliseconds timeout);
  // As receive, but returns nullopt on timeout.
  std::optional<Envelope> try_receive(std::chrono::milliseconds timeout);

  // Protocol frames only; link hello/goodbye frames are not counted.
  CommStats stats() const;
  // Says goodbye on every link, then closes sockets and joins readers. A
  // peer that said goodbye closing its end is not a failure.
  void close();
  // Drops every link without a goodbye, as a crashed party would.
  void abort();

 private:
  struct Link;
  void start_reader(PartyId peer);
  void reader_loop(Link* link);
  void shutdown_links(bool graceful);

  PartyId self_;
  TcpOptions opts_;
  int listen_fd_ = -1;
  std::map<PartyId, std::unique_ptr<Link>> links_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Envelope> inbox_;
  std::deque<std::string> failures_;
  CommStats stats_;
  bool closed_ = false;
};

// Drives one party over a TCP endpoint until the party reports done.
void run_tcp(Party& party, TcpEndpoint& ep, std::chrono::milliseconds idle_timeout);

}  // namespace fedflag::transport
