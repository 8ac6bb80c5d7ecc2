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

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedflag/bytes.hpp"
#include "fedflag/party.hpp"
#include "fedflag/prg.hpp"

namespace fedflag::transport {

enum class MsgType : std::uint8_t {
  kOtMsg1 = 1,
  kOtMsg2 = 2,
  kOtMsg3 = 3,
  kMaskedPair = 4,
  kShareForward = 5,
  kAggregateShare = 6,
  kInferRequest = 7,
  kInferShare = 8,
  kControl = 9,
};

std::string to_string(MsgType t);

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kDefaultMaxPayload = std::size_t{64} << 20;
// u16 version | 16 session | u8 role | u32 bank | u8 type | u32 payload length
inline constexpr std::size_t kHeaderBytes = 2 + 16 + 1 + 4 + 1 + 4;

struct ProtocolMessage {
  std::uint16_t version = kProtocolVersion;
  SessionId session{};
  PartyId sender;
  MsgType type = MsgType::kControl;
  Bytes payload;

  bool operator==(const ProtocolMessage&) const = default;
};

// 4-byte big-endian length of everything after the prefix, then the header
// fields, then the payload. Throws kInvalidArgument if the payload is over
// max_payload.
Bytes encode_frame(const ProtocolMessage& m, std::size_t max_payload = kDefaultMaxPayload);
// Exactly one complete frame. Throws kDecode on truncation, trailing bytes,
// version mismatch, unknown role or type, inconsistent lengths and lengths
// over max_payload.
ProtocolMessage decode_frame(std::span<const std::uint8_t> frame,
                             std::size_t max_payload = kDefaultMaxPayload);
// Size of the frame encode_frame would produce.
std::size_t frame_size(const ProtocolMessage& m);

// Incremental splitter for byte streams.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_payload = kDefaultMaxPayload) : max_(max_payload) {}
  void feed(std::span<const std::uint8_t> bytes);
  // Next complete message, if any. Throws like decode_frame.
  std::optional<ProtocolMessage> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::size_t max_;
  Bytes buf_;
  std::size_t pos_ = 0;
};

struct Envelope {
  PartyId from;
  PartyId to;
  ProtocolMessage msg;
};

struct LinkStats {
  std::uint64_t frames = 0;
  std::uint64_t bytes = 0;
  bool operator==(const LinkStats&) const = default;
};

// Directed per-pair frame and byte counters.
class CommStats {
 public:
  void record(PartyId from, PartyId to, std::size_t frame_bytes);
  const std::map<std::pair<PartyId, PartyId>, LinkStats>& links() const { return links_; }
  std::uint64_t total_bytes() const;
  std::uint64_t total_frames() const;
  std::uint64_t bytes_sent(PartyId p) const;
  std::uint64_t bytes_received(PartyId p) const;
  void merge(const CommStats& other);
  void add(PartyId from, PartyId to, const LinkStats& l);
  // Only the links whose sender is p.
  CommStats sent_by(PartyId p) const;
  bool operator==(const CommStats&) const = default;

 private:
  std::map<std::pair<PartyId, PartyId>, LinkStats> links_;
};

// Sender side as seen by a party's state machine.
class Outbox {
 public:
  virtual ~Outbox() = default;
  virtual void send(PartyId to, ProtocolMessage m) = 0;
};

// A protocol participant: consumes its inbox one message at a time.
class Party {
 public:
  virtual ~Party() = default;
  virtual PartyId id() const = 0;
  virtual void on_message(const Envelope& e, Outbox& out) = 0;
  // Emits new work if the party has any ready. Returns true if it sent.
  virtual bool poll(Outbox&) { return false; }
  virtual bool done() const = 0;
};

// Deterministic arrival times: base + size / bandwidth per frame.
struct LatencyModel {
  double base_seconds = 0;
  double bytes_per_second = 0;  // 0 = unlimited
  bool enabled() const { return base_seconds > 0 || bytes_per_second > 0; }
};

// In-memory network. Frames are encoded on send and decoded on delivery.
// Each directed pair is FIFO; across pairs the next delivery is chosen by a
// seeded scheduler (or by arrival time when a latency model is set).
class SimNetwork {
 public:
  SimNetwork(std::vector<PartyId> parties, std::uint64_t seed, LatencyModel latency = {});

  // Throws kTransport for a party outside the topology.
  void send(PartyId from, PartyId to, const ProtocolMessage& m);
  std::optional<Envelope> deliver_next();

  std::size_t in_flight() const { return in_flight_; }
  const CommStats& stats() const { return stats_; }
  double simulated_seconds() const { return clock_; }
  const std::vector<PartyId>& parties() const { return parties_; }

  // Observes every frame at send time.
  void set_tap(std::function<void(PartyId, PartyId, std::span<const std::uint8_t>)> tap) {
    tap_ = std::move(tap);
  }

 private:
  struct Pending {
    Bytes frame;
    double arrival = 0;
  };
  bool known(PartyId p) const;

  std::vector<PartyId> parties_;
  Prg sched_;
  LatencyModel latency_;
  std::map<std::pair<PartyId, PartyId>, std::deque<Pending>> queues_;
  std::size_t in_flight_ = 0;
  double clock_ = 0;
  CommStats stats_;
  std::function<void(PartyId, PartyId, std::span<const std::uint8_t>)> tap_;
};

struct SimRunOptions {
  // Parties are polled for new work only while fewer frames are in flight.
  std::size_t window = 16;
  std::uint64_t max_deliveries = ~std::uint64_t{0};
};

// Runs parties to completion on the calling thread. Throws kProtocol if the
// network drains while some party is not done.
void run_sim(std::span<Party* const> parties, SimNetwork& net, const SimRunOptions& opts = {});

}  // namespace fedflag::transport
