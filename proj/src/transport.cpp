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

#include "fedflag/transport.hpp"

#include <algorithm>
#include <limits>

#include "fedflag/error.hpp"

namespace fedflag::transport {

std::string to_string(MsgType t) {
  switch (t) {
    case MsgType::kOtMsg1: return "ot-msg1";
    case MsgType::kOtMsg2: return "ot-msg2";
    case MsgType::kOtMsg3: return "ot-msg3";
    case MsgType::kMaskedPair: return "masked-pair";
    case MsgType::kShareForward: return "share-forward";
    case MsgType::kAggregateShare: return "aggregate-share";
    case MsgType::kInferRequest: return "infer-request";
    case MsgType::kInferShare: return "infer-share";
    case MsgType::kControl: return "control";
  }
  return "unknown";
}

namespace {

bool valid_type(std::uint8_t t) { return t >= 1 && t <= 9; }

}  // namespace

std::size_t frame_size(const ProtocolMessage& m) { return 4 + kHeaderBytes + m.payload.size(); }

Bytes encode_frame(const ProtocolMessage& m, std::size_t max_payload) {
  if (m.payload.size() > max_payload)
    throw Error(ErrorCode::kInvalidArgument, "payload exceeds maximum frame size");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(kHeaderBytes + m.payload.size()));
  w.u16(m.version);
  w.raw(m.session);
  w.u8(static_cast<std::uint8_t>(m.sender.role));
  w.u32(m.sender.bank_index);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.blob(m.payload);
  return w.take();
}

ProtocolMessage decode_frame(std::span<const std::uint8_t> frame, std::size_t max_payload) {
  ByteReader r(frame);
  const std::uint32_t len = r.u32();
  if (len < kHeaderBytes) throw Error(ErrorCode::kDecode, "frame length below header size");
  if (len - kHeaderBytes > max_payload) throw Error(ErrorCode::kDecode, "frame length overflow");
  if (r.remaining() < len) throw Error(ErrorCode::kDecode, "truncated frame");
  if (r.remaining() > len) throw Error(ErrorCode::kDecode, "trailing bytes after frame");

  ProtocolMessage m;
  m.version = r.u16();
  if (m.version != kProtocolVersion) throw Error(ErrorCode::kDecode, "protocol version mismatch");
  auto sid = r.raw(16);
  std::copy(sid.begin(), sid.end(), m.session.begin());
  const std::uint8_t role = r.u8();
  if (role > 2) throw Error(ErrorCode::kDecode, "unknown sender role");
  m.sender.role = static_cast<Role>(role);
  m.sender.bank_index = r.u32();
  if (m.sender.role != Role::kBank && m.sender.bank_index != 0)
    throw Error(ErrorCode::kDecode, "bank index on non-bank sender");
  const std::uint8_t type = r.u8();
  if (!valid_type(type)) throw Error(ErrorCode::kDecode, "unknown message type");
  m.type = static_cast<MsgType>(type);
  const std::uint32_t plen = r.u32();
  if (plen != len - kHeaderBytes) throw Error(ErrorCode::kDecode, "payload length mismatch");
  auto p = r.raw(plen);
  m.payload.assign(p.begin(), p.end());
  return m;
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<ProtocolMessage> FrameDecoder::next() {
  const std::size_t avail = buf_.size() - pos_;
  if (avail < 4) return std::nullopt;
  const std::uint8_t* p = buf_.data() + pos_;
  const std::uint32_t len = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                            (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  if (len >= kHeaderBytes && len - kHeaderBytes > max_)
    throw Error(ErrorCode::kDecode, "frame length overflow");
  if (avail < 4 + std::size_t{len}) return std::nullopt;
  auto m = decode_frame(std::span(p, 4 + std::size_t{len}), max_);
  pos_ += 4 + std::size_t{len};
  if (pos_ > (std::size_t{1} << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  return m;
}

// ---------------------------------------------------------------------------

void CommStats::record(PartyId from, PartyId to, std::size_t frame_bytes) {
  auto& l = links_[{from, to}];
  ++l.frames;
  l.bytes += frame_bytes;
}

std::uint64_t CommStats::total_bytes() const {
  std::uint64_t t = 0;
  for (const auto& [k, l] : links_) t += l.bytes;
  return t;
}

std::uint64_t CommStats::total_frames() const {
  std::uint64_t t = 0;
  for (const auto& [k, l] : links_) t += l.frames;
  return t;
}

std::uint64_t CommStats::bytes_sent(PartyId p) const {
  std::uint64_t t = 0;
  for (const auto& [k, l] : links_)
    if (k.first == p) t += l.bytes;
  return t;
}

std::uint64_t CommStats::bytes_received(PartyId p) const {
  std::uint64_t t = 0;
  for (const auto& [k, l] : links_)
    if (k.second == p) t += l.bytes;
  return t;
}

void CommStats::merge(const CommStats& other) {
  for (const auto& [k, l] : other.links_) {
    auto& mine = links_[k];
    mine.frames += l.frames;
    mine.bytes += l.bytes;
  }
}

void CommStats::add(PartyId from, PartyId to, const LinkStats& l) {
  auto& mine = links_[{from, to}];
  mine.frames += l.frames;
  mine.bytes += l.bytes;
}

CommStats CommStats::sent_by(PartyId p) const {
  CommStats out;
  for (const auto& [k, l] : links_)
    if (k.first == p) out.add(k.first, k.second, l);
  return out;
}

// ---------------------------------------------------------------------------

SimNetwork::SimNetwork(std::vector<PartyId> parties, std::uint64_t seed, LatencyModel latency)
    : parties_(std::move(parties)),
      sched_(Prg::from_u64(seed).derive("sim/scheduler")),
      latency_(latency) {
  std::sort(parties_.begin(), parties_.end());
  if (std::adjacent_find(parties_.begin(), parties_.end()) != parties_.end())
    throw Error(ErrorCode::kInvalidArgument, "duplicate party in topology");
}

bool SimNetwork::known(PartyId p) const {
  return std::binary_search(parties_.begin(), parties_.end(), p);
}

void SimNetwork::send(PartyId from, PartyId to, const ProtocolMessage& m) {
  if (!known(from)) throw Error(ErrorCode::kTransport, "unknown party " + to_string(from));
  if (!known(to)) throw Error(ErrorCode::kTransport, "unknown party " + to_string(to));
  if (m.sender != from) throw Error(ErrorCode::kTransport, "sender field does not match link");
  Pending p;
  p.frame = encode_frame(m);
  auto& q = queues_[{from, to}];
  if (latency_.enabled()) {
    double t = clock_ + latency_.base_seconds;
    if (latency_.bytes_per_second > 0)
      t += static_cast<double>(p.frame.size()) / latency_.bytes_per_second;
    if (!q.empty()) t = std::max(t, q.back().arrival);
    p.arrival = t;
  }
  stats_.record(from, to, p.frame.size());
  if (tap_) tap_(from, to, p.frame);
  q.push_back(std::move(p));
  ++in_flight_;
}

std::optional<Envelope> SimNetwork::deliver_next() {
  if (in_flight_ == 0) return std::nullopt;
  std::vector<decltype(queues_)::iterator> ready;
  double best = std::numeric_limits<double>::infinity();
  for (auto it = queues_.begin(); it != queues_.end(); ++it) {
    if (it->second.empty()) continue;
    if (latency_.enabled()) {
      const double a = it->second.front().arrival;
      if (a < best) {
        best = a;
        ready.clear();
      }
      if (a == best) ready.push_back(it);
    } else {
      ready.push_back(it);
    }
  }
  auto it = ready[ready.size() == 1 ? 0 : sched_.uniform_below(ready.size())];
  Pending p = std::move(it->second.front());
  it->second.pop_front();
  --in_flight_;
  if (latency_.enabled()) clock_ = std::max(clock_, p.arrival);
  Envelope e{it->first.first, it->first.second, decode_frame(p.frame)};
  return e;
}

namespace {

class SimOutbox : public Outbox {
 public:
  SimOutbox(SimNetwork& net, PartyId self) : net_(net), self_(self) {}
  void send(PartyId to, ProtocolMessage m) override {
    m.sender = self_;
    net_.send(self_, to, m);
  }

 private:
  SimNetwork& net_;
  PartyId self_;
};

}  // namespace

void run_sim(std::span<Party* const> parties, SimNetwork& net, const SimRunOptions& opts) {
  std::map<PartyId, Party*> by_id;
  for (Party* p : parties) by_id[p->id()] = p;
  std::uint64_t deliveries = 0;
  auto all_done = [&] {
    return std::all_of(parties.begin(), parties.end(), [](Party* p) { return p->done(); });
  };
  while (true) {
    bool polled = false;
    if (net.in_flight() < opts.window) {
      for (Party* p : parties) {
        SimOutbox out(net, p->id());
        if (p->poll(out)) polled = true;
      }
    }
    if (auto e = net.deliver_next()) {
      auto it = by_id.find(e->to);
      if (it == by_id.end()) throw Error(ErrorCode::kTransport, "no party " + to_string(e->to));
      SimOutbox out(net, e->to);
      it->second->on_message(*e, out);
      if (++deliveries > opts.max_deliveries)
        throw Error(ErrorCode::kProtocol, "delivery budget exhausted");
      continue;
    }
    if (polled) continue;
    if (all_done()) return;
    throw Error(ErrorCode::kProtocol, "network drained before all parties finished");
  }
}

}  // namespace fedflag::transport
