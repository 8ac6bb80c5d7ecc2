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

#include "fedflag/protocol.hpp"

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedflag/error.hpp"
#include "fedflag/sharing.hpp"

namespace fedflag::protocol {

using transport::Envelope;
using transport::MsgType;
using transport::Outbox;
using transport::ProtocolMessage;

namespace {

enum class Purpose : std::uint8_t { kTrain = 0, kKey = 1, kInfer = 2 };
enum class ControlKind : std::uint8_t { kBatchBegin = 1, kShutdown = 2 };
enum class PairMode : std::uint8_t { kIdeal = 0, kKeyed = 1 };
enum class Status : std::uint8_t { kOk = 0, kUnknownAccount = 1 };

SessionId sub_session(const SessionId& parent, Purpose p, std::uint64_t index) {
  static constexpr char kDomain[] = "fedflag/protocol/sub-session/v1";
  std::uint8_t tail[9];
  tail[0] = static_cast<std::uint8_t>(p);
  for (int i = 0; i < 8; ++i) tail[1 + i] = static_cast<std::uint8_t>(index >> (56 - 8 * i));
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, 16);
  crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(kDomain),
                            sizeof(kDomain) - 1);
  crypto_generichash_update(&st, parent.data(), parent.size());
  crypto_generichash_update(&st, tail, sizeof tail);
  SessionId out;
  crypto_generichash_final(&st, out.data(), out.size());
  return out;
}

std::uint64_t session_index(const SessionId& s) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | s[i];
  return v;
}

SessionId random_session(Prg& rng) {
  SessionId s;
  rng.fill(s);
  return s;
}

ProtocolMessage make(MsgType t, const SessionId& sid, Bytes payload) {
  ProtocolMessage m;
  m.session = sid;
  m.type = t;
  m.payload = std::move(payload);
  return m;
}

ProtocolMessage shutdown_message() {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(ControlKind::kShutdown));
  return make(MsgType::kControl, SessionId{}, w.take());
}

Purpose read_purpose(ByteReader& r) {
  const std::uint8_t p = r.u8();
  if (p > 2) throw Error(ErrorCode::kDecode, "unknown select purpose");
  return static_cast<Purpose>(p);
}

std::span<const std::uint8_t> point_bytes(ByteReader& r) { return r.raw(ot::kPointBytes); }

ring::FixedVector vector_blob(std::span<const std::uint8_t> b, std::size_t dim, int fb) {
  if (b.size() != dim * 8) throw Error(ErrorCode::kDecode, "share has wrong dimension");
  return ring::from_bytes(b, fb);
}

ot::Key key_from(std::span<const std::uint8_t> b) {
  if (b.size() != ot::kKeyBytes) throw Error(ErrorCode::kDecode, "bad key length");
  ot::Key k;
  std::memcpy(k.data(), b.data(), k.size());
  return k;
}

using AccountKey = std::pair<std::uint32_t, std::string>;

bool needs_ot(const ProtocolConfig& cfg, std::uint8_t label) {
  return !(cfg.ot_reduction && label == 0);
}

}  // namespace

// ---------------------------------------------------------------------------

void ProtocolConfig::validate() const {
  train.validate();
  if (fraction_bits < 1 || fraction_bits > 40)
    throw Error(ErrorCode::kConfig, "fraction bits must lie in [1, 40]");
  if (window == 0) throw Error(ErrorCode::kConfig, "window must be positive");
  if (infer_noise.parameter < 0 || !std::isfinite(infer_noise.parameter))
    throw Error(ErrorCode::kConfig, "inference noise parameter must be finite and >= 0");
}

ProtocolConfig ProtocolConfig::from_config(const KvConfig& cfg) {
  ProtocolConfig p;
  p.train = model::TrainConfig::from_config(cfg);
  if (!cfg.contains("noise") && std::isfinite(p.train.clip))
    p.train.noise = NoiseSpec::gaussian(noise_default(p.train.clip));
  p.ot_mode = ot::parse_mode(cfg.get_string("ot", ot::mode_name(p.ot_mode)));
  p.ot_reduction = cfg.get_bool("ot-reduction", p.ot_reduction);
  p.key_cache = cfg.get_bool("key-cache", p.key_cache);
  p.fraction_bits = static_cast<int>(cfg.get_int("fraction-bits", p.fraction_bits));
  p.hub_seed = cfg.get_u64("hub-seed", p.hub_seed);
  p.aggregator_seed = cfg.get_u64("aggregator-seed", p.aggregator_seed);
  p.bank_seed = cfg.get_u64("bank-seed", p.bank_seed);
  p.window = cfg.get_u64("window", p.window);
  p.infer_noise = parse_noise(cfg.get_string("infer-noise", "none"));
  p.validate();
  return p;
}

KvConfig ProtocolConfig::to_config() const {
  KvConfig c = train.to_config();
  c.set("ot", ot::mode_name(ot_mode));
  c.set("ot-reduction", ot_reduction ? "true" : "false");
  c.set("key-cache", key_cache ? "true" : "false");
  c.set("fraction-bits", std::to_string(fraction_bits));
  c.set("hub-seed", std::to_string(hub_seed));
  c.set("aggregator-seed", std::to_string(aggregator_seed));
  c.set("bank-seed", std::to_string(bank_seed));
  c.set("window", std::to_string(window));
  c.set("infer-noise", to_string(infer_noise));
  return c;
}

double noise_default(double clip) {
  if (!(clip > 0) || !std::isfinite(clip))
    throw Error(ErrorCode::kInvalidArgument, "default noise needs a finite positive clip bound");
  return 10.0 * clip;
}

std::uint64_t LeakageLedger::total_bank_queries() const {
  std::uint64_t t = 0;
  for (const auto* m : {&bank_train_queries, &bank_key_queries, &bank_infer_queries})
    for (const auto& [k, v] : *m) t += v;
  return t;
}

std::uint64_t LeakageLedger::total_aggregator_observations() const {
  std::uint64_t t = 0;
  for (const auto& [k, v] : aggregator_observations) t += v;
  return t;
}

void LeakageLedger::merge(const LeakageLedger& o) {
  for (const auto& [k, v] : o.bank_train_queries) bank_train_queries[k] += v;
  for (const auto& [k, v] : o.bank_key_queries) bank_key_queries[k] += v;
  for (const auto& [k, v] : o.bank_infer_queries) bank_infer_queries[k] += v;
  for (const auto& [k, v] : o.aggregator_observations) aggregator_observations[k] += v;
}

// ---------------------------------------------------------------------------

ModelBatchSource::ModelBatchSource(std::span<const data::Example> train,
                                   const model::TrainConfig& cfg)
    : train_(train),
      cfg_(cfg),
      model_(model::initial_model(cfg)),
      epochs_(cfg.epochs),
      per_epoch_((train.size() + cfg.batch_size - 1) / cfg.batch_size) {
  cfg_.validate();
  if (train.empty()) throw Error(ErrorCode::kInvalidArgument, "no training rows");
}

std::vector<PlannedRow> ModelBatchSource::plan(std::size_t batch) {
  const std::size_t epoch = batch / per_epoch_ + 1;
  if (epoch != order_epoch_) {
    order_ = model::epoch_order(train_.size(), cfg_.seed, epoch);
    order_epoch_ = epoch;
  }
  const std::size_t start = (batch % per_epoch_) * cfg_.batch_size;
  const std::size_t end = std::min(order_.size(), start + cfg_.batch_size);
  rows_.assign(order_.begin() + static_cast<std::ptrdiff_t>(start),
               order_.begin() + static_cast<std::ptrdiff_t>(end));
  std::vector<PlannedRow> out;
  out.reserve(rows_.size());
  for (std::size_t i : rows_) {
    const auto& ex = train_[i];
    out.push_back({ex.receiver_bank, ex.receiver_account, ex.label});
  }
  return out;
}

void ModelBatchSource::candidates(std::size_t, std::size_t row, std::span<double> u0,
                                  std::span<double> u1) {
  const auto& ex = train_[rows_.at(row)];
  model::per_sample_gradient(model_, ex.x, 0, ex.label, cfg_.weight_decay, u0);
  model::per_sample_gradient(model_, ex.x, 1, ex.label, cfg_.weight_decay, u1);
  model::clip_in_place(u0, cfg_.clip);
  model::clip_in_place(u1, cfg_.clip);
}

void ModelBatchSource::apply(std::size_t batch, std::span<const double> u, std::size_t skipped) {
  const std::size_t epoch = batch / per_epoch_ + 1;
  model::apply_update(model_, u, cfg_.lr(epoch), cfg_.batch_size);
  skipped_ += skipped;
}

FixedBatchSource::FixedBatchSource(std::vector<std::vector<BatchItem>> batches, std::size_t dim)
    : batches_(std::move(batches)), dim_(dim) {
  for (const auto& b : batches_)
    for (const auto& it : b)
      if (it.u0.size() != dim || it.u1.size() != dim)
        throw Error(ErrorCode::kDimensionMismatch, "candidate has wrong dimension");
}

std::vector<PlannedRow> FixedBatchSource::plan(std::size_t batch) {
  std::vector<PlannedRow> out;
  for (const auto& it : batches_.at(batch)) out.push_back({it.bank, it.account, it.label});
  return out;
}

void FixedBatchSource::candidates(std::size_t batch, std::size_t row, std::span<double> u0,
                                  std::span<double> u1) {
  const auto& it = batches_.at(batch).at(row);
  std::copy(it.u0.begin(), it.u0.end(), u0.begin());
  std::copy(it.u1.begin(), it.u1.end(), u1.begin());
}

void FixedBatchSource::apply(std::size_t, std::span<const double> u, std::size_t skipped) {
  results_.emplace_back(u.begin(), u.end());
  skipped_.push_back(skipped);
}

// ---------------------------------------------------------------------------
// Hub

struct Hub::State {
  enum class Phase { kStart, kKeys, kBatchStart, kEmit, kAwait, kDone };

  BatchSource& src;
  std::uint32_t banks;
  ProtocolConfig cfg;
  std::size_t dim;
  int fb;
  Prg root;
  SessionId run_sid;
  Phase phase = Phase::kStart;
  std::uint64_t ot_count = 0;
  ViewCounts view;

  // Key cache.
  std::vector<AccountKey> key_accounts;
  std::size_t key_next = 0;
  std::map<AccountKey, ot::SenderKeyEntry> keys;
  std::map<AccountKey, std::uint64_t> nonces;

  // Interactive OT sessions awaiting the receiver's reply, by (purpose, slot).
  std::map<std::pair<Purpose, std::uint32_t>, ot::CryptoSender> pending;

  // Current batch.
  std::size_t batch = 0;
  SessionId batch_sid{};
  std::optional<Bytes> early;
  std::vector<PlannedRow> rows;
  std::size_t next_row = 0;
  ring::FixedVector sum;
  std::vector<double> u0, u1;

  State(BatchSource& s, std::uint32_t b, const ProtocolConfig& c)
      : src(s),
        banks(b),
        cfg(c),
        dim(s.dimension()),
        fb(c.fraction_bits),
        root(Prg::from_u64(c.hub_seed).derive("hub")),
        u0(dim),
        u1(dim) {
    Prg r = root.derive("run");
    run_sid = random_session(r);
  }

  ring::FixedVector mask(std::uint32_t slot) const {
    Prg r = root.derive("mask", session_index(sub_session(batch_sid, Purpose::kTrain, slot)));
    return sharing::random_vector(dim, fb, r);
  }

  // m_j = u_j - r for the current row; r is added to the hub's running sum.
  std::pair<Bytes, Bytes> masked_candidates(std::uint32_t slot) {
    src.candidates(batch, slot, u0, u1);
    const ring::FixedVector r = mask(slot);
    auto m0 = ring::to_bytes(ring::FixedVector::encode(u0, fb) - r);
    auto m1 = ring::to_bytes(ring::FixedVector::encode(u1, fb) - r);
    sum += r;
    return {std::move(m0), std::move(m1)};
  }

  void collect_key_accounts() {
    std::set<AccountKey> need;
    for (std::size_t b = 0; b < src.batch_count(); ++b)
      for (const auto& row : src.plan(b))
        if (needs_ot(cfg, row.label)) need.insert({row.bank, row.account});
    key_accounts.assign(need.begin(), need.end());
  }

  bool emit_key(Outbox& out) {
    const auto idx = static_cast<std::uint32_t>(key_next);
    const AccountKey& acct = key_accounts[key_next];
    ot::SenderKeyEntry k{acct.second, {}, {}};
    Prg kr = root.derive("key", key_next);
    kr.fill(k.k0);
    kr.fill(k.k1);
    keys[acct] = k;
    ++ot_count;
    ByteWriter w;
    if (cfg.ot_mode == ot::Mode::kIdeal) {
      w.u8(static_cast<std::uint8_t>(Purpose::kKey));
      w.u32(idx);
      w.str(acct.second);
      w.u8(static_cast<std::uint8_t>(PairMode::kIdeal));
      w.blob(k.k0);
      w.blob(k.k1);
      out.send(PartyId::bank(acct.first), make(MsgType::kMaskedPair, run_sid, w.take()));
    } else {
      const SessionId sid = sub_session(run_sid, Purpose::kKey, idx);
      Prg sr = root.derive("ot-sender", session_index(sid));
      ot::CryptoSender sender(sid, sr);
      w.u8(static_cast<std::uint8_t>(Purpose::kKey));
      w.u32(idx);
      w.str(acct.second);
      w.raw(sender.first_message());
      pending.emplace(std::pair{Purpose::kKey, idx}, std::move(sender));
      out.send(PartyId::bank(acct.first), make(MsgType::kOtMsg1, run_sid, w.take()));
    }
    ++key_next;
    return true;
  }

  void begin_batch(Outbox& out) {
    Prg r = root.derive("batch", batch);
    batch_sid = random_session(r);
    rows = src.plan(batch);
    next_row = 0;
    sum = ring::FixedVector(dim, fb);
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(ControlKind::kBatchBegin));
    w.u64(batch);
    w.u32(static_cast<std::uint32_t>(dim));
    std::vector<std::pair<std::uint32_t, std::uint32_t>> slots;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!needs_ot(cfg, rows[i].label)) continue;
      if (rows[i].bank >= banks)
        throw Error(ErrorCode::kUnknownAccount, "receiver bank outside the session");
      slots.push_back({static_cast<std::uint32_t>(i), rows[i].bank});
    }
    w.u32(static_cast<std::uint32_t>(slots.size()));
    for (const auto& [slot, bank] : slots) {
      w.u32(slot);
      w.u32(bank);
    }
    out.send(PartyId::aggregator(), make(MsgType::kControl, batch_sid, w.take()));
    phase = Phase::kEmit;
  }

  // Processes the next row of the batch. Returns false if blocked.
  bool emit_row(Outbox& out) {
    const auto slot = static_cast<std::uint32_t>(next_row);
    const PlannedRow& row = rows[next_row];
    if (!needs_ot(cfg, row.label)) {
      src.candidates(batch, slot, u0, u1);
      sum += ring::FixedVector::encode(u0, fb);
      ++next_row;
      return true;
    }
    const PartyId bank = PartyId::bank(row.bank);
    ByteWriter w;
    if (cfg.key_cache) {
      const AccountKey acct{row.bank, row.account};
      auto [m0, m1] = masked_candidates(slot);
      const auto pair = ot::encrypt_pair(keys.at(acct), ++nonces[acct], m0, m1);
      w.u8(static_cast<std::uint8_t>(Purpose::kTrain));
      w.u32(slot);
      w.str(row.account);
      w.u8(static_cast<std::uint8_t>(PairMode::kKeyed));
      w.u64(pair.nonce);
      w.blob(pair.c0);
      w.blob(pair.c1);
      out.send(bank, make(MsgType::kMaskedPair, batch_sid, w.take()));
    } else if (cfg.ot_mode == ot::Mode::kIdeal) {
      auto [m0, m1] = masked_candidates(slot);
      ++ot_count;
      w.u8(static_cast<std::uint8_t>(Purpose::kTrain));
      w.u32(slot);
      w.str(row.account);
      w.u8(static_cast<std::uint8_t>(PairMode::kIdeal));
      w.blob(m0);
      w.blob(m1);
      out.send(bank, make(MsgType::kMaskedPair, batch_sid, w.take()));
    } else {
      if (pending.size() >= cfg.window) return false;
      const SessionId sid = sub_session(batch_sid, Purpose::kTrain, slot);
      Prg sr = root.derive("ot-sender", session_index(sid));
      ot::CryptoSender sender(sid, sr);
      ++ot_count;
      w.u8(static_cast<std::uint8_t>(Purpose::kTrain));
      w.u32(slot);
      w.str(row.account);
      w.raw(sender.first_message());
      pending.emplace(std::pair{Purpose::kTrain, slot}, std::move(sender));
      out.send(bank, make(MsgType::kOtMsg1, batch_sid, w.take()));
    }
    ++next_row;
    return true;
  }

  void on_ot_reply(const Envelope& e, Outbox& out) {
    ByteReader r(e.msg.payload);
    const Purpose p = read_purpose(r);
    const std::uint32_t slot = r.u32();
    const auto b_point = point_bytes(r);
    r.expect_end();
    const SessionId& expect = p == Purpose::kKey ? run_sid : batch_sid;
    if (e.msg.session != expect || p == Purpose::kInfer)
      throw Error(ErrorCode::kSessionMismatch, "OT reply for a foreign session");
    auto it = pending.find({p, slot});
    if (it == pending.end()) throw Error(ErrorCode::kSessionMismatch, "unexpected OT reply");
    Bytes final_msg;
    if (p == Purpose::kKey) {
      const auto& k = keys.at(key_accounts.at(slot));
      if (e.from != PartyId::bank(key_accounts.at(slot).first))
        throw Error(ErrorCode::kProtocol, "OT reply from the wrong bank");
      final_msg = it->second.final_message(b_point, k.k0, k.k1);
    } else {
      if (e.from != PartyId::bank(rows.at(slot).bank))
        throw Error(ErrorCode::kProtocol, "OT reply from the wrong bank");
      auto [m0, m1] = masked_candidates(slot);
      final_msg = it->second.final_message(b_point, m0, m1);
    }
    pending.erase(it);
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(p));
    w.u32(slot);
    w.blob(final_msg);
    out.send(e.from, make(MsgType::kOtMsg3, e.msg.session, w.take()));
  }

  void on_aggregate(const Envelope& e) {
    if (e.from != PartyId::aggregator())
      throw Error(ErrorCode::kProtocol, "aggregate share not from the aggregator");
    const bool current = phase == Phase::kAwait || phase == Phase::kEmit;
    if (!current || e.msg.session != batch_sid || early)
      throw Error(ErrorCode::kSessionMismatch, "aggregate share for a foreign session");
    // The aggregator may finish before the hub has folded in its own rows.
    if (phase == Phase::kEmit) {
      early = e.msg.payload;
      return;
    }
    finish_batch(e.msg.payload);
  }

  void finish_batch(std::span<const std::uint8_t> payload) {
    ByteReader r(payload);
    const std::uint32_t n_skip = r.u32();
    std::vector<std::uint32_t> skipped(n_skip);
    for (auto& s : skipped) s = r.u32();
    ring::FixedVector total = sum + vector_blob(r.blob(), dim, fb);
    r.expect_end();
    // Masks of skipped rows have no bank-side counterpart.
    for (std::uint32_t s : skipped) {
      if (s >= rows.size()) throw Error(ErrorCode::kProtocol, "skipped slot out of range");
      total -= mask(s);
    }
    const std::vector<double> u = total.decode();
    src.apply(batch, u, skipped.size());
    ++batch;
    phase = Phase::kBatchStart;
  }
};

Hub::Hub(BatchSource& source, std::uint32_t bank_count, const ProtocolConfig& cfg)
    : s_(std::make_unique<State>(source, bank_count, cfg)) {
  cfg.validate();
}

Hub::~Hub() = default;

bool Hub::poll(Outbox& out) {
  auto& s = *s_;
  using P = State::Phase;
  switch (s.phase) {
    case P::kStart:
      if (s.cfg.key_cache) {
        s.collect_key_accounts();
        s.phase = P::kKeys;
      } else {
        s.phase = P::kBatchStart;
      }
      return true;
    case P::kKeys:
      if (s.key_next < s.key_accounts.size()) {
        if (s.cfg.ot_mode == ot::Mode::kCrypto && s.pending.size() >= s.cfg.window) return false;
        return s.emit_key(out);
      }
      // Per-pair FIFO delivers each key before its first use, but the crypto
      // transfers need the receivers' replies first.
      if (!s.pending.empty()) return false;
      s.phase = P::kBatchStart;
      return true;
    case P::kBatchStart:
      if (s.batch >= s.src.batch_count()) {
        out.send(PartyId::aggregator(), shutdown_message());
        for (std::uint32_t b = 0; b < s.banks; ++b) out.send(PartyId::bank(b), shutdown_message());
        s.phase = P::kDone;
        return true;
      }
      s.begin_batch(out);
      return true;
    case P::kEmit:
      if (s.next_row < s.rows.size()) return s.emit_row(out);
      if (!s.pending.empty()) return false;
      s.phase = P::kAwait;
      if (s.early) {
        const Bytes payload = std::move(*s.early);
        s.early.reset();
        s.finish_batch(payload);
      }
      return true;
    case P::kAwait:
    case P::kDone:
      return false;
  }
  return false;
}

void Hub::on_message(const Envelope& e, Outbox& out) {
  auto& s = *s_;
  ++s.view[e.msg.type];
  switch (e.msg.type) {
    case MsgType::kOtMsg2: s.on_ot_reply(e, out); break;
    case MsgType::kAggregateShare: s.on_aggregate(e); break;
    default:
      throw Error(ErrorCode::kProtocol, "hub cannot handle " + transport::to_string(e.msg.type));
  }
}

bool Hub::done() const { return s_->phase == State::Phase::kDone; }
std::uint64_t Hub::ot_transfers() const { return s_->ot_count; }
std::size_t Hub::batches_done() const { return s_->batch; }
const ViewCounts& Hub::view() const { return s_->view; }

// ---------------------------------------------------------------------------
// Aggregator

struct Aggregator::State {
  struct Batch {
    bool begun = false;
    std::uint64_t step = 0;
    std::map<std::uint32_t, std::uint32_t> slot_bank;
    std::map<std::uint32_t, std::uint32_t> received;  // slot -> sending bank
    std::vector<std::uint32_t> skipped;
    ring::FixedVector sum;
  };

  std::uint32_t banks;
  std::size_t dim;
  ProtocolConfig cfg;
  Prg root;
  std::map<SessionId, Batch> open;
  std::set<SessionId> closed;
  std::map<std::uint32_t, std::uint64_t> observations;
  ViewCounts view;
  bool shutdown = false;

  State(std::uint32_t b, std::size_t d, const ProtocolConfig& c)
      : banks(b), dim(d), cfg(c), root(Prg::from_u64(c.aggregator_seed).derive("aggregator")) {}

  Batch& batch_for(const SessionId& sid) {
    if (closed.contains(sid)) throw Error(ErrorCode::kSessionMismatch, "replayed batch session");
    auto [it, fresh] = open.try_emplace(sid);
    if (fresh) it->second.sum = ring::FixedVector(dim, cfg.fraction_bits);
    return it->second;
  }

  void check_slot(const Batch& b, std::uint32_t slot, std::uint32_t bank) const {
    auto it = b.slot_bank.find(slot);
    if (it == b.slot_bank.end() || it->second != bank)
      throw Error(ErrorCode::kProtocol, "share forwarded for an unannounced slot");
  }

  void maybe_finish(const SessionId& sid, Outbox& out) {
    Batch& b = open.at(sid);
    if (!b.begun || b.received.size() != b.slot_bank.size()) return;
    if (cfg.train.noise.active()) {
      std::vector<double> z(dim, 0.0);
      Prg nr = root.derive("noise", b.step);
      cfg.train.noise.add_to(z, nr);
      b.sum += ring::FixedVector::encode(z, cfg.fraction_bits);
    }
    std::sort(b.skipped.begin(), b.skipped.end());
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(b.skipped.size()));
    for (auto s : b.skipped) w.u32(s);
    w.blob(ring::to_bytes(b.sum));
    out.send(PartyId::hub(), make(MsgType::kAggregateShare, sid, w.take()));
    open.erase(sid);
    closed.insert(sid);
  }

  void on_control(const Envelope& e, Outbox& out) {
    if (e.from != PartyId::hub()) throw Error(ErrorCode::kProtocol, "control not from the hub");
    ByteReader r(e.msg.payload);
    const std::uint8_t kind = r.u8();
    if (kind == static_cast<std::uint8_t>(ControlKind::kShutdown)) {
      shutdown = true;
      return;
    }
    if (kind != static_cast<std::uint8_t>(ControlKind::kBatchBegin))
      throw Error(ErrorCode::kDecode, "unknown control message");
    Batch& b = batch_for(e.msg.session);
    if (b.begun) throw Error(ErrorCode::kSessionMismatch, "replayed batch announcement");
    b.step = r.u64();
    if (r.u32() != dim) throw Error(ErrorCode::kDimensionMismatch, "batch dimension mismatch");
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t slot = r.u32();
      const std::uint32_t bank = r.u32();
      if (bank >= banks) throw Error(ErrorCode::kProtocol, "slot names an unknown bank");
      if (!b.slot_bank.emplace(slot, bank).second)
        throw Error(ErrorCode::kProtocol, "duplicate slot in announcement");
    }
    r.expect_end();
    b.begun = true;
    for (const auto& [slot, bank] : b.received) check_slot(b, slot, bank);
    maybe_finish(e.msg.session, out);
  }

  void on_forward(const Envelope& e, Outbox& out) {
    if (e.from.role != Role::kBank || e.from.bank_index >= banks)
      throw Error(ErrorCode::kProtocol, "share forwarded by a non-bank");
    Batch& b = batch_for(e.msg.session);
    ByteReader r(e.msg.payload);
    const std::uint32_t slot = r.u32();
    const std::uint8_t status = r.u8();
    auto share = r.blob();
    r.expect_end();
    if (b.received.contains(slot)) throw Error(ErrorCode::kSessionMismatch, "replayed share");
    if (b.begun) check_slot(b, slot, e.from.bank_index);
    b.received[slot] = e.from.bank_index;
    ++observations[e.from.bank_index];
    if (status == static_cast<std::uint8_t>(Status::kOk)) {
      b.sum += vector_blob(share, dim, cfg.fraction_bits);
    } else if (status == static_cast<std::uint8_t>(Status::kUnknownAccount)) {
      if (!share.empty()) throw Error(ErrorCode::kDecode, "skip carries a share");
      b.skipped.push_back(slot);
    } else {
      throw Error(ErrorCode::kDecode, "unknown forward status");
    }
    maybe_finish(e.msg.session, out);
  }
};

Aggregator::Aggregator(std::uint32_t bank_count, std::size_t dimension, const ProtocolConfig& cfg)
    : s_(std::make_unique<State>(bank_count, dimension, cfg)) {
  cfg.validate();
}

Aggregator::~Aggregator() = default;

void Aggregator::on_message(const Envelope& e, Outbox& out) {
  ++s_->view[e.msg.type];
  switch (e.msg.type) {
    case MsgType::kControl: s_->on_control(e, out); break;
    case MsgType::kShareForward: s_->on_forward(e, out); break;
    default:
      throw Error(ErrorCode::kProtocol,
                  "aggregator cannot handle " + transport::to_string(e.msg.type));
  }
}

bool Aggregator::done() const { return s_->shutdown && s_->open.empty(); }
const std::map<std::uint32_t, std::uint64_t>& Aggregator::observations() const {
  return s_->observations;
}
const ViewCounts& Aggregator::view() const { return s_->view; }

// ---------------------------------------------------------------------------
// Bank

struct Bank::State {
  struct PendingOt {
    ot::CryptoReceiver receiver;
    std::string account;
    bool known;
  };

  std::uint32_t index;
  ProtocolConfig cfg;
  Prg root;
  std::unordered_map<std::string, std::uint8_t> flags;
  std::set<SessionId> seen;  // completed or in-progress select sessions
  std::map<std::tuple<SessionId, Purpose, std::uint32_t>, PendingOt> pending;
  std::map<std::string, ot::ReceiverKeyEntry> keys;
  std::map<std::string, std::uint64_t> last_nonce;
  std::uint64_t train_q = 0, key_q = 0, infer_q = 0, unknown = 0;
  bool shutdown = false;

  State(std::uint32_t i, std::span<const data::AccountRecord> accounts, const ProtocolConfig& c)
      : index(i), cfg(c), root(Prg::from_u64(c.bank_seed).derive("bank", i)) {
    for (const auto& a : accounts) {
      if (!flags.emplace(a.account_id, data::flag_bit(a.flag)).second)
        throw Error(ErrorCode::kDuplicateAccount, "duplicate account " + a.account_id);
    }
  }

  void fresh(const SessionId& sid) {
    if (!seen.insert(sid).second) throw Error(ErrorCode::kSessionMismatch, "replayed select");
  }

  std::optional<std::uint8_t> lookup(const std::string& account) {
    auto it = flags.find(account);
    if (it == flags.end()) return std::nullopt;
    return it->second;
  }

  void count_query(Purpose p) {
    switch (p) {
      case Purpose::kTrain: ++train_q; break;
      case Purpose::kKey: ++key_q; break;
      case Purpose::kInfer: ++infer_q; break;
    }
  }

  void forward(const SessionId& batch_sid, std::uint32_t slot, const Bytes* share, Outbox& out) {
    ByteWriter w;
    w.u32(slot);
    if (share) {
      w.u8(static_cast<std::uint8_t>(Status::kOk));
      w.blob(*share);
    } else {
      ++unknown;
      w.u8(static_cast<std::uint8_t>(Status::kUnknownAccount));
      w.blob({});
    }
    out.send(PartyId::aggregator(), make(MsgType::kShareForward, batch_sid, w.take()));
  }

  void reply_infer(const SessionId& sid, std::uint32_t query, const Bytes* share, Outbox& out) {
    ByteWriter w;
    w.u32(query);
    if (share) {
      ring::FixedVector v = ring::from_bytes(*share, cfg.fraction_bits);
      if (v.size() != 1) throw Error(ErrorCode::kDecode, "inference share must be scalar");
      if (cfg.infer_noise.active()) {
        Prg nr = root.derive("infer-noise",
                             session_index(sub_session(sid, Purpose::kInfer, query)));
        double z = cfg.infer_noise.sample(nr);
        v[0] += ring::encode(z, cfg.fraction_bits);
      }
      w.u8(static_cast<std::uint8_t>(Status::kOk));
      w.blob(ring::to_bytes(v));
    } else {
      ++unknown;
      w.u8(static_cast<std::uint8_t>(Status::kUnknownAccount));
      w.blob({});
    }
    out.send(PartyId::hub(), make(MsgType::kInferShare, sid, w.take()));
  }

  void store_key(const std::string& account, std::uint8_t b, std::span<const std::uint8_t> kb) {
    keys[account] = ot::ReceiverKeyEntry{account, b, key_from(kb)};
  }

  void deliver(Purpose p, const SessionId& session, std::uint32_t slot,
               const std::string& account, const Bytes* value, Outbox& out) {
    switch (p) {
      case Purpose::kTrain: forward(session, slot, value, out); break;
      case Purpose::kInfer: reply_infer(session, slot, value, out); break;
      case Purpose::kKey:
        if (value) store_key(account, *lookup(account), *value);
        break;
    }
  }

  void on_masked_pair(const Envelope& e, Outbox& out) {
    ByteReader r(e.msg.payload);
    const Purpose p = read_purpose(r);
    if (p == Purpose::kInfer) throw Error(ErrorCode::kProtocol, "inference uses InferRequest");
    const std::uint32_t slot = r.u32();
    const std::string account = r.str();
    const std::uint8_t mode = r.u8();
    fresh(sub_session(e.msg.session, p, slot));
    count_query(p);
    const auto b = lookup(account);
    if (mode == static_cast<std::uint8_t>(PairMode::kIdeal)) {
      auto m0 = r.blob();
      auto m1 = r.blob();
      r.expect_end();
      if (m0.size() != m1.size()) throw Error(ErrorCode::kDecode, "pair lengths differ");
      if (!b) return deliver(p, e.msg.session, slot, account, nullptr, out);
      const auto pick = *b == 0 ? m0 : m1;
      const Bytes v(pick.begin(), pick.end());
      return deliver(p, e.msg.session, slot, account, &v, out);
    }
    if (mode != static_cast<std::uint8_t>(PairMode::kKeyed) || p != Purpose::kTrain)
      throw Error(ErrorCode::kDecode, "bad pair mode");
    ot::KeyedPair pair;
    pair.nonce = r.u64();
    auto c0 = r.blob();
    auto c1 = r.blob();
    r.expect_end();
    pair.c0.assign(c0.begin(), c0.end());
    pair.c1.assign(c1.begin(), c1.end());
    if (!b) return deliver(p, e.msg.session, slot, account, nullptr, out);
    auto key = keys.find(account);
    if (key == keys.end()) throw Error(ErrorCode::kProtocol, "no cached key for " + account);
    auto& last = last_nonce[account];
    if (pair.nonce <= last) throw Error(ErrorCode::kSessionMismatch, "replayed keyed pair");
    last = pair.nonce;
    const Bytes v = ot::decrypt_choice(key->second, pair);
    deliver(p, e.msg.session, slot, account, &v, out);
  }

  void on_ot1(const Envelope& e, Outbox& out) {
    ByteReader r(e.msg.payload);
    const Purpose p = read_purpose(r);
    const std::uint32_t slot = r.u32();
    const std::string account = r.str();
    const auto a_point = point_bytes(r);
    r.expect_end();
    const SessionId sid = sub_session(e.msg.session, p, slot);
    fresh(sid);
    count_query(p);
    const auto b = lookup(account);
    // Unknown accounts still complete the transfer, with a dummy choice.
    Prg rr = root.derive("ot-receiver", session_index(sid));
    ot::CryptoReceiver rec(sid, b.value_or(0), rr);
    Bytes b_point = rec.respond(a_point);
    pending.emplace(std::tuple{e.msg.session, p, slot},
                    PendingOt{std::move(rec), account, b.has_value()});
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(p));
    w.u32(slot);
    w.raw(b_point);
    out.send(PartyId::hub(), make(MsgType::kOtMsg2, e.msg.session, w.take()));
  }

  void on_ot3(const Envelope& e, Outbox& out) {
    ByteReader r(e.msg.payload);
    const Purpose p = read_purpose(r);
    const std::uint32_t slot = r.u32();
    auto final_msg = r.blob();
    r.expect_end();
    auto it = pending.find({e.msg.session, p, slot});
    if (it == pending.end()) throw Error(ErrorCode::kSessionMismatch, "unexpected OT message");
    PendingOt st = std::move(it->second);
    pending.erase(it);
    if (!st.known) return deliver(p, e.msg.session, slot, st.account, nullptr, out);
    const Bytes v = st.receiver.finish(final_msg);
    deliver(p, e.msg.session, slot, st.account, &v, out);
  }

  void on_infer_request(const Envelope& e, Outbox& out) {
    ByteReader r(e.msg.payload);
    const std::uint32_t query = r.u32();
    const std::string account = r.str();
    auto m0 = r.blob();
    auto m1 = r.blob();
    r.expect_end();
    if (m0.size() != m1.size()) throw Error(ErrorCode::kDecode, "pair lengths differ");
    fresh(sub_session(e.msg.session, Purpose::kInfer, query));
    ++infer_q;
    const auto b = lookup(account);
    if (!b) return reply_infer(e.msg.session, query, nullptr, out);
    const auto pick = *b == 0 ? m0 : m1;
    const Bytes v(pick.begin(), pick.end());
    reply_infer(e.msg.session, query, &v, out);
  }
};

Bank::Bank(std::uint32_t index, std::span<const data::AccountRecord> accounts,
           const ProtocolConfig& cfg)
    : index_(index), s_(std::make_unique<State>(index, accounts, cfg)) {
  cfg.validate();
}

Bank::~Bank() = default;

void Bank::on_message(const Envelope& e, Outbox& out) {
  auto& s = *s_;
  if (e.from != PartyId::hub())
    throw Error(ErrorCode::kProtocol, "bank only takes requests from the hub");
  switch (e.msg.type) {
    case MsgType::kMaskedPair: s.on_masked_pair(e, out); break;
    case MsgType::kOtMsg1: s.on_ot1(e, out); break;
    case MsgType::kOtMsg3: s.on_ot3(e, out); break;
    case MsgType::kInferRequest: s.on_infer_request(e, out); break;
    case MsgType::kControl: {
      ByteReader r(e.msg.payload);
      if (r.u8() != static_cast<std::uint8_t>(ControlKind::kShutdown))
        throw Error(ErrorCode::kProtocol, "unexpected control message at bank");
      s.shutdown = true;
      break;
    }
    default:
      throw Error(ErrorCode::kProtocol, "bank cannot handle " + transport::to_string(e.msg.type));
  }
}

bool Bank::done() const { return s_->shutdown; }
std::uint64_t Bank::train_queries() const { return s_->train_q; }
std::uint64_t Bank::key_queries() const { return s_->key_q; }
std::uint64_t Bank::infer_queries() const { return s_->infer_q; }
std::uint64_t Bank::unknown_accounts() const { return s_->unknown; }

// ---------------------------------------------------------------------------
// Inference

Strategy parse_strategy(const std::string& s) {
  if (s == "direct") return Strategy::kDirect;
  if (s == "round") return Strategy::kRound;
  throw Error(ErrorCode::kConfig, "strategy must be direct or round, got '" + s + "'");
}

std::string to_string(Strategy s) { return s == Strategy::kDirect ? "direct" : "round"; }

double finalize_score(double s, double s0, double s1, Strategy strategy) {
  if (strategy == Strategy::kDirect) return s;
  return std::abs(s - s1) < std::abs(s - s0) ? s1 : s0;
}

struct InferenceHub::State {
  const model::Mlp& m;
  std::vector<InferQuery> queries;
  Strategy strategy;
  std::vector<std::uint32_t> banks;
  ProtocolConfig cfg;
  Prg root;
  SessionId sid;
  std::size_t next = 0;
  std::size_t answered = 0;
  bool shutdown_sent = false;
  std::uint64_t ot_count = 0;
  std::vector<InferResult> results;
  std::vector<bool> have;
  std::map<std::uint32_t, ot::CryptoSender> pending;
  ViewCounts view;

  State(const model::Mlp& mm, std::vector<InferQuery> q, Strategy st,
        std::vector<std::uint32_t> b, const ProtocolConfig& c)
      : m(mm),
        queries(std::move(q)),
        strategy(st),
        banks(std::move(b)),
        cfg(c),
        root(Prg::from_u64(c.hub_seed).derive("infer-hub")),
        results(queries.size()),
        have(queries.size(), false) {
    Prg r = root.derive("session");
    sid = random_session(r);
  }

  ring::RingElement mask(std::uint32_t q) const {
    Prg r = root.derive("mask", session_index(sub_session(sid, Purpose::kInfer, q)));
    return ring::RingElement{r.next_u64()};
  }

  std::pair<Bytes, Bytes> masked(std::uint32_t q) {
    const auto& qu = queries[q];
    results[q].s0 = m.forward(qu.features, 0);
    results[q].s1 = m.forward(qu.features, 1);
    const auto r = mask(q);
    ring::FixedVector m0(1, cfg.fraction_bits), m1(1, cfg.fraction_bits);
    m0[0] = ring::encode(results[q].s0, cfg.fraction_bits) - r;
    m1[0] = ring::encode(results[q].s1, cfg.fraction_bits) - r;
    return {ring::to_bytes(m0), ring::to_bytes(m1)};
  }
};

InferenceHub::InferenceHub(const model::Mlp& m, std::vector<InferQuery> queries,
                           Strategy strategy, std::vector<std::uint32_t> banks,
                           const ProtocolConfig& cfg)
    : s_(std::make_unique<State>(m, std::move(queries), strategy, std::move(banks), cfg)) {
  cfg.validate();
  for (const auto& q : s_->queries) {
    if (std::find(s_->banks.begin(), s_->banks.end(), q.bank) == s_->banks.end())
      throw Error(ErrorCode::kUnknownAccount, "query names a bank outside the session");
  }
}

InferenceHub::~InferenceHub() = default;

bool InferenceHub::poll(Outbox& out) {
  auto& s = *s_;
  if (s.next < s.queries.size()) {
    const bool crypto = s.cfg.ot_mode == ot::Mode::kCrypto;
    if (crypto && s.pending.size() >= s.cfg.window) return false;
    const auto q = static_cast<std::uint32_t>(s.next);
    const auto& qu = s.queries[q];
    ByteWriter w;
    ++s.ot_count;
    if (!crypto) {
      auto [m0, m1] = s.masked(q);
      w.u32(q);
      w.str(qu.account);
      w.blob(m0);
      w.blob(m1);
      out.send(PartyId::bank(qu.bank), make(MsgType::kInferRequest, s.sid, w.take()));
    } else {
      const SessionId osid = sub_session(s.sid, Purpose::kInfer, q);
      Prg sr = s.root.derive("ot-sender", session_index(osid));
      ot::CryptoSender sender(osid, sr);
      w.u8(static_cast<std::uint8_t>(Purpose::kInfer));
      w.u32(q);
      w.str(qu.account);
      w.raw(sender.first_message());
      s.pending.emplace(q, std::move(sender));
      out.send(PartyId::bank(qu.bank), make(MsgType::kOtMsg1, s.sid, w.take()));
    }
    ++s.next;
    return true;
  }
  if (s.answered == s.queries.size() && !s.shutdown_sent) {
    for (auto b : s.banks) out.send(PartyId::bank(b), shutdown_message());
    s.shutdown_sent = true;
    return true;
  }
  return false;
}

void InferenceHub::on_message(const Envelope& e, Outbox& out) {
  auto& s = *s_;
  ++s.view[e.msg.type];
  if (e.msg.session != s.sid) throw Error(ErrorCode::kSessionMismatch, "foreign session");
  ByteReader r(e.msg.payload);
  if (e.msg.type == MsgType::kOtMsg2) {
    if (read_purpose(r) != Purpose::kInfer) throw Error(ErrorCode::kProtocol, "bad purpose");
    const std::uint32_t q = r.u32();
    const auto b_point = point_bytes(r);
    r.expect_end();
    auto it = s.pending.find(q);
    if (it == s.pending.end()) throw Error(ErrorCode::kSessionMismatch, "unexpected OT reply");
    if (e.from != PartyId::bank(s.queries[q].bank))
      throw Error(ErrorCode::kProtocol, "OT reply from the wrong bank");
    auto [m0, m1] = s.masked(q);
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(Purpose::kInfer));
    w.u32(q);
    w.blob(it->second.final_message(b_point, m0, m1));
    s.pending.erase(it);
    out.send(e.from, make(MsgType::kOtMsg3, s.sid, w.take()));
    return;
  }
  if (e.msg.type != MsgType::kInferShare)
    throw Error(ErrorCode::kProtocol, "inference hub cannot handle " + transport::to_string(e.msg.type));
  const std::uint32_t q = r.u32();
  const std::uint8_t status = r.u8();
  auto share = r.blob();
  r.expect_end();
  if (q >= s.queries.size() || s.have[q] || q >= s.next)
    throw Error(ErrorCode::kSessionMismatch, "unexpected inference share");
  if (e.from != PartyId::bank(s.queries[q].bank))
    throw Error(ErrorCode::kProtocol, "inference share from the wrong bank");
  s.have[q] = true;
  ++s.answered;
  auto& res = s.results[q];
  if (status == static_cast<std::uint8_t>(Status::kOk)) {
    const auto v = vector_blob(share, 1, s.cfg.fraction_bits);
    const double noisy = ring::decode(v[0] + s.mask(q), s.cfg.fraction_bits);
    res.ok = true;
    res.score = finalize_score(noisy, res.s0, res.s1, s.strategy);
  } else if (status == static_cast<std::uint8_t>(Status::kUnknownAccount)) {
    res.ok = false;
    res.score = 0;
  } else {
    throw Error(ErrorCode::kDecode, "unknown inference status");
  }
}

bool InferenceHub::done() const { return s_->shutdown_sent; }
const std::vector<InferResult>& InferenceHub::results() const { return s_->results; }
std::uint64_t InferenceHub::ot_transfers() const { return s_->ot_count; }
const ViewCounts& InferenceHub::view() const { return s_->view; }

// ---------------------------------------------------------------------------
// Runners

Federation make_federation(const data::PreparedData& prepared,
                           std::span<const data::AccountRecord> accounts) {
  Federation f;
  f.hub_train = prepared.train;
  f.bank_count = static_cast<std::uint32_t>(prepared.banks.size());
  for (std::uint32_t i = 0; i < f.bank_count; ++i)
    f.bank_accounts.push_back(prepared.banks.accounts_of(accounts, i));
  return f;
}

namespace {

std::vector<PartyId> topology(std::uint32_t banks) {
  std::vector<PartyId> ids{PartyId::hub(), PartyId::aggregator()};
  for (std::uint32_t b = 0; b < banks; ++b) ids.push_back(PartyId::bank(b));
  return ids;
}

std::vector<std::unique_ptr<Bank>> make_banks(
    std::span<const std::vector<data::AccountRecord>> accounts, const ProtocolConfig& cfg) {
  std::vector<std::unique_ptr<Bank>> banks;
  for (std::size_t b = 0; b < accounts.size(); ++b)
    banks.push_back(
        std::make_unique<Bank>(static_cast<std::uint32_t>(b), accounts[b], cfg));
  return banks;
}

LeakageLedger ledger_of(const std::vector<std::unique_ptr<Bank>>& banks, const Aggregator* agg) {
  LeakageLedger l;
  for (const auto& b : banks) {
    const auto i = b->id().bank_index;
    l.bank_train_queries[i] = b->train_queries();
    l.bank_key_queries[i] = b->key_queries();
    l.bank_infer_queries[i] = b->infer_queries();
  }
  if (agg) l.aggregator_observations = agg->observations();
  return l;
}

}  // namespace

TrainOutcome train_sim(const Federation& fed, const ProtocolConfig& cfg,
                       std::uint64_t network_seed, const transport::SimRunOptions& opts,
                       FrameTap tap) {
  cfg.validate();
  ModelBatchSource src(fed.hub_train, cfg.train);
  Hub hub(src, fed.bank_count, cfg);
  Aggregator agg(fed.bank_count, src.dimension(), cfg);
  auto banks = make_banks(fed.bank_accounts, cfg);
  transport::SimNetwork net(topology(fed.bank_count), network_seed);
  if (tap) net.set_tap(tap);
  std::vector<transport::Party*> parties{&hub, &agg};
  for (auto& b : banks) parties.push_back(b.get());
  transport::run_sim(parties, net, opts);

  TrainOutcome o;
  o.model = src.model();
  o.steps = hub.batches_done();
  o.skipped = src.skipped();
  o.ot_transfers = hub.ot_transfers();
  o.comms = net.stats();
  o.leakage = ledger_of(banks, &agg);
  o.hub_view = hub.view();
  return o;
}

BatchRun train_batch(std::vector<std::vector<BatchItem>> batches, std::size_t dim,
                     std::span<const std::vector<data::AccountRecord>> bank_accounts,
                     const ProtocolConfig& cfg, std::uint64_t network_seed, FrameTap tap) {
  cfg.validate();
  FixedBatchSource src(std::move(batches), dim);
  const auto n_banks = static_cast<std::uint32_t>(bank_accounts.size());
  Hub hub(src, n_banks, cfg);
  Aggregator agg(n_banks, dim, cfg);
  auto banks = make_banks(bank_accounts, cfg);
  transport::SimNetwork net(topology(n_banks), network_seed);
  if (tap) net.set_tap(tap);
  std::vector<transport::Party*> parties{&hub, &agg};
  for (auto& b : banks) parties.push_back(b.get());
  transport::run_sim(parties, net);

  BatchRun r;
  r.updates = src.results();
  r.skipped = src.skipped();
  r.ot_transfers = hub.ot_transfers();
  r.comms = net.stats();
  r.leakage = ledger_of(banks, &agg);
  r.hub_view = hub.view();
  return r;
}

InferOutcome infer_sim(const model::Mlp& m, std::vector<InferQuery> queries, Strategy strategy,
                       std::span<const std::vector<data::AccountRecord>> bank_accounts,
                       const ProtocolConfig& cfg, std::uint64_t network_seed) {
  cfg.validate();
  const auto n_banks = static_cast<std::uint32_t>(bank_accounts.size());
  std::vector<std::uint32_t> ids(n_banks);
  for (std::uint32_t b = 0; b < n_banks; ++b) ids[b] = b;
  InferenceHub hub(m, std::move(queries), strategy, ids, cfg);
  auto banks = make_banks(bank_accounts, cfg);
  std::vector<PartyId> topo{PartyId::hub()};
  for (auto b : ids) topo.push_back(PartyId::bank(b));
  transport::SimNetwork net(topo, network_seed);
  std::vector<transport::Party*> parties{&hub};
  for (auto& b : banks) parties.push_back(b.get());
  transport::run_sim(parties, net);

  InferOutcome o;
  o.results = hub.results();
  o.ot_transfers = hub.ot_transfers();
  o.comms = net.stats();
  o.leakage = ledger_of(banks, nullptr);
  return o;
}

}  // namespace fedflag::protocol
