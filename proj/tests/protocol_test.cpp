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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fedflag/error.hpp"
#include "fedflag/protocol.hpp"

namespace fedflag::protocol {
namespace {

using transport::MsgType;

constexpr double kQuantum = 1.0 / (1 << 24);

data::AccountRecord account(std::uint32_t bank, const std::string& id, int flag) {
  data::AccountRecord a;
  a.bank_id = "B" + std::to_string(bank);
  a.account_id = id;
  a.name = "n";
  a.flag = flag;
  return a;
}

std::vector<double> random_vec(Prg& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * (2 * rng.uniform01() - 1);
  return v;
}

ProtocolConfig base_config() {
  ProtocolConfig c;
  c.train.noise = NoiseSpec::none();
  return c;
}

// Capturing outbox for driving parties by hand.
struct Recorder : transport::Outbox {
  PartyId self;
  std::vector<transport::Envelope> sent;
  explicit Recorder(PartyId s) : self(s) {}
  void send(PartyId to, transport::ProtocolMessage m) override {
    m.sender = self;
    sent.push_back({self, to, std::move(m)});
  }
};

// ---------------------------------------------------------------------------

TEST(NoiseDefaultTest, TenTimesClip) {
  EXPECT_EQ(noise_default(100), 1000);
  EXPECT_EQ(noise_default(1), 10);
  EXPECT_THROW(noise_default(0), Error);
  EXPECT_THROW(noise_default(std::numeric_limits<double>::infinity()), Error);
}

TEST(NoiseDefaultTest, ConfigDefaultAndOverride) {
  auto d = ProtocolConfig::from_config(KvConfig::parse_string("clip = 100\n"));
  EXPECT_EQ(d.train.noise, NoiseSpec::gaussian(1000));
  auto o = ProtocolConfig::from_config(KvConfig::parse_string("clip = 100\nnoise = gaussian:0.2\n"));
  EXPECT_EQ(o.train.noise, NoiseSpec::gaussian(0.2));
  auto n = ProtocolConfig::from_config(KvConfig::parse_string("clip = 100\nnoise = none\n"));
  EXPECT_FALSE(n.train.noise.active());
  auto off = ProtocolConfig::from_config(KvConfig::parse_string("clip = off\n"));
  EXPECT_FALSE(off.train.noise.active());
}

TEST(ProtocolConfigTest, RoundTrip) {
  ProtocolConfig c = base_config();
  c.ot_mode = ot::Mode::kCrypto;
  c.ot_reduction = true;
  c.key_cache = true;
  c.hub_seed = 5;
  c.aggregator_seed = 6;
  c.bank_seed = 7;
  c.window = 3;
  c.infer_noise = NoiseSpec::gaussian(0.005);
  c.train.noise = NoiseSpec::laplace(0.1);
  auto back = ProtocolConfig::from_config(c.to_config());
  EXPECT_EQ(back.to_config().canonical(), c.to_config().canonical());
  EXPECT_EQ(back.train, c.train);
  EXPECT_THROW(ProtocolConfig::from_config(KvConfig::parse_string("window = 0\n")), Error);
  EXPECT_THROW(ProtocolConfig::from_config(KvConfig::parse_string("ot = fancy\n")), Error);
}

// ---------------------------------------------------------------------------
// train_batch against the plaintext selected sum.

TEST(TrainBatchTest, SingleRowFlagZero) {
  auto rng = Prg::from_u64(1);
  BatchItem it{0, "A", 1, random_vec(rng, 7, 50), random_vec(rng, 7, 50)};
  std::vector<std::vector<data::AccountRecord>> banks{{account(0, "A", 0)}};
  auto r = train_batch({{it}}, 7, banks, base_config());
  ASSERT_EQ(r.updates.size(), 1u);
  for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(r.updates[0][j], it.u0[j], kQuantum / 2);
  EXPECT_EQ(r.ot_transfers, 1u);
}

TEST(TrainBatchTest, ThreeMixedBits) {
  auto rng = Prg::from_u64(2);
  std::vector<std::vector<data::AccountRecord>> banks{
      {account(0, "A", 0), account(0, "B", 3)}, {account(1, "C", 7)}};
  std::vector<BatchItem> items{{0, "A", 1, random_vec(rng, 9, 10), random_vec(rng, 9, 10)},
                               {0, "B", 1, random_vec(rng, 9, 10), random_vec(rng, 9, 10)},
                               {1, "C", 1, random_vec(rng, 9, 10), random_vec(rng, 9, 10)}};
  std::vector<double> oracle(9, 0.0);
  for (std::size_t j = 0; j < 9; ++j)
    oracle[j] = items[0].u0[j] + items[1].u1[j] + items[2].u1[j];
  for (auto mode : {ot::Mode::kIdeal, ot::Mode::kCrypto}) {
    auto cfg = base_config();
    cfg.ot_mode = mode;
    auto r = train_batch({items}, 9, banks, cfg);
    for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(r.updates[0][j], oracle[j], 3 * kQuantum / 2);
  }
}

// Every flag pattern for batches of 1..8 rows.
TEST(TrainBatchTest, ExhaustiveFlagPatterns) {
  auto rng = Prg::from_u64(3);
  const std::size_t dim = 4;
  for (std::size_t k = 1; k <= 8; ++k) {
    std::vector<std::vector<BatchItem>> batches;
    std::vector<std::vector<double>> oracles;
    std::vector<std::vector<data::AccountRecord>> banks(2);
    for (std::uint32_t pattern = 0; pattern < (1u << k); ++pattern) {
      std::vector<BatchItem> items;
      std::vector<double> oracle(dim, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        const int bit = (pattern >> i) & 1;
        const auto bank = static_cast<std::uint32_t>(i % 2);
        const std::string id = "P" + std::to_string(pattern) + "R" + std::to_string(i);
        banks[bank].push_back(account(bank, id, bit ? 1 + static_cast<int>(i) : 0));
        BatchItem it{bank, id, 1, random_vec(rng, dim, 100), random_vec(rng, dim, 100)};
        for (std::size_t j = 0; j < dim; ++j) oracle[j] += bit ? it.u1[j] : it.u0[j];
        items.push_back(std::move(it));
      }
      batches.push_back(std::move(items));
      oracles.push_back(oracle);
    }
    auto r = train_batch(batches, dim, banks, base_config(), k);
    ASSERT_EQ(r.updates.size(), oracles.size());
    for (std::size_t b = 0; b < oracles.size(); ++b)
      for (std::size_t j = 0; j < dim; ++j)
        EXPECT_NEAR(r.updates[b][j], oracles[b][j], static_cast<double>(k) * kQuantum / 2 + 1e-12)
            << "k=" << k << " pattern=" << b;
  }
}

TEST(TrainBatchTest, GaussianNoiseHasConfiguredSpread) {
  const std::size_t dim = 6;
  std::vector<std::vector<BatchItem>> batches(
      200, {BatchItem{0, "A", 1, std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)}});
  std::vector<std::vector<data::AccountRecord>> banks{{account(0, "A", 1)}};
  for (double sigma : {0.2, 1000.0}) {
    auto cfg = base_config();
    cfg.train.noise = NoiseSpec::gaussian(sigma);
    auto r = train_batch(batches, dim, banks, cfg);
    for (std::size_t j = 0; j < dim; ++j) {
      double mean = 0, sq = 0;
      for (const auto& u : r.updates) mean += u[j];
      mean /= 200;
      for (const auto& u : r.updates) sq += (u[j] - mean) * (u[j] - mean);
      const double sd = std::sqrt(sq / 199);
      EXPECT_NEAR(sd, sigma, 0.15 * sigma) << "sigma=" << sigma << " coord " << j;
    }
  }
}

TEST(TrainBatchTest, LaplaceNoiseHasConfiguredSpread) {
  const std::size_t dim = 3;
  std::vector<std::vector<BatchItem>> batches(
      400, {BatchItem{0, "A", 1, std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)}});
  std::vector<std::vector<data::AccountRecord>> banks{{account(0, "A", 0)}};
  auto cfg = base_config();
  cfg.train.noise = NoiseSpec::laplace(0.1);
  auto r = train_batch(batches, dim, banks, cfg);
  for (std::size_t j = 0; j < dim; ++j) {
    double mad = 0;
    for (const auto& u : r.updates) mad += std::abs(u[j]);
    EXPECT_NEAR(mad / 400, 0.1, 0.015);  // E|X| = scale
  }
}

TEST(TrainBatchTest, UnknownAccountIsSkippedAndCounted) {
  auto rng = Prg::from_u64(4);
  std::vector<std::vector<data::AccountRecord>> banks{{account(0, "A", 2)}};
  std::vector<BatchItem> items{{0, "A", 1, random_vec(rng, 5, 3), random_vec(rng, 5, 3)},
                               {0, "ghost", 1, random_vec(rng, 5, 3), random_vec(rng, 5, 3)}};
  for (auto mode : {ot::Mode::kIdeal, ot::Mode::kCrypto}) {
    auto cfg = base_config();
    cfg.ot_mode = mode;
    auto r = train_batch({items}, 5, banks, cfg);
    EXPECT_EQ(r.skipped[0], 1u);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(r.updates[0][j], items[0].u1[j], kQuantum);
    EXPECT_EQ(r.leakage.bank_train_queries.at(0), 2u);
    EXPECT_EQ(r.leakage.aggregator_observations.at(0), 2u);
  }
}

TEST(TrainBatchTest, KeyCacheMatchesDirectOtAndCountsAccounts) {
  auto rng = Prg::from_u64(5);
  std::vector<std::vector<data::AccountRecord>> banks{
      {account(0, "A", 0), account(0, "B", 4)}, {account(1, "C", 1)}};
  const char* accts[] = {"A", "B", "C"};
  std::vector<std::vector<BatchItem>> batches;
  for (int b = 0; b < 6; ++b) {
    std::vector<BatchItem> items;
    for (int i = 0; i < 5; ++i) {
      const int a = static_cast<int>(rng.uniform_below(3));
      items.push_back({a == 2 ? 1u : 0u, accts[a], 1, random_vec(rng, 4, 5), random_vec(rng, 4, 5)});
    }
    batches.push_back(items);
  }
  std::set<std::string> used;
  for (const auto& b : batches)
    for (const auto& it : b) used.insert(it.account);

  auto direct = train_batch(batches, 4, banks, base_config());
  EXPECT_EQ(direct.ot_transfers, 30u);
  for (auto mode : {ot::Mode::kIdeal, ot::Mode::kCrypto}) {
    auto cfg = base_config();
    cfg.key_cache = true;
    cfg.ot_mode = mode;
    auto cached = train_batch(batches, 4, banks, cfg);
    EXPECT_EQ(cached.ot_transfers, used.size());
    EXPECT_EQ(cached.updates, direct.updates);
    std::uint64_t key_q = 0;
    for (const auto& [b, n] : cached.leakage.bank_key_queries) key_q += n;
    EXPECT_EQ(key_q, used.size());
  }
  // Doubling the batches (a second "epoch") leaves the key OT count alone.
  auto twice = batches;
  twice.insert(twice.end(), batches.begin(), batches.end());
  auto cfg = base_config();
  cfg.key_cache = true;
  EXPECT_EQ(train_batch(twice, 4, banks, cfg).ot_transfers, used.size());
}

TEST(TrainBatchTest, OtReductionSkipsNormalRows) {
  auto rng = Prg::from_u64(6);
  std::vector<std::vector<data::AccountRecord>> banks{
      {account(0, "N1", 0), account(0, "N2", 0), account(0, "X", 5)}};
  std::vector<BatchItem> items{{0, "N1", 0, random_vec(rng, 4, 2), random_vec(rng, 4, 2)},
                               {0, "X", 1, random_vec(rng, 4, 2), random_vec(rng, 4, 2)},
                               {0, "N2", 0, random_vec(rng, 4, 2), random_vec(rng, 4, 2)},
                               {0, "X", 1, random_vec(rng, 4, 2), random_vec(rng, 4, 2)}};
  auto plain = train_batch({items}, 4, banks, base_config());
  auto cfg = base_config();
  cfg.ot_reduction = true;
  auto reduced = train_batch({items}, 4, banks, cfg);
  EXPECT_EQ(plain.ot_transfers, 4u);
  EXPECT_EQ(reduced.ot_transfers, 2u);
  EXPECT_EQ(reduced.updates, plain.updates);
  EXPECT_EQ(reduced.leakage.bank_train_queries.at(0), 2u);
  EXPECT_EQ(reduced.leakage.aggregator_observations.at(0), 2u);

  // A batch with no OT slots closes at the aggregator right away.
  std::vector<BatchItem> normal{items[0], items[2]};
  auto empty = train_batch({normal, normal, items}, 4, banks, cfg);
  for (std::size_t j = 0; j < 4; ++j)
    EXPECT_NEAR(empty.updates[0][j], items[0].u0[j] + items[2].u0[j], kQuantum);
  EXPECT_EQ(empty.updates[2], plain.updates[0]);
}

// The share a bank forwards is u_b - r for a fresh uniform r: its bytes
// should look uniform for fixed candidates, whichever bit is selected.
TEST(TrainBatchTest, ForwardedSharesLookUniform) {
  auto rng = Prg::from_u64(7);
  const std::size_t dim = 32;
  const auto u0 = random_vec(rng, dim, 1), u1 = random_vec(rng, dim, 1);
  for (int flag : {0, 9}) {
    std::vector<std::vector<data::AccountRecord>> banks{{account(0, "A", flag)}};
    std::vector<std::uint64_t> counts(256, 0);
    std::uint64_t top_bits = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      auto cfg = base_config();
      cfg.hub_seed = 1000 + seed;
      train_batch({{BatchItem{0, "A", 1, u0, u1}}}, dim, banks, cfg, 1,
                  [&](PartyId, PartyId to, std::span<const std::uint8_t> frame) {
                    auto m = transport::decode_frame(frame);
                    if (m.type != MsgType::kShareForward) return;
                    EXPECT_EQ(to, PartyId::aggregator());
                    ByteReader r(m.payload);
                    r.u32();
                    r.u8();
                    auto share = r.blob();
                    for (std::size_t i = 0; i < share.size(); ++i) {
                      ++counts[share[i]];
                      if (i % 8 == 7) top_bits += share[i] >> 7;
                    }
                    total += share.size() / 8;
                  });
    }
    double n = 0;
    for (auto c : counts) n += static_cast<double>(c);
    const double e = n / 256;
    double chi2 = 0;
    for (auto c : counts) chi2 += (static_cast<double>(c) - e) * (static_cast<double>(c) - e) / e;
    // 255 degrees of freedom; 0.1% upper critical value is about 330.
    EXPECT_LT(chi2, 330) << "flag " << flag;
    // Sign bit of each element: binomial, 4 sigma.
    const double p = static_cast<double>(top_bits) / static_cast<double>(total);
    EXPECT_NEAR(p, 0.5, 4 * 0.5 / std::sqrt(static_cast<double>(total)));
  }
}

// ---------------------------------------------------------------------------
// Party-level checks.

transport::Envelope env(PartyId from, PartyId to, transport::ProtocolMessage m) {
  m.sender = from;
  return {from, to, std::move(m)};
}

TEST(PartyTest, HubViewIsOneAggregatePerBatch) {
  auto rng = Prg::from_u64(8);
  std::vector<std::vector<data::AccountRecord>> banks{{account(0, "A", 1), account(0, "B", 0)}};
  std::vector<std::vector<BatchItem>> batches;
  for (int b = 0; b < 7; ++b)
    batches.push_back({{0, "A", 1, random_vec(rng, 3, 1), random_vec(rng, 3, 1)},
                       {0, "B", 1, random_vec(rng, 3, 1), random_vec(rng, 3, 1)}});
  auto ideal = train_batch(batches, 3, banks, base_config());
  ASSERT_EQ(ideal.hub_view.size(), 1u);
  EXPECT_EQ(ideal.hub_view.at(MsgType::kAggregateShare), 7u);

  auto cfg = base_config();
  cfg.ot_mode = ot::Mode::kCrypto;
  auto crypto = train_batch(batches, 3, banks, cfg);
  EXPECT_EQ(crypto.hub_view.at(MsgType::kAggregateShare), 7u);
  // Beyond the aggregate, only OT transcript replies reach the hub.
  EXPECT_EQ(crypto.hub_view.at(MsgType::kOtMsg2), 14u);
  EXPECT_EQ(crypto.hub_view.size(), 2u);
}

TEST(PartyTest, AggregatorRejectsReplays) {
  auto cfg = base_config();
  Aggregator agg(1, 2, cfg);
  Recorder out(PartyId::aggregator());
  SessionId sid{};
  sid[0] = 1;
  ByteWriter begin;
  begin.u8(1);
  begin.u64(0);
  begin.u32(2);
  begin.u32(1);
  begin.u32(0);
  begin.u32(0);
  transport::ProtocolMessage bm;
  bm.type = MsgType::kControl;
  bm.session = sid;
  bm.payload = begin.take();
  agg.on_message(env(PartyId::hub(), PartyId::aggregator(), bm), out);

  ByteWriter fw;
  fw.u32(0);
  fw.u8(0);
  fw.blob(ring::to_bytes(ring::FixedVector::encode(std::vector<double>{1.0, 2.0})));
  transport::ProtocolMessage fm;
  fm.type = MsgType::kShareForward;
  fm.session = sid;
  fm.payload = fw.take();
  agg.on_message(env(PartyId::bank(0), PartyId::aggregator(), fm), out);
  ASSERT_EQ(out.sent.size(), 1u);
  EXPECT_EQ(out.sent[0].msg.type, MsgType::kAggregateShare);

  for (const auto& m : {fm, bm}) {
    try {
      agg.on_message(env(m.type == MsgType::kControl ? PartyId::hub() : PartyId::bank(0),
                         PartyId::aggregator(), m),
                     out);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kSessionMismatch);
    }
  }
  // A forward for an unannounced slot is a protocol error.
  SessionId sid2{};
  sid2[0] = 2;
  bm.session = sid2;
  agg.on_message(env(PartyId::hub(), PartyId::aggregator(), bm), out);
  ByteWriter bad;
  bad.u32(5);
  bad.u8(0);
  bad.blob(ring::to_bytes(ring::FixedVector(2)));
  fm.session = sid2;
  fm.payload = bad.take();
  EXPECT_THROW(agg.on_message(env(PartyId::bank(0), PartyId::aggregator(), fm), out), Error);
}

TEST(PartyTest, BankRejectsReplayedSelect) {
  auto cfg = base_config();
  std::vector<data::AccountRecord> accts{account(0, "A", 1)};
  Bank bank(0, accts, cfg);
  Recorder out(PartyId::bank(0));
  ByteWriter w;
  w.u8(0);
  w.u32(3);
  w.str("A");
  w.u8(0);
  w.blob(Bytes(8, 1));
  w.blob(Bytes(8, 2));
  transport::ProtocolMessage m;
  m.type = MsgType::kMaskedPair;
  m.session[0] = 9;
  m.payload = w.take();
  bank.on_message(env(PartyId::hub(), PartyId::bank(0), m), out);
  ASSERT_EQ(out.sent.size(), 1u);
  EXPECT_EQ(out.sent[0].to, PartyId::aggregator());
  ByteReader r(out.sent[0].msg.payload);
  EXPECT_EQ(r.u32(), 3u);
  EXPECT_EQ(r.u8(), 0);
  auto share = r.blob();
  EXPECT_EQ(Bytes(share.begin(), share.end()), Bytes(8, 2));  // flag 1 picks m1
  try {
    bank.on_message(env(PartyId::hub(), PartyId::bank(0), m), out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSessionMismatch);
  }
  // Requests only come from the hub.
  EXPECT_THROW(bank.on_message(env(PartyId::aggregator(), PartyId::bank(0), m), out), Error);
}

TEST(PartyTest, HubRejectsForeignAggregate) {
  auto rng = Prg::from_u64(9);
  FixedBatchSource src({{{0, "A", 1, random_vec(rng, 2, 1), random_vec(rng, 2, 1)}}}, 2);
  Hub hub(src, 1, base_config());
  Recorder out(PartyId::hub());
  while (hub.poll(out)) {
  }
  transport::ProtocolMessage m;
  m.type = MsgType::kAggregateShare;
  m.session[0] = 0xEE;
  ByteWriter w;
  w.u32(0);
  w.blob(ring::to_bytes(ring::FixedVector(2)));
  m.payload = w.take();
  try {
    hub.on_message(env(PartyId::aggregator(), PartyId::hub(), m), out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSessionMismatch);
  }
  EXPECT_THROW(hub.on_message(env(PartyId::bank(0), PartyId::hub(), m), out), Error);
}

// ---------------------------------------------------------------------------
// Full training.

struct Fixture {
  data::Dataset ds;
  data::PreparedData prep;
  Federation fed;
  std::vector<std::uint8_t> flags;  // plaintext, for the centralized oracle
};

Fixture make_fixture(std::size_t n, double rho, std::uint64_t seed) {
  Fixture f;
  data::DatasetConfig dc;
  dc.n_transactions = n;
  dc.n_accounts = 200;
  dc.n_banks = 3;
  dc.anomaly_rate = 0.02;
  dc.rho = rho;
  dc.seed = seed;
  f.ds = data::generate_synthetic(dc);
  f.prep = data::prepare(f.ds.transactions, f.ds.accounts, data::RateTable::defaults(), {});
  f.fed = make_federation(f.prep, f.ds.accounts);
  auto table = data::FlagTable::from_accounts(f.ds.accounts, f.prep.banks);
  for (const auto& ex : f.fed.hub_train)
    f.flags.push_back(table.bit(ex.receiver_bank, ex.receiver_account).value_or(model::kSkipRow));
  return f;
}

ProtocolConfig small_training() {
  ProtocolConfig c = base_config();
  c.train.epochs = 2;
  c.train.batch_size = 64;
  c.train.clip = std::numeric_limits<double>::infinity();
  c.train.sizes = {data::kFeatureCount + 1, 16, 8, 1};
  return c;
}

double max_abs_diff(const model::Mlp& a, const model::Mlp& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.parameter_count(); ++i)
    d = std::max(d, std::abs(a.parameters()[i] - b.parameters()[i]));
  return d;
}

TEST(TrainTest, MatchesCentralizedWithoutNoise) {
  auto f = make_fixture(1200, 0.7, 21);
  auto cfg = small_training();
  auto fed = train_sim(f.fed, cfg);
  auto central = model::train_centralized(f.fed.hub_train, f.flags, cfg.train);
  EXPECT_EQ(fed.steps, central.steps);
  const double tol = static_cast<double>(fed.steps) * std::ldexp(1.0, -24 + 4);
  EXPECT_LE(max_abs_diff(fed.model, central.model), tol);
  EXPECT_GT(max_abs_diff(fed.model, model::initial_model(cfg.train)), 1e-3);
}

TEST(TrainTest, MatchesCentralizedWithClipping) {
  auto f = make_fixture(800, 0.7, 22);
  auto cfg = small_training();
  cfg.train.clip = 0.5;
  auto fed = train_sim(f.fed, cfg);
  auto central = model::train_centralized(f.fed.hub_train, f.flags, cfg.train);
  EXPECT_LE(max_abs_diff(fed.model, central.model),
            static_cast<double>(fed.steps) * std::ldexp(1.0, -24 + 4));
}

TEST(TrainTest, OtVariantsGiveIdenticalModels) {
  auto f = make_fixture(600, 0.7, 23);
  auto cfg = small_training();
  auto ideal = train_sim(f.fed, cfg);
  for (int variant = 0; variant < 4; ++variant) {
    auto c = cfg;
    c.ot_mode = variant % 2 ? ot::Mode::kCrypto : ot::Mode::kIdeal;
    c.key_cache = variant >= 2;
    auto r = train_sim(f.fed, c);
    EXPECT_EQ(r.model, ideal.model) << "variant " << variant;
  }
  // Reduction relies on normal receivers having flag 0, which the generator
  // guarantees.
  auto c = cfg;
  c.ot_reduction = true;
  EXPECT_EQ(train_sim(f.fed, c).model, ideal.model);
}

TEST(TrainTest, OtCountsFollowOptimizations) {
  auto f = make_fixture(600, 0.7, 24);
  auto cfg = small_training();
  std::size_t anomalous = 0;
  std::set<std::pair<std::uint32_t, std::string>> all_recv, anomalous_recv;
  for (const auto& ex : f.fed.hub_train) {
    all_recv.insert({ex.receiver_bank, ex.receiver_account});
    if (ex.label) {
      ++anomalous;
      anomalous_recv.insert({ex.receiver_bank, ex.receiver_account});
    }
  }
  const std::size_t n = f.fed.hub_train.size();

  auto plain = train_sim(f.fed, cfg);
  EXPECT_EQ(plain.ot_transfers, cfg.train.epochs * n);

  auto c = cfg;
  c.ot_reduction = true;
  EXPECT_EQ(train_sim(f.fed, c).ot_transfers, cfg.train.epochs * anomalous);

  c.key_cache = true;
  EXPECT_EQ(train_sim(f.fed, c).ot_transfers, anomalous_recv.size());
  c.train.epochs = 4;
  EXPECT_EQ(train_sim(f.fed, c).ot_transfers, anomalous_recv.size());

  c.ot_reduction = false;
  EXPECT_EQ(train_sim(f.fed, c).ot_transfers, all_recv.size());
}

TEST(TrainTest, LedgerTotalsMatchProcessedRows) {
  auto f = make_fixture(600, 0.5, 25);
  auto cfg = small_training();
  auto r = train_sim(f.fed, cfg);
  const std::uint64_t processed = cfg.train.epochs * f.fed.hub_train.size();
  std::uint64_t train_q = 0;
  for (const auto& [b, n] : r.leakage.bank_train_queries) train_q += n;
  EXPECT_EQ(train_q, processed);
  EXPECT_EQ(r.leakage.total_aggregator_observations(), processed);
  // Per bank, the aggregator sees exactly the rows addressed to that bank.
  std::map<std::uint32_t, std::uint64_t> per_bank;
  for (const auto& ex : f.fed.hub_train) per_bank[ex.receiver_bank] += cfg.train.epochs;
  EXPECT_EQ(r.leakage.aggregator_observations, per_bank);
  EXPECT_EQ(r.leakage.bank_train_queries, per_bank);
  EXPECT_EQ(r.hub_view.at(MsgType::kAggregateShare), r.steps);
  EXPECT_EQ(r.hub_view.size(), 1u);
}

TEST(TrainTest, UnknownAccountsMatchCentralizedSkips) {
  auto f = make_fixture(600, 0.5, 26);
  // Drop two receiving accounts from their bank.
  std::set<std::string> dropped;
  for (const auto& ex : f.fed.hub_train) {
    if (dropped.size() == 2) break;
    dropped.insert(ex.receiver_account);
  }
  for (auto& accts : f.fed.bank_accounts)
    std::erase_if(accts, [&](const auto& a) { return dropped.contains(a.account_id); });
  std::size_t expect_skips = 0;
  for (std::size_t i = 0; i < f.fed.hub_train.size(); ++i) {
    if (dropped.contains(f.fed.hub_train[i].receiver_account)) {
      f.flags[i] = model::kSkipRow;
      ++expect_skips;
    }
  }
  ASSERT_GT(expect_skips, 0u);
  auto cfg = small_training();
  auto fed = train_sim(f.fed, cfg);
  auto central = model::train_centralized(f.fed.hub_train, f.flags, cfg.train);
  EXPECT_EQ(fed.skipped, expect_skips * cfg.train.epochs);
  EXPECT_LE(max_abs_diff(fed.model, central.model),
            static_cast<double>(fed.steps) * std::ldexp(1.0, -24 + 4));
}

// Delivery order across pairs varies with the network seed and the polling
// window; nothing observable may change.
TEST(TrainTest, ReorderingAcrossPairsIsHarmless) {
  auto f = make_fixture(500, 0.6, 27);
  auto cfg = small_training();
  cfg.train.noise = NoiseSpec::gaussian(0.3);
  cfg.ot_mode = ot::Mode::kCrypto;
  cfg.window = 4;
  auto ref = train_sim(f.fed, cfg, 1, {1});
  for (std::uint64_t seed : {2, 3, 4}) {
    for (std::size_t window : {2, 64, 4096}) {
      auto r = train_sim(f.fed, cfg, seed, {window});
      EXPECT_EQ(r.model, ref.model) << seed << "/" << window;
      EXPECT_EQ(r.comms, ref.comms);
      EXPECT_EQ(r.leakage.aggregator_observations, ref.leakage.aggregator_observations);
    }
  }
}

TEST(TrainTest, CommsCountEveryFrame) {
  auto f = make_fixture(400, 0.6, 28);
  auto cfg = small_training();
  std::uint64_t tapped = 0;
  auto r = train_sim(f.fed, cfg, 1, {},
                     [&](PartyId, PartyId, std::span<const std::uint8_t> fr) { tapped += fr.size(); });
  EXPECT_EQ(r.comms.total_bytes(), tapped);
}

TEST(TrainTest, LoopbackTcpMatchesSimulation) {
  auto f = make_fixture(625, 0.6, 29);  // 500 training rows
  ASSERT_GE(f.fed.hub_train.size(), 500u);
  auto cfg = small_training();
  cfg.train.noise = NoiseSpec::gaussian(0.2);
  auto sim = train_sim(f.fed, cfg);
  auto tcp = train_tcp_loopback(f.fed, cfg);
  EXPECT_EQ(model::checkpoint_bytes(tcp.model, nullptr), model::checkpoint_bytes(sim.model, nullptr));
  EXPECT_EQ(tcp.comms, sim.comms);
  EXPECT_EQ(tcp.ot_transfers, sim.ot_transfers);
  cfg.ot_mode = ot::Mode::kCrypto;
  cfg.key_cache = true;
  auto tcp_crypto = train_tcp_loopback(f.fed, cfg);
  EXPECT_EQ(tcp_crypto.model, sim.model);
}

// ---------------------------------------------------------------------------
// Inference.

struct InferFixture {
  model::Mlp m{model::Mlp({4, 6, 1})};
  std::vector<std::vector<data::AccountRecord>> banks{
      {account(0, "Z", 0), account(0, "F", 6)}, {account(1, "G", 2)}};
  InferFixture() {
    auto rng = Prg::from_u64(30);
    m = model::Mlp::init({4, 6, 1}, rng);
  }
  std::vector<InferQuery> queries(std::size_t n, std::uint64_t seed) const {
    auto rng = Prg::from_u64(seed);
    std::vector<InferQuery> q;
    const char* ids[] = {"Z", "F", "G"};
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = rng.uniform_below(3);
      q.push_back({random_vec(rng, 3, 2), a == 2 ? 1u : 0u, ids[a]});
    }
    return q;
  }
};

TEST(InferTest, NoNoiseSelectsTheFlaggedScore) {
  InferFixture fx;
  auto qs = fx.queries(40, 1);
  for (auto mode : {ot::Mode::kIdeal, ot::Mode::kCrypto}) {
    auto cfg = base_config();
    cfg.ot_mode = mode;
    auto direct = infer_sim(fx.m, qs, Strategy::kDirect, fx.banks, cfg);
    auto round = infer_sim(fx.m, qs, Strategy::kRound, fx.banks, cfg);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const bool flagged = qs[i].account != "Z";
      const double s0 = fx.m.forward(qs[i].features, 0), s1 = fx.m.forward(qs[i].features, 1);
      const double want = flagged ? s1 : s0;
      ASSERT_TRUE(direct.results[i].ok);
      EXPECT_NEAR(direct.results[i].score, want, kQuantum / 2);
      // Rounding snaps onto the exact candidate unless the two are closer
      // than the encoding step.
      if (std::abs(s0 - s1) > kQuantum) {
        EXPECT_EQ(round.results[i].score, want);
      }
    }
    EXPECT_EQ(direct.ot_transfers, qs.size());
  }
}

TEST(InferTest, EqualCandidatesIgnoreFlagAndStrategy) {
  InferFixture fx;
  // Zero the flag column: s0 == s1.
  for (std::size_t r = 0; r < 6; ++r) fx.m.parameters()[fx.m.weight_offset(0) + r * 4 + 3] = 0;
  auto qs = fx.queries(10, 2);
  for (auto st : {Strategy::kDirect, Strategy::kRound}) {
    auto out = infer_sim(fx.m, qs, st, fx.banks, base_config());
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const double s = fx.m.forward(qs[i].features, 0);
      if (st == Strategy::kRound) {
        EXPECT_EQ(out.results[i].score, s);
      } else {
        EXPECT_NEAR(out.results[i].score, s, kQuantum / 2);
      }
    }
  }
}

TEST(InferTest, RoundWithNoiseStaysOnCandidates) {
  InferFixture fx;
  auto qs = fx.queries(300, 3);
  auto cfg = base_config();
  cfg.infer_noise = NoiseSpec::gaussian(0.005);
  auto out = infer_sim(fx.m, qs, Strategy::kRound, fx.banks, cfg);
  auto noisy = infer_sim(fx.m, qs, Strategy::kDirect, fx.banks, cfg);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const double s0 = fx.m.forward(qs[i].features, 0), s1 = fx.m.forward(qs[i].features, 1);
    EXPECT_TRUE(out.results[i].score == s0 || out.results[i].score == s1);
    const double want = qs[i].account != "Z" ? s1 : s0;
    moved += std::abs(noisy.results[i].score - want) > 1e-4;
  }
  EXPECT_GT(moved, 250u);  // the noise really was applied
}

TEST(InferTest, TrainingNoiseDoesNotLeakIntoInference) {
  InferFixture fx;
  auto qs = fx.queries(30, 4);
  auto quiet = base_config();
  auto loud = base_config();
  loud.train.noise = NoiseSpec::gaussian(1000);
  for (auto st : {Strategy::kDirect, Strategy::kRound}) {
    auto a = infer_sim(fx.m, qs, st, fx.banks, quiet);
    auto b = infer_sim(fx.m, qs, st, fx.banks, loud);
    for (std::size_t i = 0; i < qs.size(); ++i)
      EXPECT_EQ(a.results[i].score, b.results[i].score);
  }
}

TEST(InferTest, LedgerAndUnknownAccount) {
  InferFixture fx;
  auto qs = fx.queries(1, 5);
  qs[0].bank = 1;
  qs[0].account = "G";
  auto out = infer_sim(fx.m, qs, Strategy::kDirect, fx.banks, base_config());
  EXPECT_EQ(out.leakage.bank_infer_queries.at(1), 1u);
  EXPECT_EQ(out.leakage.bank_infer_queries.at(0), 0u);
  EXPECT_TRUE(out.leakage.aggregator_observations.empty());
  EXPECT_EQ(out.leakage.total_bank_queries(), 1u);
  for (const auto& [k, l] : out.comms.links()) {
    EXPECT_NE(k.first, PartyId::aggregator());
    EXPECT_NE(k.second, PartyId::aggregator());
  }

  qs[0].account = "nobody";
  for (auto mode : {ot::Mode::kIdeal, ot::Mode::kCrypto}) {
    auto cfg = base_config();
    cfg.ot_mode = mode;
    auto miss = infer_sim(fx.m, qs, Strategy::kDirect, fx.banks, cfg);
    EXPECT_FALSE(miss.results[0].ok);
  }
  qs[0].bank = 7;
  EXPECT_THROW(infer_sim(fx.m, qs, Strategy::kDirect, fx.banks, base_config()), Error);
}

TEST(InferTest, FinalizeScoreTiesGoToS0) {
  EXPECT_EQ(finalize_score(0.5, 0.4, 0.6, Strategy::kRound), 0.4);
  EXPECT_EQ(finalize_score(0.55, 0.4, 0.6, Strategy::kRound), 0.6);
  EXPECT_EQ(finalize_score(0.55, 0.4, 0.6, Strategy::kDirect), 0.55);
  EXPECT_EQ(parse_strategy("round"), Strategy::kRound);
  EXPECT_THROW(parse_strategy("vote"), Error);
}

}  // namespace
}  // namespace fedflag::protocol
