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

#include "fedflag/ot.hpp"

#include <cstring>
#include <vector>

#include "fedflag/error.hpp"
#include "fedflag/sharing.hpp"
#include "gtest/gtest.h"

namespace fedflag::ot {
namespace {

using ring::FixedVector;

Bytes str_bytes(const char* s) { return Bytes(s, s + std::strlen(s)); }

class OtModeTest : public ::testing::TestWithParam<Mode> {};

TEST_P(OtModeTest, SelectsRequestedMessage) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  SenderInput in{{}, str_bytes("A"), str_bytes("B")};
  EXPECT_EQ(ot_transfer(in, Choice{{}, 0}, GetParam(), s, r), str_bytes("A"));
  EXPECT_EQ(ot_transfer(in, Choice{{}, 1}, GetParam(), s, r), str_bytes("B"));
}

TEST_P(OtModeTest, RandomizedCorrectness) {
  Prg s = Prg::from_u64(3), r = Prg::from_u64(4), g = Prg::from_u64(5);
  Counter counter;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t len = g.uniform_below(64);
    SenderInput in;
    g.fill(in.sid);
    in.v0.resize(len);
    in.v1.resize(len);
    g.fill(in.v0);
    g.fill(in.v1);
    const std::uint8_t b = static_cast<std::uint8_t>(g.uniform_below(2));
    ASSERT_EQ(ot_transfer(in, Choice{in.sid, b}, GetParam(), s, r, &counter),
              b == 0 ? in.v0 : in.v1);
  }
  EXPECT_EQ(counter.transfers, 1000u);
}

TEST_P(OtModeTest, MaskedSelectReconstructsChoice) {
  Prg s = Prg::from_u64(6), r = Prg::from_u64(7), g = Prg::from_u64(8);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a(5), b(5);
    for (auto& x : a) x = g.uniform01() * 10 - 5;
    for (auto& x : b) x = g.uniform01() * 10 - 5;
    const FixedVector u0 = FixedVector::encode(a), u1 = FixedVector::encode(b);
    const std::uint8_t bit = static_cast<std::uint8_t>(g.uniform_below(2));
    SelectShares sh = ot_masked_select(u0, u1, bit, GetParam(), s, r);
    // Oracle: direct indexing.
    ASSERT_EQ(sh.sender_share + sh.receiver_share, bit == 0 ? u0 : u1);
  }
}

INSTANTIATE_TEST_SUITE_P(BothModes, OtModeTest,
                         ::testing::Values(Mode::kIdeal, Mode::kCrypto),
                         [](const auto& info) { return mode_name(info.param); });

TEST(OtTest, ModesAgree) {
  Prg g = Prg::from_u64(9);
  for (int i = 0; i < 100; ++i) {
    SenderInput in;
    in.v0.resize(40);
    in.v1.resize(40);
    g.fill(in.v0);
    g.fill(in.v1);
    const std::uint8_t b = static_cast<std::uint8_t>(g.uniform_below(2));
    Prg s1 = Prg::from_u64(i), r1 = Prg::from_u64(i + 1000);
    Prg s2 = Prg::from_u64(i), r2 = Prg::from_u64(i + 1000);
    ASSERT_EQ(ot_transfer(in, {in.sid, b}, Mode::kIdeal, s1, r1),
              ot_transfer(in, {in.sid, b}, Mode::kCrypto, s2, r2));
  }
}

TEST(OtTest, ErrorPaths) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  SenderInput in{{}, str_bytes("AB"), str_bytes("C")};
  EXPECT_THROW(ot_transfer(in, {{}, 0}, Mode::kIdeal, s, r), Error);
  in.v1 = str_bytes("CD");
  SessionId other{};
  other[0] = 1;
  try {
    ot_transfer(in, {other, 0}, Mode::kCrypto, s, r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSessionMismatch);
  }
  EXPECT_THROW(ot_transfer(in, {{}, 2}, Mode::kIdeal, s, r), Error);
}

TEST(OtTest, CryptoTranscriptTampering) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  SessionId sid{};
  CryptoSender sender(sid, s);
  CryptoReceiver receiver(sid, 1, r);
  Bytes a = sender.first_message();
  Bytes bad_a(32, 0xff);
  EXPECT_THROW(receiver.respond(bad_a), Error);
  Bytes b = receiver.respond(a);
  ASSERT_EQ(b.size(), kPointBytes);
  Bytes msg3 = sender.final_message(b, str_bytes("xxxx"), str_bytes("yyyy"));
  EXPECT_EQ(receiver.finish(msg3), str_bytes("yyyy"));
  Bytes flipped = msg3;
  flipped.back() ^= 1;
  try {
    receiver.finish(flipped);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAuthentication);
  }
  Bytes truncated(msg3.begin(), msg3.begin() + 10);
  try {
    receiver.finish(truncated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDecode);
  }
}

TEST(OtTest, CryptoMessagesHaveFixedLength) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  SenderInput in{{}, Bytes(100, 1), Bytes(100, 2)};
  CryptoSender sender(in.sid, s);
  CryptoReceiver r0(in.sid, 0, r), r1(in.sid, 1, r);
  Bytes a = sender.first_message();
  Bytes b0 = r0.respond(a), b1 = r1.respond(a);
  EXPECT_EQ(b0.size(), b1.size());
  EXPECT_EQ(sender.final_message(b0, in.v0, in.v1).size(),
            sender.final_message(b1, in.v0, in.v1).size());
}

TEST(KeyCacheTest, SingleAccountFlagZeroHoldsK0) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  std::vector<std::pair<std::string, std::uint8_t>> accts{{"ACC1", 0}};
  KeyCache cache = key_ot_setup(accts, Mode::kCrypto, s, r);
  EXPECT_EQ(cache.receiver.at("ACC1").kb, cache.sender.at("ACC1").k0);
  EXPECT_NE(cache.receiver.at("ACC1").kb, cache.sender.at("ACC1").k1);
}

TEST(KeyCacheTest, OneTransferPerAccountRegardlessOfUses) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  std::vector<std::pair<std::string, std::uint8_t>> accts;
  for (int i = 0; i < 25; ++i) accts.emplace_back("A" + std::to_string(i), i % 2);
  Counter counter;
  KeyCache cache = key_ot_setup(accts, Mode::kIdeal, s, r, &counter);
  const FixedVector u0(4), u1 = FixedVector::encode(std::vector<double>{1, 2, 3, 4});
  for (int epoch = 0; epoch < 20; ++epoch) {
    for (const auto& [acct, b] : accts) {
      auto sh = key_select(u0, u1, cache.sender.at(acct), cache.receiver.at(acct),
                           static_cast<std::uint64_t>(epoch), s);
      ASSERT_EQ(sh.sender_share + sh.receiver_share, b ? u1 : u0);
    }
  }
  EXPECT_EQ(counter.transfers, accts.size());
}

TEST(KeyCacheTest, DuplicateAccountRejected) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  std::vector<std::pair<std::string, std::uint8_t>> accts{{"X", 0}, {"X", 1}};
  try {
    key_ot_setup(accts, Mode::kIdeal, s, r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateAccount);
  }
}

// Cached-path and direct-path reconstructions agree on random inputs.
TEST(KeyCacheTest, CachedPathMatchesDirectSelect) {
  Prg s = Prg::from_u64(3), r = Prg::from_u64(4), g = Prg::from_u64(5);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(6), b(6);
    for (auto& x : a) x = g.uniform01() * 100 - 50;
    for (auto& x : b) x = g.uniform01() * 100 - 50;
    const FixedVector u0 = FixedVector::encode(a), u1 = FixedVector::encode(b);
    const std::uint8_t bit = static_cast<std::uint8_t>(g.uniform_below(2));
    std::vector<std::pair<std::string, std::uint8_t>> accts{{"acct", bit}};
    KeyCache cache = key_ot_setup(accts, Mode::kCrypto, s, r);
    auto cached = key_select(u0, u1, cache.sender.at("acct"),
                             cache.receiver.at("acct"), i, s);
    auto direct = ot_masked_select(u0, u1, bit, Mode::kCrypto, s, r);
    ASSERT_EQ(cached.sender_share + cached.receiver_share,
              direct.sender_share + direct.receiver_share);
  }
}

TEST(KeyCacheTest, WrongNonceFailsAuthentication) {
  Prg s = Prg::from_u64(1), r = Prg::from_u64(2);
  std::vector<std::pair<std::string, std::uint8_t>> accts{{"A", 1}};
  KeyCache cache = key_ot_setup(accts, Mode::kIdeal, s, r);
  KeyedPair p = encrypt_pair(cache.sender.at("A"), 7, Bytes(8, 1), Bytes(8, 2));
  EXPECT_EQ(decrypt_choice(cache.receiver.at("A"), p), Bytes(8, 2));
  p.nonce = 8;
  try {
    decrypt_choice(cache.receiver.at("A"), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAuthentication);
  }
}

}  // namespace
}  // namespace fedflag::ot
