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

#include <sodium.h>

#include <cstring>

#include "fedflag/error.hpp"
#include "fedflag/sharing.hpp"

namespace fedflag::ot {

namespace {

using Point = std::array<std::uint8_t, kPointBytes>;
using Scalar = std::array<std::uint8_t, crypto_core_ristretto255_SCALARBYTES>;

constexpr char kKeyDomain[] = "fedflag/ot/simplest/v1";

Scalar random_scalar(Prg& rng) {
  Scalar s{};
  do {
    std::uint8_t wide[crypto_core_ristretto255_NONREDUCEDSCALARBYTES];
    rng.fill(wide);
    crypto_core_ristretto255_scalar_reduce(s.data(), wide);
  } while (sodium_is_zero(s.data(), s.size()));
  return s;
}

Point to_point(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kPointBytes ||
      crypto_core_ristretto255_is_valid_point(bytes.data()) != 1) {
    throw Error(ErrorCode::kDecode, "invalid group element in OT transcript");
  }
  Point p;
  std::memcpy(p.data(), bytes.data(), kPointBytes);
  return p;
}

Point mul(const Scalar& s, const Point& p) {
  Point out;
  if (crypto_scalarmult_ristretto255(out.data(), s.data(), p.data()) != 0) {
    throw Error(ErrorCode::kDecode, "degenerate OT group element");
  }
  return out;
}

Key hash_key(const SessionId& sid, const Point& a, const Point& b,
             const Point& shared) {
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, kKeyBytes);
  crypto_generichash_update(
      &st, reinterpret_cast<const unsigned char*>(kKeyDomain),
      sizeof(kKeyDomain) - 1);
  crypto_generichash_update(&st, sid.data(), sid.size());
  crypto_generichash_update(&st, a.data(), a.size());
  crypto_generichash_update(&st, b.data(), b.size());
  crypto_generichash_update(&st, shared.data(), shared.size());
  Key k;
  crypto_generichash_final(&st, k.data(), k.size());
  return k;
}

using Nonce = std::array<std::uint8_t, crypto_aead_chacha20poly1305_ietf_NPUBBYTES>;

Nonce make_nonce(std::uint64_t counter, std::uint8_t index) {
  Nonce n{};
  n[0] = index;
  for (int i = 0; i < 8; ++i) n[4 + i] = static_cast<std::uint8_t>(counter >> (8 * i));
  return n;
}

Bytes seal(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> ad,
           std::span<const std::uint8_t> plain) {
  Bytes out(plain.size() + kTagBytes);
  unsigned long long len = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(out.data(), &len, plain.data(),
                                            plain.size(), ad.data(), ad.size(),
                                            nullptr, nonce.data(), key.data());
  out.resize(len);
  return out;
}

Bytes open(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> ad,
           std::span<const std::uint8_t> cipher) {
  if (cipher.size() < kTagBytes) {
    throw Error(ErrorCode::kDecode, "ciphertext shorter than tag");
  }
  Bytes out(cipher.size() - kTagBytes);
  unsigned long long len = 0;
  if (crypto_aead_chacha20poly1305_ietf_decrypt(
          out.data(), &len, nullptr, cipher.data(), cipher.size(), ad.data(),
          ad.size(), nonce.data(), key.data()) != 0) {
    throw Error(ErrorCode::kAuthentication, "OT ciphertext failed to open");
  }
  out.resize(len);
  return out;
}

void check_bit(std::uint8_t b) {
  if (b > 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "OT choice must be 0 or 1, got " + std::to_string(b));
  }
}

void count(Counter* c) {
  if (c != nullptr) ++c->transfers;
}

}  // namespace

std::string mode_name(Mode m) { return m == Mode::kIdeal ? "ideal" : "crypto"; }

Mode parse_mode(const std::string& s) {
  if (s == "ideal") return Mode::kIdeal;
  if (s == "crypto") return Mode::kCrypto;
  throw Error(ErrorCode::kConfig, "OT mode must be ideal|crypto, got '" + s + "'");
}

CryptoSender::CryptoSender(const SessionId& sid, Prg& rng) : sid_(sid) {
  Scalar a = random_scalar(rng);
  std::memcpy(scalar_.data(), a.data(), a.size());
  crypto_scalarmult_ristretto255_base(a_point_.data(), scalar_.data());
}

Bytes CryptoSender::first_message() const {
  return Bytes(a_point_.begin(), a_point_.end());
}

std::pair<Key, Key> CryptoSender::derive_keys(
    std::span<const std::uint8_t> b_point) const {
  const Point b = to_point(b_point);
  Scalar a;
  std::memcpy(a.data(), scalar_.data(), a.size());
  const Point p0 = mul(a, b);
  Point b_minus_a;
  crypto_core_ristretto255_sub(b_minus_a.data(), b.data(), a_point_.data());
  const Point p1 = mul(a, b_minus_a);
  return {hash_key(sid_, a_point_, b, p0), hash_key(sid_, a_point_, b, p1)};
}

Bytes CryptoSender::final_message(std::span<const std::uint8_t> b_point,
                                  std::span<const std::uint8_t> v0,
                                  std::span<const std::uint8_t> v1) const {
  if (v0.size() != v1.size()) {
    throw Error(ErrorCode::kInvalidArgument, "OT messages differ in length");
  }
  auto [k0, k1] = derive_keys(b_point);
  ByteWriter w;
  w.blob(seal(k0, make_nonce(0, 0), sid_, v0));
  w.blob(seal(k1, make_nonce(0, 1), sid_, v1));
  return w.take();
}

CryptoReceiver::CryptoReceiver(const SessionId& sid, std::uint8_t choice,
                               Prg& rng)
    : sid_(sid), choice_(choice) {
  check_bit(choice);
  Scalar b = random_scalar(rng);
  std::memcpy(scalar_.data(), b.data(), b.size());
}

Bytes CryptoReceiver::respond(std::span<const std::uint8_t> a_bytes) {
  const Point a = to_point(a_bytes);
  Point bg;
  crypto_scalarmult_ristretto255_base(bg.data(), scalar_.data());
  Point b = bg;
  if (choice_ == 1) crypto_core_ristretto255_add(b.data(), bg.data(), a.data());
  Scalar s;
  std::memcpy(s.data(), scalar_.data(), s.size());
  key_ = hash_key(sid_, a, b, mul(s, a));
  responded_ = true;
  return Bytes(b.begin(), b.end());
}

Bytes CryptoReceiver::finish(std::span<const std::uint8_t> final_message) const {
  if (!responded_) {
    throw Error(ErrorCode::kProtocol, "OT receiver finished before responding");
  }
  ByteReader r(final_message);
  auto c0 = r.blob();
  auto c1 = r.blob();
  r.expect_end();
  if (c0.size() != c1.size()) {
    throw Error(ErrorCode::kDecode, "OT ciphertexts differ in length");
  }
  return open(key_, make_nonce(0, choice_), sid_, choice_ == 0 ? c0 : c1);
}

Bytes ot_transfer(const SenderInput& sender, const Choice& receiver, Mode mode,
                  Prg& sender_rng, Prg& receiver_rng, Counter* counter) {
  if (sender.sid != receiver.sid) {
    throw Error(ErrorCode::kSessionMismatch, "OT session ids differ");
  }
  if (sender.v0.size() != sender.v1.size()) {
    throw Error(ErrorCode::kInvalidArgument, "OT messages differ in length");
  }
  check_bit(receiver.b);
  count(counter);
  if (mode == Mode::kIdeal) {
    return receiver.b == 0 ? sender.v0 : sender.v1;
  }
  CryptoSender s(sender.sid, sender_rng);
  CryptoReceiver r(receiver.sid, receiver.b, receiver_rng);
  const Bytes msg1 = s.first_message();
  const Bytes msg2 = r.respond(msg1);
  const Bytes msg3 = s.final_message(msg2, sender.v0, sender.v1);
  return r.finish(msg3);
}

SelectShares ot_masked_select(const ring::FixedVector& u0,
                              const ring::FixedVector& u1, std::uint8_t b,
                              Mode mode, Prg& sender_rng, Prg& receiver_rng,
                              const SessionId& sid, Counter* counter) {
  if (u0.size() != u1.size() || u0.fraction_bits() != u1.fraction_bits()) {
    throw Error(ErrorCode::kDimensionMismatch, "u0/u1 shape mismatch");
  }
  ring::FixedVector mask =
      sharing::random_vector(u0.size(), u0.fraction_bits(), sender_rng);
  SenderInput in{sid, ring::to_bytes(u0 - mask), ring::to_bytes(u1 - mask)};
  Bytes picked = ot_transfer(in, Choice{sid, b}, mode, sender_rng, receiver_rng,
                             counter);
  return {std::move(mask), ring::from_bytes(picked, u0.fraction_bits())};
}

SessionId key_session_id(const std::string& account) {
  static constexpr char kDomain[] = "fedflag/ot/key-session/v1";
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, 16);
  crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(kDomain),
                            sizeof(kDomain) - 1);
  crypto_generichash_update(
      &st, reinterpret_cast<const unsigned char*>(account.data()),
      account.size());
  SessionId sid;
  crypto_generichash_final(&st, sid.data(), sid.size());
  return sid;
}

KeyCache key_ot_setup(
    std::span<const std::pair<std::string, std::uint8_t>> accounts, Mode mode,
    Prg& sender_rng, Prg& receiver_rng, Counter* counter) {
  KeyCache cache;
  for (const auto& [account, b] : accounts) {
    if (cache.sender.contains(account)) {
      throw Error(ErrorCode::kDuplicateAccount,
                  "duplicate account in key setup: " + account);
    }
    SenderKeyEntry s{account, {}, {}};
    sender_rng.fill(s.k0);
    sender_rng.fill(s.k1);
    const SessionId sid = key_session_id(account);
    SenderInput in{sid, Bytes(s.k0.begin(), s.k0.end()),
                   Bytes(s.k1.begin(), s.k1.end())};
    Bytes kb = ot_transfer(in, Choice{sid, b}, mode, sender_rng, receiver_rng,
                           counter);
    ReceiverKeyEntry r{account, b, {}};
    std::memcpy(r.kb.data(), kb.data(), kKeyBytes);
    cache.sender.emplace(account, std::move(s));
    cache.receiver.emplace(account, std::move(r));
  }
  return cache;
}

KeyedPair encrypt_pair(const SenderKeyEntry& keys, std::uint64_t nonce,
                       std::span<const std::uint8_t> m0,
                       std::span<const std::uint8_t> m1) {
  if (m0.size() != m1.size()) {
    throw Error(ErrorCode::kInvalidArgument, "keyed pair lengths differ");
  }
  const std::span<const std::uint8_t> ad(
      reinterpret_cast<const std::uint8_t*>(keys.account.data()),
      keys.account.size());
  return KeyedPair{nonce, seal(keys.k0, make_nonce(nonce, 0), ad, m0),
                   seal(keys.k1, make_nonce(nonce, 1), ad, m1)};
}

Bytes decrypt_choice(const ReceiverKeyEntry& key, const KeyedPair& pair) {
  const std::span<const std::uint8_t> ad(
      reinterpret_cast<const std::uint8_t*>(key.account.data()),
      key.account.size());
  return open(key.kb, make_nonce(pair.nonce, key.b), ad,
              key.b == 0 ? pair.c0 : pair.c1);
}

SelectShares key_select(const ring::FixedVector& u0,
                        const ring::FixedVector& u1,
                        const SenderKeyEntry& sender_keys,
                        const ReceiverKeyEntry& receiver_key,
                        std::uint64_t nonce, Prg& sender_rng) {
  if (u0.size() != u1.size() || u0.fraction_bits() != u1.fraction_bits()) {
    throw Error(ErrorCode::kDimensionMismatch, "u0/u1 shape mismatch");
  }
  ring::FixedVector mask =
      sharing::random_vector(u0.size(), u0.fraction_bits(), sender_rng);
  KeyedPair pair = encrypt_pair(sender_keys, nonce, ring::to_bytes(u0 - mask),
                                ring::to_bytes(u1 - mask));
  Bytes picked = decrypt_choice(receiver_key, pair);
  return {std::move(mask), ring::from_bytes(picked, u0.fraction_bits())};
}

}  // namespace fedflag::ot
