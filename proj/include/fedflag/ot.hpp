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

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>

#include "fedflag/bytes.hpp"
#include "fedflag/party.hpp"
#include "fedflag/prg.hpp"
#include "fedflag/ring.hpp"

// 1-out-of-2 oblivious transfer.
//
// Two interchangeable instantiations:
//  * kIdeal: a trusted in-process dealer that records (v0, v1) and hands v_b
//    to the receiver. Used for deterministic simulation.
//  * kCrypto: the "simplest OT" of Chou and Orlandi over ristretto255:
//      S -> R : A = aG
//      R -> S : B = bG + cA            (c is the choice bit)
//      R      : k_c = H(sid, A, B, bA)
//      S      : k_0 = H(sid, A, B, aB), k_1 = H(sid, A, B, a(B - A))
//      S -> R : AEAD(k_0, v0) || AEAD(k_1, v1)
//    Semi-honest secure; messages are fixed length so the ciphertext length
//    reveals nothing about c.
//
// Message count is fixed at two. A 1-out-of-n variant would replace the
// (k_0, k_1) derivation with k_j = H(.., a(B - jA)) for j < n.
namespace fedflag::ot {

enum class Mode { kIdeal, kCrypto };

inline constexpr std::size_t kMessageCount = 2;
inline constexpr std::size_t kPointBytes = 32;
inline constexpr std::size_t kKeyBytes = 32;
// AEAD tag added to every encrypted message.
inline constexpr std::size_t kTagBytes = 16;

using Key = std::array<std::uint8_t, kKeyBytes>;

std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct SenderInput {
  SessionId sid{};
  Bytes v0;
  Bytes v1;
};

struct Choice {
  SessionId sid{};
  std::uint8_t b = 0;
};

// Running count of base OT executions. Protocol code threads one of these
// through every transfer so optimizations can be audited.
struct Counter {
  std::uint64_t transfers = 0;
};

class CryptoSender {
 public:
  CryptoSender(const SessionId& sid, Prg& rng);

  // A = aG.
  Bytes first_message() const;
  // (k_0, k_1) for the receiver's B. Throws kDecode on an invalid point.
  std::pair<Key, Key> derive_keys(std::span<const std::uint8_t> b_point) const;
  // AEAD(k_0, v0) || AEAD(k_1, v1), each length-prefixed.
  Bytes final_message(std::span<const std::uint8_t> b_point,
                      std::span<const std::uint8_t> v0,
                      std::span<const std::uint8_t> v1) const;

 private:
  SessionId sid_;
  std::array<std::uint8_t, 32> scalar_{};
  std::array<std::uint8_t, kPointBytes> a_point_{};
};

class CryptoReceiver {
 public:
  CryptoReceiver(const SessionId& sid, std::uint8_t choice, Prg& rng);

  // Consumes A, returns B. Throws kDecode on an invalid point.
  Bytes respond(std::span<const std::uint8_t> a_point);
  const Key& key() const { return key_; }
  // Decrypts v_c from the sender's final message. Throws kDecode on a
  // malformed transcript and kAuthentication when the ciphertext fails to open.
  Bytes finish(std::span<const std::uint8_t> final_message) const;

 private:
  SessionId sid_;
  std::uint8_t choice_;
  std::array<std::uint8_t, 32> scalar_{};
  Key key_{};
  bool responded_ = false;
};

// Runs one complete transfer in-process and returns v_b. The sender learns
// nothing. Throws kSessionMismatch when the sids differ and
// kInvalidArgument on unequal message lengths or a non-bit choice.
Bytes ot_transfer(const SenderInput& sender, const Choice& receiver, Mode mode,
                  Prg& sender_rng, Prg& receiver_rng,
                  Counter* counter = nullptr);

// Additive sharing of u_b between sender and receiver.
struct SelectShares {
  ring::FixedVector sender_share;    // r_S
  ring::FixedVector receiver_share;  // u_b - r_S
};

// Sender masks both candidates with one r_S and the receiver picks
// m_b = u_b - r_S by OT.
SelectShares ot_masked_select(const ring::FixedVector& u0,
                              const ring::FixedVector& u1, std::uint8_t b,
                              Mode mode, Prg& sender_rng, Prg& receiver_rng,
                              const SessionId& sid = {},
                              Counter* counter = nullptr);

// Key caching: one OT per account transfers one of two random keys; later
// selections encrypt both candidates and the receiver opens exactly one.
struct SenderKeyEntry {
  std::string account;
  Key k0{};
  Key k1{};
};

struct ReceiverKeyEntry {
  std::string account;
  std::uint8_t b = 0;
  Key kb{};
};

struct KeyCache {
  std::map<std::string, SenderKeyEntry> sender;
  std::map<std::string, ReceiverKeyEntry> receiver;
};

// Session id for the key transfer of one account.
SessionId key_session_id(const std::string& account);

// Throws kDuplicateAccount if an account appears twice.
KeyCache key_ot_setup(
    std::span<const std::pair<std::string, std::uint8_t>> accounts, Mode mode,
    Prg& sender_rng, Prg& receiver_rng, Counter* counter = nullptr);

struct KeyedPair {
  std::uint64_t nonce = 0;
  Bytes c0;
  Bytes c1;
};

// The nonce must be unique per (account, use); callers derive it from the
// batch session and transaction position.
KeyedPair encrypt_pair(const SenderKeyEntry& keys, std::uint64_t nonce,
                       std::span<const std::uint8_t> m0,
                       std::span<const std::uint8_t> m1);

// Opens c_b. Throws kAuthentication when the tag does not verify.
Bytes decrypt_choice(const ReceiverKeyEntry& key, const KeyedPair& pair);

SelectShares key_select(const ring::FixedVector& u0,
                        const ring::FixedVector& u1,
                        const SenderKeyEntry& sender_keys,
                        const ReceiverKeyEntry& receiver_key,
                        std::uint64_t nonce, Prg& sender_rng);

}  // namespace fedflag::ot
