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

#include "fedflag/prg.hpp"

#include <sodium.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "fedflag/error.hpp"

namespace fedflag {

namespace {

struct SodiumInit {
  SodiumInit() {
    if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
  }
};

void ensure_sodium() { static SodiumInit init; }

}  // namespace

Prg::Prg(const Seed& seed) : seed_(seed) { ensure_sodium(); }

Prg Prg::from_u64(std::uint64_t seed) {
  ensure_sodium();
  static constexpr char kDomain[] = "fedflag/seed/v1";
  std::uint8_t msg[sizeof(kDomain) - 1 + 8];
  std::memcpy(msg, kDomain, sizeof(kDomain) - 1);
  for (int i = 0; i < 8; ++i) {
    msg[sizeof(kDomain) - 1 + i] = static_cast<std::uint8_t>(seed >> (8 * i));
  }
  Seed out;
  crypto_generichash(out.data(), out.size(), msg, sizeof(msg), nullptr, 0);
  return Prg(out);
}

Prg Prg::derive(std::string_view label, std::uint64_t index) const {
  std::vector<std::uint8_t> msg(label.begin(), label.end());
  for (int i = 0; i < 8; ++i) {
    msg.push_back(static_cast<std::uint8_t>(index >> (8 * i)));
  }
  Seed out;
  crypto_generichash(out.data(), out.size(), msg.data(), msg.size(),
                     seed_.data(), seed_.size());
  return Prg(out);
}

void Prg::refill() {
  static const std::uint8_t kNonce[crypto_stream_chacha20_NONCEBYTES] = {};
  buffer_.fill(0);
  crypto_stream_chacha20_xor_ic(buffer_.data(), buffer_.data(), buffer_.size(),
                                kNonce, block_counter_, seed_.data());
  block_counter_ += buffer_.size() / 64;
  pos_ = 0;
}

void Prg::fill(std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (pos_ == buffer_.size()) refill();
    std::size_t n = std::min(out.size() - done, buffer_.size() - pos_);
    std::memcpy(out.data() + done, buffer_.data() + pos_, n);
    pos_ += n;
    done += n;
  }
}

std::uint64_t Prg::next_u64() {
  std::uint8_t b[8];
  fill(b);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

double Prg::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Prg::uniform_below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "uniform_below(0)");
  // Reject the top partial bucket so every residue is equally likely.
  const std::uint64_t limit = max() - (max() % n + 1) % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x > limit);
  return x % n;
}

double Prg::gaussian() {
  if (has_spare_gaussian_) {
    has_spare_gaussian_ = false;
    return spare_gaussian_;
  }
  double u1;
  do {
    u1 = uniform01();
  } while (u1 <= 0.0);
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_gaussian_ = r * std::sin(theta);
  has_spare_gaussian_ = true;
  return r * std::cos(theta);
}

double Prg::laplace(double scale) {
  double u;
  do {
    u = uniform01();
  } while (u <= 0.0);
  u -= 0.5;  // (-0.5, 0.5)
  const double sign = u < 0 ? -1.0 : 1.0;
  return -scale * sign * std::log(1.0 - 2.0 * std::fabs(u));
}

}  // namespace fedflag
