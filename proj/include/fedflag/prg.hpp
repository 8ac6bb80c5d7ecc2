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
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace fedflag {

// Seedable CSPRNG: the ChaCha20 keystream under a 32-byte seed (zero nonce,
// 64-byte block counter). Child generators are derived from the seed, never
// from stream position, so derive() is order-independent:
//   child_seed = BLAKE2b-256(key = seed, msg = label || LE64(index)).
//
// Samplers are defined here rather than via <random> distributions so that
// streams are identical across standard library implementations.
class Prg {
 public:
  using Seed = std::array<std::uint8_t, 32>;
  using result_type = std::uint64_t;

  explicit Prg(const Seed& seed);
  // Expands a 64-bit config seed into a 32-byte seed.
  static Prg from_u64(std::uint64_t seed);

  Prg derive(std::string_view label, std::uint64_t index = 0) const;
  const Seed& seed() const { return seed_; }

  void fill(std::span<std::uint8_t> out);
  std::uint64_t next_u64();
  result_type operator()() { return next_u64(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01();
  // Uniform in [0, n) by rejection; n > 0.
  std::uint64_t uniform_below(std::uint64_t n);
  bool bernoulli(double p) { return uniform01() < p; }
  // Standard normal via Box-Muller; the second variate is cached.
  double gaussian();
  // Laplace(0, scale) via inverse CDF.
  double laplace(double scale);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  void refill();

  Seed seed_;
  std::array<std::uint8_t, 1024> buffer_{};
  std::size_t pos_ = 1024;
  std::uint64_t block_counter_ = 0;
  bool has_spare_gaussian_ = false;
  double spare_gaussian_ = 0.0;
};

}  // namespace fedflag
