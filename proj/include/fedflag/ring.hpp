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

#include <cstdint>
#include <span>
#include <vector>

namespace fedflag::ring {

inline constexpr int kDefaultFractionBits = 24;

// Residue in Z_{2^64}. All arithmetic wraps silently.
struct RingElement {
  std::uint64_t value = 0;

  friend constexpr RingElement operator+(RingElement a, RingElement b) {
    return {a.value + b.value};
  }
  friend constexpr RingElement operator-(RingElement a, RingElement b) {
    return {a.value - b.value};
  }
  friend constexpr RingElement operator*(RingElement a, RingElement b) {
    return {a.value * b.value};
  }
  constexpr RingElement operator-() const { return {0 - value}; }
  RingElement& operator+=(RingElement o) {
    value += o.value;
    return *this;
  }
  RingElement& operator-=(RingElement o) {
    value -= o.value;
    return *this;
  }
  friend constexpr bool operator==(RingElement, RingElement) = default;
};

// round(x * 2^f) as a two's-complement residue. Throws kOverflow when
// |x * 2^f| >= 2^63 or x is not finite.
RingElement encode(double x, int fraction_bits = kDefaultFractionBits);

// Signed interpretation of e, scaled by 2^-f.
double decode(RingElement e, int fraction_bits = kDefaultFractionBits);

class FixedVector {
 public:
  FixedVector() = default;
  explicit FixedVector(std::size_t n, int fraction_bits = kDefaultFractionBits)
      : elems_(n), fraction_bits_(fraction_bits) {}
  FixedVector(std::vector<RingElement> elems, int fraction_bits)
      : elems_(std::move(elems)), fraction_bits_(fraction_bits) {}

  static FixedVector encode(std::span<const double> xs,
                            int fraction_bits = kDefaultFractionBits);
  std::vector<double> decode() const;

  std::size_t size() const { return elems_.size(); }
  int fraction_bits() const { return fraction_bits_; }
  std::span<const RingElement> elems() const { return elems_; }
  std::span<RingElement> elems() { return elems_; }
  RingElement operator[](std::size_t i) const { return elems_[i]; }
  RingElement& operator[](std::size_t i) { return elems_[i]; }

  FixedVector& operator+=(const FixedVector& o);
  FixedVector& operator-=(const FixedVector& o);

  friend bool operator==(const FixedVector&, const FixedVector&) = default;

 private:
  std::vector<RingElement> elems_;
  int fraction_bits_ = kDefaultFractionBits;
};

// Both throw kDimensionMismatch on unequal length or fraction bits.
FixedVector add(const FixedVector& a, const FixedVector& b);
FixedVector sub(const FixedVector& a, const FixedVector& b);

inline FixedVector operator+(const FixedVector& a, const FixedVector& b) {
  return add(a, b);
}
inline FixedVector operator-(const FixedVector& a, const FixedVector& b) {
  return sub(a, b);
}

// Little-endian 8 bytes per element, the wire and checkpoint layout.
std::vector<std::uint8_t> to_bytes(const FixedVector& v);
FixedVector from_bytes(std::span<const std::uint8_t> bytes, int fraction_bits);

}  // namespace fedflag::ring
