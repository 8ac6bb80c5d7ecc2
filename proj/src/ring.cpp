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

#include "fedflag/ring.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <string>
#include <type_traits>

#include "fedflag/error.hpp"

namespace fedflag::ring {

static_assert(sizeof(RingElement) == 8 && std::is_trivially_copyable_v<RingElement>);

namespace {

void check_fraction_bits(int f) {
  if (f < 0 || f > 62) {
    throw Error(ErrorCode::kInvalidArgument,
                "fraction bits out of range: " + std::to_string(f));
  }
}

void check_compatible(const FixedVector& a, const FixedVector& b) {
  if (a.size() != b.size() || a.fraction_bits() != b.fraction_bits()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "fixed vector mismatch: " + std::to_string(a.size()) + "/f" +
                    std::to_string(a.fraction_bits()) + " vs " +
                    std::to_string(b.size()) + "/f" +
                    std::to_string(b.fraction_bits()));
  }
}

}  // namespace

RingElement encode(double x, int fraction_bits) {
  check_fraction_bits(fraction_bits);
  // ldexp is exact for finite inputs, so the bound check sees the true value.
  const double scaled = std::ldexp(x, fraction_bits);
  constexpr double kLimit = 9223372036854775808.0;  // 2^63
  if (!std::isfinite(scaled) || !(std::fabs(scaled) < kLimit)) {
    throw Error(ErrorCode::kOverflow,
                "fixed-point overflow encoding " + std::to_string(x));
  }
  const double rounded = std::round(scaled);
  if (!(std::fabs(rounded) < kLimit)) {
    throw Error(ErrorCode::kOverflow,
                "fixed-point overflow encoding " + std::to_string(x));
  }
  return {static_cast<std::uint64_t>(static_cast<std::int64_t>(rounded))};
}

double decode(RingElement e, int fraction_bits) {
  check_fraction_bits(fraction_bits);
  return std::ldexp(static_cast<double>(static_cast<std::int64_t>(e.value)),
                    -fraction_bits);
}

FixedVector FixedVector::encode(std::span<const double> xs, int fraction_bits) {
  check_fraction_bits(fraction_bits);
  FixedVector out(xs.size(), fraction_bits);
  // Scaling by a power of two is exact, same as ldexp.
  const double scale = std::ldexp(1.0, fraction_bits);
  constexpr double kLimit = 9223372036854775808.0;
  std::size_t bad = xs.size();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double y = xs[i] * scale;
    if (!(std::fabs(y) < kLimit)) {
      bad = i;
      break;
    }
    // Half away from zero, like std::round, without the libm call.
    std::int64_t t = static_cast<std::int64_t>(y);
    const double frac = y - static_cast<double>(t);
    if (frac >= 0.5) {
      ++t;
    } else if (frac <= -0.5) {
      --t;
    }
    out.elems_[i].value = static_cast<std::uint64_t>(t);
  }
  if (bad == xs.size()) return out;
  for (std::size_t i = bad; i < xs.size(); ++i) {
    out.elems_[i] = ring::encode(xs[i], fraction_bits);
  }
  return out;
}

std::vector<double> FixedVector::decode() const {
  std::vector<double> out(elems_.size());
  for (std::size_t i = 0; i < elems_.size(); ++i) {
    out[i] = ring::decode(elems_[i], fraction_bits_);
  }
  return out;
}

FixedVector& FixedVector::operator+=(const FixedVector& o) {
  check_compatible(*this, o);
  for (std::size_t i = 0; i < elems_.size(); ++i) elems_[i] += o.elems_[i];
  return *this;
}

FixedVector& FixedVector::operator-=(const FixedVector& o) {
  check_compatible(*this, o);
  for (std::size_t i = 0; i < elems_.size(); ++i) elems_[i] -= o.elems_[i];
  return *this;
}

FixedVector add(const FixedVector& a, const FixedVector& b) {
  FixedVector out = a;
  out += b;
  return out;
}

FixedVector sub(const FixedVector& a, const FixedVector& b) {
  FixedVector out = a;
  out -= b;
  return out;
}

std::vector<std::uint8_t> to_bytes(const FixedVector& v) {
  std::vector<std::uint8_t> out(v.size() * 8);
  if constexpr (std::endian::native == std::endian::little) {
    if (!out.empty()) std::memcpy(out.data(), v.elems().data(), out.size());
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t x = v[i].value;
    for (int j = 0; j < 8; ++j) {
      out[i * 8 + j] = static_cast<std::uint8_t>(x >> (8 * j));
    }
  }
  return out;
}

FixedVector from_bytes(std::span<const std::uint8_t> bytes, int fraction_bits) {
  if (bytes.size() % 8 != 0) {
    throw Error(ErrorCode::kDecode, "ring payload not a multiple of 8 bytes");
  }
  check_fraction_bits(fraction_bits);
  FixedVector out(bytes.size() / 8, fraction_bits);
  if constexpr (std::endian::native == std::endian::little) {
    if (!bytes.empty()) std::memcpy(out.elems().data(), bytes.data(), bytes.size());
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t x = 0;
    for (int j = 0; j < 8; ++j) {
      x |= static_cast<std::uint64_t>(bytes[i * 8 + j]) << (8 * j);
    }
    out[i] = {x};
  }
  return out;
}

}  // namespace fedflag::ring
