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

#include "fedflag/sharing.hpp"

#include <bit>

#include "fedflag/error.hpp"

namespace fedflag::sharing {

ring::FixedVector random_vector(std::size_t n, int fraction_bits, Prg& rng) {
  ring::FixedVector out(n, fraction_bits);
  if constexpr (std::endian::native == std::endian::little) {
    // Same stream as next_u64 per element.
    auto e = out.elems();
    rng.fill(std::span(reinterpret_cast<std::uint8_t*>(e.data()), e.size() * 8));
  } else {
    for (auto& e : out.elems()) e.value = rng.next_u64();
  }
  return out;
}

std::pair<Share, Share> share(const ring::FixedVector& x, Prg& rng, PartyId a,
                              PartyId b) {
  if (a == b) {
    throw Error(ErrorCode::kInvalidArgument,
                "a sharing needs two distinct holders");
  }
  ring::FixedVector r0 = random_vector(x.size(), x.fraction_bits(), rng);
  ring::FixedVector r1 = ring::sub(x, r0);
  return {Share{a, std::move(r0)}, Share{b, std::move(r1)}};
}

ring::FixedVector reconstruct(const Share& a, const Share& b) {
  if (a.holder == b.holder) {
    throw Error(ErrorCode::kInvalidArgument,
                "reconstruct needs shares from two holders, got " +
                    to_string(a.holder) + " twice");
  }
  return ring::add(a.payload, b.payload);
}

Share add_shares(const Share& a, const Share& b) {
  if (a.holder != b.holder) {
    throw Error(ErrorCode::kInvalidArgument,
                "local share addition across holders " + to_string(a.holder) +
                    " and " + to_string(b.holder));
  }
  return Share{a.holder, ring::add(a.payload, b.payload)};
}

Share add_constant(const Share& s, const ring::FixedVector& c) {
  return Share{s.holder, ring::add(s.payload, c)};
}

}  // namespace fedflag::sharing
