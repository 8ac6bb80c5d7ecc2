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

#include <utility>

#include "fedflag/party.hpp"
#include "fedflag/prg.hpp"
#include "fedflag/ring.hpp"

// Two-party additive secret sharing over Z_{2^64}: x = r0 + r1 with r0
// uniform. Each payload alone is a uniform ring vector.
namespace fedflag::sharing {

struct Share {
  PartyId holder;
  ring::FixedVector payload;

  friend bool operator==(const Share&, const Share&) = default;
};

// Uniform ring vector of length n drawn from rng.
ring::FixedVector random_vector(std::size_t n, int fraction_bits, Prg& rng);

// first.holder = a receives the uniform mask r0, second.holder = b gets x - r0.
std::pair<Share, Share> share(const ring::FixedVector& x, Prg& rng,
                              PartyId a = PartyId::hub(),
                              PartyId b = PartyId::aggregator());

// Throws kDimensionMismatch on shape mismatch and kInvalidArgument when both
// shares belong to the same holder.
ring::FixedVector reconstruct(const Share& a, const Share& b);

// Local addition of two shares held by the same party.
Share add_shares(const Share& a, const Share& b);

// Adds a public (or party-local) constant to one side's share. Exactly one of
// the two holders should do this for reconstruct to yield x + c.
Share add_constant(const Share& s, const ring::FixedVector& c);

}  // namespace fedflag::sharing
