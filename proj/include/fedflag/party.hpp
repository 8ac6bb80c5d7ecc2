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
#include <compare>
#include <cstdint>
#include <string>

namespace fedflag {

enum class Role : std::uint8_t { kHub = 0, kAggregator = 1, kBank = 2 };

// bank_index is meaningful only for Role::kBank and is zero otherwise.
struct PartyId {
  Role role = Role::kHub;
  std::uint32_t bank_index = 0;

  static constexpr PartyId hub() { return {Role::kHub, 0}; }
  static constexpr PartyId aggregator() { return {Role::kAggregator, 0}; }
  static constexpr PartyId bank(std::uint32_t i) { return {Role::kBank, i}; }

  friend constexpr auto operator<=>(const PartyId&, const PartyId&) = default;
};

// 16-byte protocol session identifier carried in every frame.
using SessionId = std::array<std::uint8_t, 16>;

std::string to_string(const PartyId& p);
// Accepts "hub", "aggregator", "bank:<i>".
PartyId parse_party_id(const std::string& s);

}  // namespace fedflag
