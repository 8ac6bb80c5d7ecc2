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

#include <charconv>
#include <cmath>
#include <cstdio>

#include "fedflag/error.hpp"
#include "fedflag/noise.hpp"
#include "fedflag/party.hpp"

namespace fedflag {

std::string to_string(const PartyId& p) {
  switch (p.role) {
    case Role::kHub: return "hub";
    case Role::kAggregator: return "aggregator";
    case Role::kBank: return "bank:" + std::to_string(p.bank_index);
  }
  return "?";
}

PartyId parse_party_id(const std::string& s) {
  if (s == "hub") return PartyId::hub();
  if (s == "aggregator") return PartyId::aggregator();
  if (s.rfind("bank:", 0) == 0) {
    std::uint32_t idx = 0;
    const char* first = s.data() + 5;
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, idx);
    if (ec == std::errc() && ptr == last && first != last) {
      return PartyId::bank(idx);
    }
  }
  throw Error(ErrorCode::kConfig, "bad party id '" + s + "'");
}

double NoiseSpec::sample(Prg& rng) const {
  switch (family) {
    case NoiseFamily::kNone: return 0.0;
    case NoiseFamily::kGaussian: return parameter * rng.gaussian();
    case NoiseFamily::kLaplace: return rng.laplace(parameter);
  }
  return 0.0;
}

void NoiseSpec::add_to(std::span<double> xs, Prg& rng) const {
  if (!active()) return;
  for (double& x : xs) x += sample(rng);
}

std::string family_name(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::kNone: return "none";
    case NoiseFamily::kGaussian: return "gaussian";
    case NoiseFamily::kLaplace: return "laplace";
  }
  return "?";
}

std::string to_string(const NoiseSpec& n) {
  if (n.family == NoiseFamily::kNone) return "none";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s:%g", family_name(n.family).c_str(),
                n.parameter);
  return buf;
}

NoiseSpec parse_noise(const std::string& text) {
  if (text == "none" || text.empty()) return NoiseSpec::none();
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kConfig, "noise must be none|gaussian:S|laplace:S");
  }
  const std::string fam = text.substr(0, colon);
  double p = 0;
  try {
    std::size_t used = 0;
    p = std::stod(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("tail");
  } catch (const std::exception&) {
    throw Error(ErrorCode::kConfig, "bad noise parameter in '" + text + "'");
  }
  if (!(p >= 0) || !std::isfinite(p)) {
    throw Error(ErrorCode::kConfig, "noise parameter must be >= 0");
  }
  if (fam == "gaussian") return NoiseSpec::gaussian(p);
  if (fam == "laplace") return NoiseSpec::laplace(p);
  throw Error(ErrorCode::kConfig, "unknown noise family '" + fam + "'");
}

}  // namespace fedflag
