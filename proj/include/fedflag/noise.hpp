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

#include <span>
#include <string>

#include "fedflag/prg.hpp"

namespace fedflag {

enum class NoiseFamily { kNone, kGaussian, kLaplace };

// Additive noise in real (gradient or score) units. For kGaussian the
// parameter is the standard deviation; for kLaplace it is the scale b of
// the density exp(-|x|/b) / 2b.
struct NoiseSpec {
  NoiseFamily family = NoiseFamily::kNone;
  double parameter = 0.0;

  static NoiseSpec none() { return {}; }
  static NoiseSpec gaussian(double sigma) {
    return {NoiseFamily::kGaussian, sigma};
  }
  static NoiseSpec laplace(double scale) {
    return {NoiseFamily::kLaplace, scale};
  }

  bool active() const { return family != NoiseFamily::kNone && parameter > 0; }
  double sample(Prg& rng) const;
  void add_to(std::span<double> xs, Prg& rng) const;

  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

// "none", "gaussian:<sigma>", "laplace:<scale>". Throws kConfig.
NoiseSpec parse_noise(const std::string& text);
std::string to_string(const NoiseSpec& n);
std::string family_name(NoiseFamily f);

}  // namespace fedflag
