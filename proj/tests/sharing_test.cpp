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

#include <array>
#include <boost/math/distributions/chi_squared.hpp>
#include <vector>

#include "fedflag/error.hpp"
#include "gtest/gtest.h"

namespace fedflag::sharing {
namespace {

using ring::FixedVector;

FixedVector random_plain(Prg& rng, std::size_t n) {
  std::vector<double> xs(n);
  for (double& x : xs) x = (rng.uniform01() - 0.5) * 2000.0;
  return FixedVector::encode(xs);
}

TEST(ShareTest, ZeroSharingIsMaskAndNegation) {
  Prg rng = Prg::from_u64(1);
  const FixedVector zeros(5);
  auto [a, b] = share(zeros, rng);
  EXPECT_EQ(b.payload, FixedVector(5) - a.payload);
  EXPECT_EQ(reconstruct(a, b), zeros);
}

TEST(ShareTest, DeterministicUnderSeed) {
  const FixedVector v = FixedVector::encode(std::vector<double>{1, 2, 3});
  Prg r1 = Prg::from_u64(42), r2 = Prg::from_u64(42);
  EXPECT_EQ(share(v, r1), share(v, r2));
}

TEST(ShareTest, ReconstructRoundTripProperty) {
  Prg rng = Prg::from_u64(2);
  for (int i = 0; i < 1000; ++i) {
    const FixedVector v = random_plain(rng, 1 + rng.uniform_below(16));
    auto [a, b] = share(v, rng);
    ASSERT_EQ(reconstruct(a, b), v);
  }
}

TEST(ShareTest, ReconstructExamples) {
  const FixedVector v = FixedVector::encode(std::vector<double>{4.0, -1.0});
  EXPECT_EQ(reconstruct(Share{PartyId::hub(), v},
                        Share{PartyId::aggregator(), FixedVector(2)}),
            v);
  Prg rng = Prg::from_u64(3);
  const FixedVector seven = FixedVector::encode(std::vector<double>{7.0});
  auto [a, b] = share(seven, rng);
  EXPECT_EQ(reconstruct(a, b), seven);
}

TEST(ShareTest, RerandomizedSharingsAgree) {
  Prg rng = Prg::from_u64(4);
  for (int i = 0; i < 200; ++i) {
    const FixedVector v = random_plain(rng, 8);
    auto s1 = share(v, rng);
    auto s2 = share(v, rng);
    ASSERT_NE(s1.first.payload, s2.first.payload);
    ASSERT_EQ(reconstruct(s1.first, s1.second),
              reconstruct(s2.first, s2.second));
  }
}

TEST(ShareTest, LinearityProperty) {
  Prg rng = Prg::from_u64(5);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.uniform_below(8);
    const FixedVector x = random_plain(rng, n), y = random_plain(rng, n),
                      c = random_plain(rng, n);
    auto [xa, xb] = share(x, rng);
    auto [ya, yb] = share(y, rng);
    Share sa = add_constant(add_shares(xa, ya), c);
    Share sb = add_shares(xb, yb);
    ASSERT_EQ(reconstruct(sa, sb), x + y + c);
  }
}

TEST(ShareTest, AddingZeroSharingChangesNothing) {
  Prg rng = Prg::from_u64(6);
  const FixedVector x = random_plain(rng, 4);
  auto [xa, xb] = share(x, rng);
  auto [za, zb] = share(FixedVector(4), rng);
  EXPECT_EQ(reconstruct(add_shares(xa, za), add_shares(xb, zb)), x);
}

TEST(ShareTest, NoiseOnOneSide) {
  Prg rng = Prg::from_u64(7);
  const FixedVector x = random_plain(rng, 4);
  const FixedVector noise =
      FixedVector::encode(std::vector<double>{0.5, -0.25, 3.0, 0.0});
  auto [xa, xb] = share(x, rng);
  EXPECT_EQ(reconstruct(xa, add_constant(xb, noise)), x + noise);
}

TEST(ShareTest, ErrorPaths) {
  const Share a{PartyId::hub(), FixedVector(3)};
  const Share b{PartyId::aggregator(), FixedVector(4)};
  EXPECT_THROW(reconstruct(a, b), Error);
  EXPECT_THROW(reconstruct(a, a), Error);
  EXPECT_THROW(add_shares(a, Share{PartyId::hub(), FixedVector(4)}), Error);
  EXPECT_THROW(add_shares(a, Share{PartyId::aggregator(), FixedVector(3)}),
               Error);
}

// Chi-square goodness of fit of the low byte of the mask share.
TEST(ShareTest, MaskLowByteIsUniform) {
  Prg rng = Prg::from_u64(11);
  std::array<int, 256> bins{};
  const int n = 10000;
  const FixedVector x = FixedVector::encode(std::vector<double>{123.456});
  for (int i = 0; i < n; ++i) {
    auto [a, b] = share(x, rng);
    ++bins[a.payload[0].value & 0xff];
  }
  const double expected = n / 256.0;
  double stat = 0;
  for (int c : bins) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(255);
  EXPECT_LT(stat, boost::math::quantile(dist, 0.99));
}

}  // namespace
}  // namespace fedflag::sharing
