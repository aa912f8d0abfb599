// Copyright (c) maskarbiter authors
//
// Reference values come from tests/oracle/oracles.py rng.

#include <gtest/gtest.h>

#include "maskarbiter/rng.hpp"

using namespace maskarbiter;

TEST(Rng, SplitMix64Reference) {
  SplitMix64 sm(0);
  EXPECT_EQ(sm.next(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(sm.next(), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(sm.next(), 0x06C45D188009454Full);
}

TEST(Rng, XoshiroReference) {
  Xoshiro256 x(42);
  EXPECT_EQ(x.next(), 0x15780B2E0C2EC716ull);
  EXPECT_EQ(x.next(), 0x6104D9866D113A7Eull);
  EXPECT_EQ(x.next(), 0xAE17533239E499A1ull);
  EXPECT_EQ(x.next(), 0xECB8AD4703B360A1ull);
  EXPECT_EQ(x.next(), 0xFDE6DC7FE2EC5E64ull);
}

TEST(Rng, BelowReference) {
  Xoshiro256 x(42);
  const std::uint64_t expect[] = {0, 3, 6, 9, 9, 7, 7, 8};
  for (const std::uint64_t e : expect) EXPECT_EQ(x.below(10), e);
}

TEST(Rng, UniformReference) {
  Xoshiro256 x(7);
  EXPECT_EQ(x.uniform(), 0x1.66b1f5ee9df2ep-1);
  EXPECT_EQ(x.uniform(), 0x1.1d70f6593d20ap-2);
  EXPECT_EQ(x.uniform(), 0x1.ade3a6932a58fp-1);
}

TEST(Rng, DeriveSeedReference) {
  EXPECT_EQ(derive_seed(42, 0), 0xC8DDBBBEAB9CBA1Bull);
  EXPECT_EQ(derive_seed(42, 1), 0xFA797F03F3C87F80ull);
  EXPECT_EQ(derive_seed(42, 2), 0x4E2C2220D2AEDF95ull);
  EXPECT_EQ(derive_seed(42, 3), 0xF296AEF7B1B52AC4ull);
}

TEST(Rng, BetweenStaysInRange) {
  Xoshiro256 x(1);
  for (int i = 0; i < 10000; ++i) {
    const auto v = x.between(-3, 5);
    ASSERT_GE(v, -3);
    ASSERT_LE(v, 5);
  }
}
