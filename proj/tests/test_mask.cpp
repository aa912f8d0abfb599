// Copyright (c) maskarbiter authors

#include <gtest/gtest.h>

#include <cmath>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/mask.hpp"
#include "support.hpp"

using namespace maskarbiter;
using testing_support::naive_counts;
using testing_support::random_mask;
using testing_support::rows;

TEST(Mask, RejectsZeroDimensions) {
  EXPECT_THROW(Mask(0, 4), InvalidMask);
  EXPECT_THROW(Mask(4, 0), InvalidMask);
}

TEST(Mask, AreaExamples) {
  EXPECT_EQ(area(Mask(8, 8)), 0u);
  EXPECT_EQ(area(Mask::filled(8, 8)), 64u);
  EXPECT_EQ(area(rows(4, 4, 0, 1)), 8u);
}

TEST(Mask, FilledKeepsPaddingZero) {
  // 65 * 3 = 195 pixels: the last word is only partly used.
  const Mask m = Mask::filled(65, 3);
  EXPECT_EQ(area(m), 195u);
  const auto words = m.words();
  ASSERT_EQ(words.size(), 4u);
  EXPECT_EQ(words.back(), (std::uint64_t{1} << (195 - 192)) - 1);
}

TEST(Mask, SetSpanCrossesWords) {
  Mask m(100, 2);
  m.set_span(60, 80);
  EXPECT_EQ(area(m), 80u);
  EXPECT_FALSE(m.get_index(59));
  EXPECT_TRUE(m.get_index(60));
  EXPECT_TRUE(m.get_index(139));
  EXPECT_FALSE(m.get_index(140));
}

TEST(Mask, OverlapExamples) {
  const Mask a = rows(4, 4, 0, 1);
  EXPECT_EQ(overlap(a, a), (PixelPair{8, 8, 8, 8}));

  Mask disjoint(4, 4);
  for (std::uint32_t x = 0; x < 4; ++x) disjoint.set(x, 3);
  const PixelPair d = overlap(a, disjoint);
  EXPECT_EQ(d.intersection, 0u);
  EXPECT_EQ(d.union_size, 12u);

  const PixelPair p = overlap(rows(4, 4, 0, 1), rows(4, 4, 1, 2));
  EXPECT_EQ(p.intersection, 4u);
  EXPECT_EQ(p.union_size, 12u);
  EXPECT_EQ(p.area_a, 8u);
  EXPECT_EQ(p.area_b, 8u);
}

TEST(Mask, IouDiceExamples) {
  const Mask a = rows(4, 4, 0, 1);
  const Mask b = rows(4, 4, 1, 2);
  EXPECT_DOUBLE_EQ(iou(a, b), 4.0 / 12.0);
  EXPECT_EQ(dice(a, b), 0.5);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(dice(a, a), 1.0);

  Mask other(4, 4);
  other.set(0, 3);
  EXPECT_EQ(dice(a, other), 0.0);
  EXPECT_EQ(iou(a, other), 0.0);
}

TEST(Mask, EmptyConventions) {
  const Mask e(5, 5);
  EXPECT_EQ(iou(e, e), 1.0);
  EXPECT_EQ(dice(e, e), 1.0);
  const Mask f = Mask::filled(5, 5);
  EXPECT_EQ(iou(e, f), 0.0);
  EXPECT_EQ(dice(f, e), 0.0);
}

TEST(Mask, ShapeMismatchThrows) {
  EXPECT_THROW(overlap(Mask(4, 4), Mask(4, 5)), DimensionMismatch);
  EXPECT_THROW(iou(Mask(3, 4), Mask(4, 3)), DimensionMismatch);
}

TEST(Mask, RandomPairsMatchNaiveCountsAndIdentities) {
  Xoshiro256 rng(1234);
  for (int i = 0; i < 1000; ++i) {
    const auto w = static_cast<std::uint32_t>(rng.between(1, 97));
    const auto h = static_cast<std::uint32_t>(rng.between(1, 41));
    // Mix in empty and full masks.
    const double da = i % 10 == 0 ? 0.0 : i % 10 == 1 ? 1.0 : rng.uniform();
    const double db = i % 7 == 0 ? 1.0 : rng.uniform();
    const Mask a = random_mask(rng, w, h, da);
    const Mask b = i % 13 == 0 ? a : random_mask(rng, w, h, db);

    const PixelPair p = overlap(a, b);
    const auto n = naive_counts(a, b);
    ASSERT_EQ(p.intersection, n.inter);
    ASSERT_EQ(p.union_size, n.uni);
    ASSERT_EQ(p.area_a, n.a);
    ASSERT_EQ(p.area_b, n.b);

    const double j = iou(a, b);
    const double d = dice(a, b);
    ASSERT_NEAR(d, 2 * j / (1 + j), 1e-12);
    ASSERT_EQ(j, iou(b, a));
    ASSERT_EQ(d, dice(b, a));
    ASSERT_EQ(j == 1.0, a == b);
  }
}

TEST(Mask, OnePixel) {
  Mask on(1, 1);
  on.set(0, 0);
  const Mask off(1, 1);
  EXPECT_EQ(iou(on, on), 1.0);
  EXPECT_EQ(iou(on, off), 0.0);
  EXPECT_EQ(iou(off, off), 1.0);
}
