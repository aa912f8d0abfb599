// Copyright (c) maskarbiter authors

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "maskarbiter/arbiter.hpp"
#include "maskarbiter/errors.hpp"
#include "support.hpp"

using namespace maskarbiter;
using testing_support::naive_counts;
using testing_support::random_mask;

namespace {

Mask prefix(std::uint32_t w, std::uint32_t h, std::size_t n) {
  Mask m(w, h);
  m.set_span(0, n);
  return m;
}

double naive_iou(const Mask& a, const Mask& b) {
  const auto c = naive_counts(a, b);
  return c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

double naive_dice(const Mask& a, const Mask& b) {
  const auto c = naive_counts(a, b);
  return c.a + c.b == 0 ? 1.0
                        : static_cast<double>(2 * c.inter) /
                              static_cast<double>(c.a + c.b);
}

// Searches prefix masks of a 10x10 image for one whose IoU with `guide` is
// exactly `target`.
Mask find_with_iou(const Mask& guide, double target) {
  for (std::size_t n = 0; n <= guide.pixel_count(); ++n) {
    Mask m = prefix(guide.width(), guide.height(), n);
    if (naive_iou(m, guide) == target) return m;
  }
  throw std::runtime_error("no prefix mask attains the target IoU");
}

struct Fixture {
  Mask guide = prefix(10, 10, 10);
  CandidateSet cands{{find_with_iou(guide, 0.2), find_with_iou(guide, 0.7),
                      find_with_iou(guide, 0.5)},
                     {0.9, 0.8, 0.7}};
};

CandidateSet random_set(Xoshiro256& rng, std::uint32_t w, std::uint32_t h,
                        std::size_t k) {
  std::vector<Mask> masks;
  std::vector<double> conf;
  for (std::size_t i = 0; i < k; ++i) {
    masks.push_back(random_mask(rng, w, h, rng.uniform()));
    conf.push_back(rng.uniform());
  }
  return CandidateSet(std::move(masks), std::move(conf));
}

std::size_t brute_argmax_iou(const CandidateSet& c, const Mask& g) {
  std::size_t best = 0;
  double best_v = -1.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double v = naive_iou(c[i], g);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

}  // namespace

TEST(Arbiter, IouScoresAndChoice) {
  const Fixture f;
  const SelectionResult r = select(f.cands, Guide{f.guide}, FusionWeights{});
  EXPECT_EQ(r.scores, (std::vector<double>{0.2, 0.7, 0.5}));
  EXPECT_EQ(r.similarity, r.scores);
  EXPECT_EQ(r.chosen_index, 1u);
  EXPECT_EQ(r.fallback_used, FallbackUsed::none);
}

TEST(Arbiter, DegenerateWeights) {
  const Fixture f;
  const auto text_only = score_candidates(f.cands, Guide{f.guide, 0.6}, {1, 0, 0});
  EXPECT_EQ(text_only, (std::vector<double>{0.6, 0.6, 0.6}));
  const auto point_only = score_candidates(f.cands, Guide{f.guide}, {0, 1, 0});
  EXPECT_EQ(point_only, (std::vector<double>{0.9, 0.8, 0.7}));
  const auto joint = score_candidates(f.cands, Guide{f.guide, 0.5}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(joint[0], 0.5 + 0.9 + 0.2);
}

TEST(Arbiter, SingleCandidate) {
  const CandidateSet one({prefix(4, 4, 3)}, {0.1});
  EXPECT_EQ(select(one, Guide{prefix(4, 4, 5)}, {}).chosen_index, 0u);
}

TEST(Arbiter, TieGoesToLowerIndex) {
  const Mask m = prefix(4, 4, 4);
  const CandidateSet c({prefix(4, 4, 2), m, m}, {0.1, 0.2, 0.3});
  EXPECT_EQ(select(c, Guide{m}, {}).chosen_index, 1u);
  EXPECT_EQ(argmax_lowest({0.5, 0.9, 0.9}), 1u);
}

TEST(Arbiter, EmptyGuideFallsBack) {
  const CandidateSet c({prefix(4, 4, 2), prefix(4, 4, 3), prefix(4, 4, 4)},
                       {0.3, 0.9, 0.5});
  const Guide empty{Mask(4, 4)};

  const auto pc = select(c, empty, {}, FallbackPolicy::point_confidence);
  EXPECT_EQ(pc.chosen_index, 1u);
  EXPECT_EQ(pc.fallback_used, FallbackUsed::point_confidence);

  const auto first = select(c, empty, {}, FallbackPolicy::first);
  EXPECT_EQ(first.chosen_index, 0u);
  EXPECT_EQ(first.fallback_used, FallbackUsed::first);

  const auto guide = select(c, empty, {}, FallbackPolicy::guide);
  EXPECT_EQ(guide.fallback_used, FallbackUsed::guide);
  EXPECT_EQ(guide.similarity, (std::vector<double>{0, 0, 0}));

  // Joint weights do not hide an empty guide either.
  EXPECT_EQ(select(c, empty, {1, 1, 1}).fallback_used,
            FallbackUsed::point_confidence);
}

TEST(Arbiter, DisjointGuideFallsBackOnlyUnderIouOnlyWeights) {
  Mask g(4, 4);
  g.set(3, 3);
  const CandidateSet c({prefix(4, 4, 2), prefix(4, 4, 3)}, {0.2, 0.4});
  EXPECT_EQ(select(c, Guide{g}, {0, 0, 2}).fallback_used,
            FallbackUsed::point_confidence);
  const auto joint = select(c, Guide{g}, {0, 1, 1});
  EXPECT_EQ(joint.fallback_used, FallbackUsed::none);
  EXPECT_EQ(joint.chosen_index, 1u);
}

TEST(Arbiter, InputValidation) {
  EXPECT_THROW(CandidateSet({}, {}), InvalidInput);
  EXPECT_THROW(CandidateSet({Mask(2, 2)}, {0.5, 0.5}), InvalidInput);
  EXPECT_THROW(CandidateSet({Mask(2, 2)}, {1.5}), InvalidInput);
  EXPECT_THROW(CandidateSet({Mask(2, 2), Mask(2, 3)}, {0.5, 0.5}), InvalidInput);
  const CandidateSet c({Mask(2, 2)}, {0.5});
  EXPECT_THROW(select(c, Guide{Mask(3, 2)}, {}), DimensionMismatch);
  EXPECT_THROW(select(c, Guide{Mask(2, 2)}, {0, 0, 0}), InvalidInput);
  EXPECT_THROW(select(c, Guide{Mask(2, 2)}, {-1, 0, 1}), InvalidInput);
  EXPECT_THROW(select(c, Guide{Mask(2, 2), 2.0}, {}), InvalidInput);
}

TEST(Arbiter, WeightsParse) {
  EXPECT_EQ(FusionWeights::parse("0,0,1"), (FusionWeights{0, 0, 1}));
  EXPECT_EQ(FusionWeights::parse("0.5, 1 ,2"), (FusionWeights{0.5, 1, 2}));
  EXPECT_THROW(FusionWeights::parse("1,2"), InvalidInput);
  EXPECT_THROW(FusionWeights::parse("a,b,c"), InvalidInput);
  EXPECT_THROW(FusionWeights::parse("0,0,0"), InvalidInput);
  EXPECT_EQ((FusionWeights{0, 0.5, 1}).to_string(), "0,0.5,1");
}

TEST(Arbiter, FallbackNames) {
  for (const auto p : {FallbackPolicy::point_confidence, FallbackPolicy::guide,
                       FallbackPolicy::first}) {
    EXPECT_EQ(parse_fallback_policy(to_string(p)), p);
  }
  EXPECT_FALSE(parse_fallback_policy("none"));
  EXPECT_EQ(parse_fallback_used("none"), FallbackUsed::none);
}

TEST(Arbiter, SingleModalityBaselines) {
  const Fixture f;
  const CandidateSet c(f.cands.masks(), {0.3, 0.9, 0.5});
  const auto b = ablate_single_modality(c, Guide{f.guide});
  EXPECT_EQ(b.point_index, 1u);
  EXPECT_EQ(b.point_only, c[1]);
  EXPECT_EQ(b.text_only, f.guide);
  const CandidateSet tied(f.cands.masks(), {0.5, 0.5, 0.5});
  EXPECT_EQ(ablate_single_modality(tied, Guide{f.guide}).point_index, 0u);
}

TEST(ArbiterProperties, RandomizedSets) {
  Xoshiro256 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto w = static_cast<std::uint32_t>(rng.between(1, 12));
    const auto h = static_cast<std::uint32_t>(rng.between(1, 12));
    const auto k = static_cast<std::size_t>(rng.between(1, 6));
    const CandidateSet c = random_set(rng, w, h, k);
    const Guide g{random_mask(rng, w, h, rng.uniform() * 0.9 + 0.05)};

    const SelectionResult base = select(c, g, {});
    if (base.fallback_used != FallbackUsed::none) continue;

    // Default weights are pure IoU.
    ASSERT_EQ(base.chosen_index, brute_argmax_iou(c, g.mask));
    // Positive scaling of w_iou.
    const double scale = 0.01 + rng.uniform() * 100.0;
    ASSERT_EQ(select(c, g, {0, 0, scale}).chosen_index, base.chosen_index);
    // Dice ranks candidates the same way.
    std::vector<double> dices;
    for (const Mask& m : c.masks()) dices.push_back(naive_dice(m, g.mask));
    ASSERT_EQ(argmax_lowest(dices), base.chosen_index);
    // Determinism.
    ASSERT_EQ(select(c, g, {}), base);

    // Permutation equivariance when the max is unique.
    const double top = base.scores[base.chosen_index];
    if (std::count(base.scores.begin(), base.scores.end(), top) == 1) {
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<Mask> masks;
      std::vector<double> conf;
      for (const std::size_t p : perm) {
        masks.push_back(c[p]);
        conf.push_back(c.confidences()[p]);
      }
      const auto permuted = select(CandidateSet(masks, conf), g, {});
      ASSERT_EQ(perm[permuted.chosen_index], base.chosen_index);
    }

    // Appending a strictly worse candidate keeps the choice.
    Mask worse(w, h);
    if (naive_iou(worse, g.mask) < top) {
      std::vector<Mask> masks = c.masks();
      std::vector<double> conf = c.confidences();
      masks.push_back(worse);
      conf.push_back(1.0);
      const auto grown = select(CandidateSet(masks, conf), g, {});
      ASSERT_EQ(grown.chosen_index, base.chosen_index);
    }
  }
}
