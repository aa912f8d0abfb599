// Copyright (c) maskarbiter authors
//
// Explicit dual selection: the point expert proposes k candidate masks, the
// text expert proposes one guide mask, and the candidate that overlaps the
// guide best wins. Framed as a mixture of experts, the IoU argmax is a gate
// with no learnable parameters.
//
// The joint-confidence variant scores each candidate as
//   score_i = w_text * conf_text + w_point * conf_point_i + w_iou * IoU_i
// and reduces to plain IoU under the default weights (0, 0, 1).

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskarbiter/mask.hpp"

namespace maskarbiter {

inline constexpr std::size_t kDefaultCandidateCount = 3;

class CandidateSet {
 public:
  /// Throws InvalidInput when empty, sizes differ, a confidence is outside
  /// [0, 1], or masks disagree on shape.
  CandidateSet(std::vector<Mask> masks, std::vector<double> confidences);

  std::size_t size() const noexcept { return masks_.size(); }
  const std::vector<Mask>& masks() const noexcept { return masks_; }
  const std::vector<double>& confidences() const noexcept {
    return confidences_;
  }
  const Mask& operator[](std::size_t i) const { return masks_.at(i); }

 private:
  std::vector<Mask> masks_;
  std::vector<double> confidences_;
};

struct Guide {
  Mask mask;
  double confidence = 1.0;
};

struct FusionWeights {
  double text = 0.0;
  double point = 0.0;
  double iou = 1.0;

  /// Throws InvalidInput on negative/non-finite weights or all zeros.
  void validate() const;
  bool iou_only() const noexcept { return text == 0.0 && point == 0.0; }

  /// Parses "w_text,w_point,w_iou".
  static FusionWeights parse(std::string_view text);
  std::string to_string() const;

  friend bool operator==(const FusionWeights&, const FusionWeights&) = default;
};

enum class FallbackPolicy { point_confidence, guide, first };
enum class FallbackUsed { none, point_confidence, guide, first };

std::string_view to_string(FallbackPolicy p) noexcept;
std::string_view to_string(FallbackUsed f) noexcept;
std::optional<FallbackPolicy> parse_fallback_policy(std::string_view s);
std::optional<FallbackUsed> parse_fallback_used(std::string_view s);

struct SelectionResult {
  std::size_t chosen_index = 0;
  std::vector<double> scores;
  std::vector<double> similarity;
  FallbackUsed fallback_used = FallbackUsed::none;

  friend bool operator==(const SelectionResult&,
                         const SelectionResult&) = default;
};

/// IoU of the guide against every candidate. DimensionMismatch on shape
/// disagreement.
std::vector<double> similarities(const CandidateSet& c, const Guide& g);

std::vector<double> score_candidates(const CandidateSet& c, const Guide& g,
                                     const FusionWeights& w);

/// Lowest index attaining the maximum.
std::size_t argmax_lowest(const std::vector<double>& values);

SelectionResult select(const CandidateSet& c, const Guide& g,
                       const FusionWeights& w,
                       FallbackPolicy fallback = FallbackPolicy::point_confidence);

struct SingleModalityBaselines {
  std::size_t point_index;  // argmax point confidence, lowest index on ties
  Mask point_only;
  Mask text_only;
};

SingleModalityBaselines ablate_single_modality(const CandidateSet& c,
                                               const Guide& g);

}  // namespace maskarbiter
