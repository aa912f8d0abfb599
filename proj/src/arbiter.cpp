// Copyright (c) maskarbiter authors

#include "maskarbiter/arbiter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "maskarbiter/errors.hpp"

namespace maskarbiter {

CandidateSet::CandidateSet(std::vector<Mask> masks,
                           std::vector<double> confidences)
    : masks_(std::move(masks)), confidences_(std::move(confidences)) {
  if (masks_.empty()) {
    throw InvalidInput("candidate set must contain at least one mask");
  }
  if (masks_.size() != confidences_.size()) {
    throw InvalidInput("candidate set has " + std::to_string(masks_.size()) +
                       " masks but " + std::to_string(confidences_.size()) +
                       " confidences");
  }
  for (std::size_t i = 0; i < masks_.size(); ++i) {
    if (!masks_[i].same_shape(masks_[0])) {
      throw InvalidInput("candidate " + std::to_string(i) +
                         " shape differs from candidate 0");
    }
    const double conf = confidences_[i];
    if (!(conf >= 0.0 && conf <= 1.0)) {
      throw InvalidInput("candidate " + std::to_string(i) +
                         " confidence outside [0, 1]");
    }
  }
}

void FusionWeights::validate() const {
  for (const double v : {text, point, iou}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidInput("fusion weights must be finite and non-negative: " +
                         to_string());
    }
  }
  if (text == 0.0 && point == 0.0 && iou == 0.0) {
    throw InvalidInput("at least one fusion weight must be positive");
  }
}

FusionWeights FusionWeights::parse(std::string_view s) {
  double parts[3];
  std::size_t n = 0;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    const std::string_view token =
        s.substr(start, comma == std::string_view::npos ? s.npos : comma - start);
    if (n == 3) {
      throw InvalidInput("weights must have exactly three values: " +
                         std::string(s));
    }
    std::string buf(token);
    // Tolerate "0, 0, 1".
    buf.erase(0, buf.find_first_not_of(" \t"));
    buf.erase(buf.find_last_not_of(" \t") + 1);
    char* end = nullptr;
    const double v = std::strtod(buf.c_str(), &end);
    if (buf.empty() || end != buf.c_str() + buf.size()) {
      throw InvalidInput("weights: cannot parse '" + buf + "'");
    }
    parts[n++] = v;
    if (comma == std::string_view::npos) {
      break;
    }
    start = comma + 1;
  }
  if (n != 3) {
    throw InvalidInput("weights must have exactly three values: " +
                       std::string(s));
  }
  FusionWeights w{parts[0], parts[1], parts[2]};
  w.validate();
  return w;
}

std::string FusionWeights::to_string() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%g,%g,%g", text, point, iou);
  return buf;
}

std::string_view to_string(FallbackPolicy p) noexcept {
  switch (p) {
    case FallbackPolicy::point_confidence:
      return "point_confidence";
    case FallbackPolicy::guide:
      return "guide";
    case FallbackPolicy::first:
      return "first";
  }
  return "?";
}

std::string_view to_string(FallbackUsed f) noexcept {
  switch (f) {
    case FallbackUsed::none:
      return "none";
    case FallbackUsed::point_confidence:
      return "point_confidence";
    case FallbackUsed::guide:
      return "guide";
    case FallbackUsed::first:
      return "first";
  }
  return "?";
}

std::optional<FallbackPolicy> parse_fallback_policy(std::string_view s) {
  if (s == "point_confidence") return FallbackPolicy::point_confidence;
  if (s == "guide") return FallbackPolicy::guide;
  if (s == "first") return FallbackPolicy::first;
  return std::nullopt;
}

std::optional<FallbackUsed> parse_fallback_used(std::string_view s) {
  if (s == "none") return FallbackUsed::none;
  if (s == "point_confidence") return FallbackUsed::point_confidence;
  if (s == "guide") return FallbackUsed::guide;
  if (s == "first") return FallbackUsed::first;
  return std::nullopt;
}

std::vector<double> similarities(const CandidateSet& c, const Guide& g) {
  if (!(g.confidence >= 0.0 && g.confidence <= 1.0)) {
    throw InvalidInput("guide confidence outside [0, 1]");
  }
  std::vector<double> out;
  out.reserve(c.size());
  for (const Mask& m : c.masks()) {
    out.push_back(iou(g.mask, m));
  }
  return out;
}

namespace {

std::vector<double> fuse(const CandidateSet& c, const Guide& g,
                         const FusionWeights& w,
                         const std::vector<double>& sim) {
  std::vector<double> scores(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    scores[i] =
        w.text * g.confidence + w.point * c.confidences()[i] + w.iou * sim[i];
  }
  return scores;
}

}  // namespace

std::vector<double> score_candidates(const CandidateSet& c, const Guide& g,
                                     const FusionWeights& w) {
  w.validate();
  return fuse(c, g, w, similarities(c, g));
}

std::size_t argmax_lowest(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) {
      best = i;
    }
  }
  return best;
}

SelectionResult select(const CandidateSet& c, const Guide& g,
                       const FusionWeights& w, FallbackPolicy fallback) {
  w.validate();
  SelectionResult r;
  r.similarity = similarities(c, g);
  r.scores = fuse(c, g, w, r.similarity);

  const bool guide_empty = g.mask.empty();
  const bool no_overlap =
      w.iou_only() && std::all_of(r.similarity.begin(), r.similarity.end(),
                                  [](double s) { return s == 0.0; });
  if (!guide_empty && !no_overlap) {
    r.chosen_index = argmax_lowest(r.scores);
    return r;
  }

  switch (fallback) {
    case FallbackPolicy::point_confidence:
      r.fallback_used = FallbackUsed::point_confidence;
      r.chosen_index = argmax_lowest(c.confidences());
      break;
    case FallbackPolicy::guide:
      r.fallback_used = FallbackUsed::guide;
      r.chosen_index = argmax_lowest(c.confidences());
      std::fill(r.similarity.begin(), r.similarity.end(), 0.0);
      break;
    case FallbackPolicy::first:
      r.fallback_used = FallbackUsed::first;
      r.chosen_index = 0;
      break;
  }
  return r;
}

SingleModalityBaselines ablate_single_modality(const CandidateSet& c,
                                               const Guide& g) {
  const std::size_t j = argmax_lowest(c.confidences());
  return SingleModalityBaselines{j, c[j], g.mask};
}

}  // namespace maskarbiter
