// Copyright (c) maskarbiter authors
//
// Column-major run-length encoding (the COCO interchange convention):
// counts alternate background, foreground, background, ... starting with a
// possibly-zero background run, and sum to height * width.

#pragma once

#include <cstdint>
#include <vector>

#include "maskarbiter/mask.hpp"

namespace maskarbiter {

struct RleMask {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint64_t> counts;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

/// Throws MalformedRle unless the shape is positive and counts sum to
/// height * width. Interior zero runs are tolerated.
void validate_rle(const RleMask& r);

bool is_canonical(const RleMask& r) noexcept;

/// Merges interior zero runs into their neighbours. Validates first.
RleMask canonicalize(const RleMask& r);

RleMask encode_rle(const Mask& m);
Mask decode_rle(const RleMask& r);

std::uint64_t rle_area(const RleMask& r);

/// Same counts as overlap(decode_rle(a), decode_rle(b)), computed by a
/// two-pointer merge over the runs without materialising bitmaps.
PixelPair rle_overlap(const RleMask& a, const RleMask& b);

}  // namespace maskarbiter
