// Copyright (c) maskarbiter authors

#include "maskarbiter/mask.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "maskarbiter/errors.hpp"

namespace maskarbiter {

namespace {

std::size_t word_count(std::uint32_t width, std::uint32_t height) {
  const std::size_t bits = static_cast<std::size_t>(width) * height;
  return (bits + Mask::kWordBits - 1) / Mask::kWordBits;
}

std::string shape_str(const Mask& m) {
  return std::to_string(m.width()) + "x" + std::to_string(m.height());
}

}  // namespace

Mask::Mask(std::uint32_t width, std::uint32_t height)
    : width_(width), height_(height) {
  if (width == 0 || height == 0) {
    throw InvalidMask("mask dimensions must be positive, got " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
  words_.assign(word_count(width, height), 0);
}

Mask Mask::filled(std::uint32_t width, std::uint32_t height) {
  Mask m(width, height);
  m.set_span(0, m.pixel_count());
  return m;
}

void Mask::set_span(std::size_t first, std::size_t count) noexcept {
  std::size_t p = first;
  const std::size_t end = first + count;
  // Head bits up to the next word boundary.
  while (p < end && p % kWordBits != 0) {
    set_index(p++);
  }
  while (p + kWordBits <= end) {
    words_[p / kWordBits] = ~Word{0};
    p += kWordBits;
  }
  while (p < end) {
    set_index(p++);
  }
}

bool Mask::empty() const noexcept {
  return std::all_of(words_.begin(), words_.end(),
                     [](Word w) { return w == 0; });
}

std::uint64_t area(const Mask& m) noexcept {
  std::uint64_t total = 0;
  for (const Mask::Word w : m.words()) {
    total += static_cast<std::uint64_t>(std::popcount(w));
  }
  return total;
}

PixelPair overlap(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch("mask shapes differ: " + shape_str(a) + " vs " +
                            shape_str(b));
  }
  const auto wa = a.words();
  const auto wb = b.words();
  std::uint64_t inter = 0;
  std::uint64_t uni = 0;
  std::uint64_t count_a = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    inter += static_cast<std::uint64_t>(std::popcount(wa[i] & wb[i]));
    uni += static_cast<std::uint64_t>(std::popcount(wa[i] | wb[i]));
    count_a += static_cast<std::uint64_t>(std::popcount(wa[i]));
  }
  // |B| = |A ∪ B| - |A| + |A ∩ B|
  return PixelPair{inter, uni, count_a, uni - count_a + inter};
}

double iou(const PixelPair& c) noexcept {
  if (c.union_size == 0) {
    return 1.0;
  }
  return static_cast<double>(c.intersection) /
         static_cast<double>(c.union_size);
}

double dice(const PixelPair& c) noexcept {
  const std::uint64_t denom = c.area_a + c.area_b;
  if (denom == 0) {
    return 1.0;
  }
  return static_cast<double>(2 * c.intersection) / static_cast<double>(denom);
}

double iou(const Mask& a, const Mask& b) { return iou(overlap(a, b)); }

double dice(const Mask& a, const Mask& b) { return dice(overlap(a, b)); }

}  // namespace maskarbiter
