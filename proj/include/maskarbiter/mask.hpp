// Copyright (c) maskarbiter authors
//
// Packed binary masks and exact overlap metrics.
//
// Pixels are stored row-major, one bit per pixel, LSB-first inside 64-bit
// words: pixel (x, y) lives at bit index y * width + x. Bits beyond
// width * height are always zero, so word-wise AND/OR + popcount give exact
// set cardinalities without masking the tail.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace maskarbiter {

class Mask {
 public:
  using Word = std::uint64_t;
  static constexpr std::size_t kWordBits = 64;

  /// All-zero mask. Throws InvalidMask when either side is zero.
  Mask(std::uint32_t width, std::uint32_t height);

  static Mask filled(std::uint32_t width, std::uint32_t height);

  std::uint32_t width() const noexcept { return width_; }
  std::uint32_t height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool same_shape(const Mask& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool get(std::uint32_t x, std::uint32_t y) const noexcept {
    const std::size_t p = static_cast<std::size_t>(y) * width_ + x;
    return (words_[p / kWordBits] >> (p % kWordBits)) & 1u;
  }
  void set(std::uint32_t x, std::uint32_t y, bool value = true) noexcept {
    set_index(static_cast<std::size_t>(y) * width_ + x, value);
  }
  // Linear row-major pixel index.
  bool get_index(std::size_t p) const noexcept {
    return (words_[p / kWordBits] >> (p % kWordBits)) & 1u;
  }
  void set_index(std::size_t p, bool value = true) noexcept {
    const Word bit = Word{1} << (p % kWordBits);
    if (value) {
      words_[p / kWordBits] |= bit;
    } else {
      words_[p / kWordBits] &= ~bit;
    }
  }
  /// Sets `count` consecutive row-major pixels starting at `first`.
  void set_span(std::size_t first, std::size_t count) noexcept;

  std::span<const Word> words() const noexcept { return words_; }

  bool empty() const noexcept;

  friend bool operator==(const Mask& a, const Mask& b) noexcept {
    return a.width_ == b.width_ && a.height_ == b.height_ &&
           a.words_ == b.words_;
  }

 private:
  std::uint32_t width_;
  std::uint32_t height_;
  std::vector<Word> words_;
};

/// Exact pixel counts for a pair of same-shape masks.
struct PixelPair {
  std::uint64_t intersection = 0;
  std::uint64_t union_size = 0;
  std::uint64_t area_a = 0;
  std::uint64_t area_b = 0;

  friend bool operator==(const PixelPair&, const PixelPair&) = default;
};

std::uint64_t area(const Mask& m) noexcept;

/// Throws DimensionMismatch when shapes differ.
PixelPair overlap(const Mask& a, const Mask& b);

// Ratios divide exact integer counts once in double precision.
// Both-empty scores 1.0, exactly-one-empty scores 0.0.
double iou(const PixelPair& counts) noexcept;
double dice(const PixelPair& counts) noexcept;

double iou(const Mask& a, const Mask& b);
double dice(const Mask& a, const Mask& b);

}  // namespace maskarbiter
