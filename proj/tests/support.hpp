// Copyright (c) maskarbiter authors
//
// Shared helpers for the unit tests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "maskarbiter/mask.hpp"
#include "maskarbiter/rng.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("maskarbiter-" + tag + "-" + std::to_string(rd()) + "-" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Random mask with the given fill density.
inline maskarbiter::Mask random_mask(maskarbiter::Xoshiro256& rng,
                                     std::uint32_t w, std::uint32_t h,
                                     double density) {
  maskarbiter::Mask m(w, h);
  for (std::size_t p = 0; p < m.pixel_count(); ++p) {
    if (rng.uniform() < density) m.set_index(p);
  }
  return m;
}

/// Pixel-by-pixel counts, no word tricks.
struct NaiveCounts {
  std::uint64_t inter = 0, uni = 0, a = 0, b = 0;
};

inline NaiveCounts naive_counts(const maskarbiter::Mask& a,
                                const maskarbiter::Mask& b) {
  NaiveCounts c;
  for (std::uint32_t y = 0; y < a.height(); ++y) {
    for (std::uint32_t x = 0; x < a.width(); ++x) {
      const bool pa = a.get(x, y), pb = b.get(x, y);
      c.inter += pa && pb;
      c.uni += pa || pb;
      c.a += pa;
      c.b += pb;
    }
  }
  return c;
}

/// Rows [first, last] of a w x h mask set.
inline maskarbiter::Mask rows(std::uint32_t w, std::uint32_t h, std::uint32_t first,
                              std::uint32_t last) {
  maskarbiter::Mask m(w, h);
  for (std::uint32_t y = first; y <= last; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) m.set(x, y);
  }
  return m;
}

}  // namespace testing_support
