// Copyright (c) maskarbiter authors

#include "maskarbiter/rle.hpp"

#include <algorithm>
#include <string>

#include "maskarbiter/errors.hpp"

namespace maskarbiter {

namespace {

std::string shape_str(const RleMask& r) {
  return std::to_string(r.height) + "x" + std::to_string(r.width);
}

}  // namespace

void validate_rle(const RleMask& r) {
  if (r.height == 0 || r.width == 0) {
    throw MalformedRle("rle size must be positive, got " + shape_str(r));
  }
  const std::uint64_t expected = static_cast<std::uint64_t>(r.height) * r.width;
  std::uint64_t sum = 0;
  for (const std::uint64_t c : r.counts) {
    if (c > expected || sum > expected - c) {
      throw MalformedRle("rle counts exceed height*width = " +
                         std::to_string(expected));
    }
    sum += c;
  }
  if (sum != expected) {
    throw MalformedRle("rle counts sum to " + std::to_string(sum) +
                       ", expected height*width = " + std::to_string(expected));
  }
}

bool is_canonical(const RleMask& r) noexcept {
  if (r.counts.empty()) {
    return false;
  }
  return std::none_of(r.counts.begin() + 1, r.counts.end(),
                      [](std::uint64_t c) { return c == 0; });
}

RleMask canonicalize(const RleMask& r) {
  validate_rle(r);
  RleMask out{r.height, r.width, {}};
  out.counts.reserve(r.counts.size());
  // Parity of the run index determines its value; a zero run makes its two
  // neighbours the same value, so they merge.
  bool value = false;
  for (std::size_t i = 0; i < r.counts.size(); ++i, value = !value) {
    const std::uint64_t c = r.counts[i];
    if (c == 0 && i != 0) {
      continue;
    }
    const bool out_value = (out.counts.size() % 2) == 1;
    if (!out.counts.empty() && out_value != value) {
      out.counts.back() += c;
    } else {
      out.counts.push_back(c);
    }
  }
  if (out.counts.empty()) {
    out.counts.push_back(0);
  }
  return out;
}

RleMask encode_rle(const Mask& m) {
  RleMask r{m.height(), m.width(), {}};
  const std::uint32_t w = m.width();
  const std::uint32_t h = m.height();
  bool current = false;
  std::uint64_t run = 0;
  for (std::uint32_t x = 0; x < w; ++x) {
    for (std::uint32_t y = 0; y < h; ++y) {
      const bool v = m.get(x, y);
      if (v != current) {
        r.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

Mask decode_rle(const RleMask& r) {
  validate_rle(r);
  Mask m(r.width, r.height);
  const std::uint64_t h = r.height;
  std::uint64_t pos = 0;  // column-major index
  bool value = false;
  for (const std::uint64_t c : r.counts) {
    if (value) {
      for (std::uint64_t p = pos; p < pos + c; ++p) {
        m.set(static_cast<std::uint32_t>(p / h), static_cast<std::uint32_t>(p % h));
      }
    }
    pos += c;
    value = !value;
  }
  return m;
}

std::uint64_t rle_area(const RleMask& r) {
  std::uint64_t total = 0;
  for (std::size_t i = 1; i < r.counts.size(); i += 2) {
    total += r.counts[i];
  }
  return total;
}

PixelPair rle_overlap(const RleMask& a, const RleMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionMismatch("rle shapes differ: " + shape_str(a) + " vs " +
                            shape_str(b));
  }
  validate_rle(a);
  validate_rle(b);

  PixelPair out;
  std::size_t ia = 0;
  std::size_t ib = 0;
  std::uint64_t left_a = a.counts[0];
  std::uint64_t left_b = b.counts[0];
  const std::size_t na = a.counts.size();
  const std::size_t nb = b.counts.size();
  while (true) {
    // Skip exhausted runs (zero-length runs included).
    while (left_a == 0 && ++ia < na) {
      left_a = a.counts[ia];
    }
    while (left_b == 0 && ++ib < nb) {
      left_b = b.counts[ib];
    }
    if (ia >= na || ib >= nb) {
      break;
    }
    const std::uint64_t step = std::min(left_a, left_b);
    const bool va = (ia & 1u) != 0;
    const bool vb = (ib & 1u) != 0;
    if (va && vb) {
      out.intersection += step;
    }
    if (va || vb) {
      out.union_size += step;
    }
    if (va) {
      out.area_a += step;
    }
    if (vb) {
      out.area_b += step;
    }
    left_a -= step;
    left_b -= step;
  }
  return out;
}

}  // namespace maskarbiter
