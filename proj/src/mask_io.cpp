// Copyright (c) maskarbiter authors

#include "maskarbiter/mask_io.hpp"

#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "maskarbiter/errors.hpp"

namespace maskarbiter {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<MaskFormat> format_from_path(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".pbm") {
    return MaskFormat::pbm;
  }
  if (ext == ".json") {
    return MaskFormat::rle_json;
  }
  return std::nullopt;
}

std::string encode_pbm(const Mask& m) {
  std::string out = "P4\n" + std::to_string(m.width()) + " " +
                    std::to_string(m.height()) + "\n";
  const std::size_t row_bytes = (m.width() + 7) / 8;
  const std::size_t header = out.size();
  out.resize(header + row_bytes * m.height(), '\0');
  for (std::uint32_t y = 0; y < m.height(); ++y) {
    char* row = out.data() + header + y * row_bytes;
    for (std::uint32_t x = 0; x < m.width(); ++x) {
      if (m.get(x, y)) {
        row[x / 8] = static_cast<char>(static_cast<unsigned char>(row[x / 8]) |
                                       (0x80u >> (x % 8)));
      }
    }
  }
  return out;
}

namespace {

// Netpbm header tokenizer: whitespace separated, '#' comments to end of line.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t read_uint(const char* what) {
    skip_space_and_comments();
    std::uint64_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() &&
           std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::uint64_t>(bytes_[pos_] - '0');
      if (value > std::numeric_limits<std::uint32_t>::max()) {
        throw MalformedFile(std::string("pbm: ") + what + " out of range");
      }
      ++pos_;
      ++digits;
    }
    if (digits == 0) {
      throw MalformedFile(std::string("pbm: expected ") + what);
    }
    return static_cast<std::uint32_t>(value);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() ||
        !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw MalformedFile("pbm: missing whitespace after header");
    }
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
          ++pos_;
        }
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
};

}  // namespace

Mask decode_pbm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '4') {
    throw MalformedFile("pbm: missing P4 magic");
  }
  HeaderReader header(bytes);
  const std::uint32_t width = header.read_uint("width");
  const std::uint32_t height = header.read_uint("height");
  if (width == 0 || height == 0) {
    throw MalformedFile("pbm: dimensions must be positive");
  }
  const std::size_t start = header.raster_start();
  const std::size_t row_bytes = (static_cast<std::size_t>(width) + 7) / 8;
  const std::size_t need = row_bytes * height;
  if (bytes.size() - start < need) {
    throw MalformedFile("pbm: raster truncated, expected " +
                        std::to_string(need) + " bytes, got " +
                        std::to_string(bytes.size() - start));
  }
  Mask m(width, height);
  for (std::uint32_t y = 0; y < height; ++y) {
    const auto* row =
        reinterpret_cast<const unsigned char*>(bytes.data() + start + y * row_bytes);
    for (std::uint32_t x = 0; x < width; ++x) {
      if (row[x / 8] & (0x80u >> (x % 8))) {
        m.set(x, y);
      }
    }
  }
  return m;
}

json rle_to_json(const RleMask& r) {
  return json{{"size", {r.height, r.width}}, {"counts", r.counts}};
}

RleMask rle_from_json(const json& j) {
  if (!j.is_object()) {
    throw MalformedRle("rle-json: expected an object");
  }
  const auto size = j.find("size");
  const auto counts = j.find("counts");
  if (size == j.end() || !size->is_array() || size->size() != 2 ||
      !(*size)[0].is_number_unsigned() || !(*size)[1].is_number_unsigned()) {
    throw MalformedRle("rle-json: \"size\" must be [height, width]");
  }
  if (counts == j.end() || !counts->is_array()) {
    throw MalformedRle("rle-json: \"counts\" must be an array of integers");
  }
  RleMask r;
  const auto h = (*size)[0].get<std::uint64_t>();
  const auto w = (*size)[1].get<std::uint64_t>();
  if (h > std::numeric_limits<std::uint32_t>::max() ||
      w > std::numeric_limits<std::uint32_t>::max()) {
    throw MalformedRle("rle-json: size out of range");
  }
  r.height = static_cast<std::uint32_t>(h);
  r.width = static_cast<std::uint32_t>(w);
  r.counts.reserve(counts->size());
  for (const auto& c : *counts) {
    if (!c.is_number_unsigned()) {
      throw MalformedRle("rle-json: counts must be non-negative integers");
    }
    r.counts.push_back(c.get<std::uint64_t>());
  }
  return r;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) {
    throw IoError("read failed: " + path.string());
  }
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open for writing: " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

Mask load_mask(const fs::path& path, MaskFormat format) {
  const std::string bytes = read_file(path);
  try {
    if (format == MaskFormat::pbm) {
      return decode_pbm(bytes);
    }
    const json j = json::parse(bytes);
    return decode_rle(rle_from_json(j));
  } catch (const json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  } catch (const MalformedRle& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  } catch (const MalformedFile& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
}

Mask load_mask(const fs::path& path) {
  const auto format = format_from_path(path);
  if (!format) {
    throw MalformedFile(path.string() +
                        ": unknown mask format (expected .pbm or .json)");
  }
  return load_mask(path, *format);
}

void save_mask(const Mask& m, const fs::path& path, MaskFormat format) {
  if (format == MaskFormat::pbm) {
    write_file(path, encode_pbm(m));
  } else {
    write_file(path, rle_to_json(encode_rle(m)).dump() + "\n");
  }
}

void save_mask(const Mask& m, const fs::path& path) {
  const auto format = format_from_path(path);
  if (!format) {
    throw IoError(path.string() +
                  ": unknown mask format (expected .pbm or .json)");
  }
  save_mask(m, path, *format);
}

}  // namespace maskarbiter
