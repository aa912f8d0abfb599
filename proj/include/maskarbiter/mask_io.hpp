// Copyright (c) maskarbiter authors
//
// Mask file formats:
//   pbm       binary P4, header "P4\n<width> <height>\n", rows MSB-first and
//             padded to a byte boundary; 1 = foreground.
//   rle-json  {"size": [height, width], "counts": [...]}

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "maskarbiter/mask.hpp"
#include "maskarbiter/rle.hpp"

namespace maskarbiter {

enum class MaskFormat { pbm, rle_json };

/// Picks the format from the extension: ".pbm" or ".json".
std::optional<MaskFormat> format_from_path(const std::filesystem::path& path);

std::string encode_pbm(const Mask& m);
Mask decode_pbm(std::string_view bytes);

nlohmann::json rle_to_json(const RleMask& r);
/// Structural check only; sum/shape invariants are left to validate_rle.
RleMask rle_from_json(const nlohmann::json& j);

Mask load_mask(const std::filesystem::path& path, MaskFormat format);
Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& m, const std::filesystem::path& path,
               MaskFormat format);
void save_mask(const Mask& m, const std::filesystem::path& path);

// Raw file helpers shared by the manifest and report code.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace maskarbiter
