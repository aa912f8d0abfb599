// Copyright (c) maskarbiter authors
//
// Synthetic scenes with exact ground truth, plus mock point/text experts
// whose failure modes are known by construction:
//
//  * The mock point expert returns (A, B, C) = (smallest object under the
//    click, union of all objects under the click, A dilated by one pixel).
//    On a click inside an overlap it ranks B first, so the point-only
//    baseline is wrong exactly on overlap instances.
//  * The mock text expert returns the named object's mask with its boundary
//    band flipped at a fixed rate, so text alone is never pixel-exact.
//
// Dual selection recovers A whenever the noisy guide is still closer to A
// than to B or C.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "maskarbiter/arbiter.hpp"
#include "maskarbiter/experts.hpp"
#include "maskarbiter/mask.hpp"
#include "maskarbiter/rng.hpp"

namespace maskarbiter::synth {

enum class ShapeKind { rectangle, ellipse };

struct SceneObject {
  ShapeKind kind = ShapeKind::rectangle;
  // rectangle: [x0, x0 + w) x [y0, y0 + h); ellipse: centre (cx, cy), radii.
  std::int32_t x0 = 0, y0 = 0, w = 0, h = 0;
  std::int32_t cx = 0, cy = 0, rx = 0, ry = 0;
  std::int32_t z = 0;  // draw order; breaks area ties (lower z first)
  std::string class_name;
  Mask mask{1, 1};
};

struct Scene {
  std::uint32_t width = 64;
  std::uint32_t height = 64;
  std::uint64_t rng_seed = 0;
  std::vector<SceneObject> objects;
};

inline constexpr std::uint32_t kMinObjectArea = 16;
inline constexpr std::size_t kMinObjects = 2;
inline constexpr std::size_t kMaxObjects = 5;

inline constexpr double kTextConfidence = 0.75;
inline constexpr double kTopConfidence = 0.9;
inline constexpr double kMidConfidence = 0.8;
inline constexpr double kLowConfidence = 0.7;
inline constexpr double kDefaultNoiseRate = 0.05;

/// Class vocabulary; every scene uses distinct names from it.
const std::vector<std::string>& class_vocabulary();

/// Generic words that make the mock text expert return every object.
bool is_generic_tool_word(std::string_view word) noexcept;

/// Random scene of 2..5 objects. With `force_overlap`, object 1 is placed
/// over a pixel of object 0 so an overlap region always exists.
Scene generate_scene(std::uint64_t seed, std::uint32_t width,
                     std::uint32_t height, bool force_overlap);

/// Number of objects covering each pixel, row-major.
std::vector<std::uint8_t> coverage(const Scene& scene);

Mask dilate4(const Mask& m);

/// Pixels of `m` with a 4-neighbour outside `m`, plus pixels outside `m`
/// 4-adjacent to it. Neighbours beyond the image border are ignored.
Mask boundary_band(const Mask& m);

/// Indices of objects containing the point, ascending.
std::vector<std::size_t> objects_at(const Scene& scene, PointPrompt p);

/// Smallest-area object containing the point; ties go to the lower z.
std::size_t smallest_object_at(const Scene& scene, PointPrompt p);

/// Throws PointOutsideObjects when no object contains the point, and
/// InvalidConfig when k is 0 or above 3.
CandidateSet mock_point_expert(const Scene& scene, PointPrompt p,
                               std::size_t k = kDefaultCandidateCount);

/// Throws UnknownClassName when the text names no object class of the
/// scene (or several) and carries no generic tool word.
Guide mock_text_expert(const Scene& scene, std::string_view text,
                       double noise_rate, std::uint64_t seed);

struct SuiteConfig {
  std::uint64_t seed = 42;
  std::size_t n_instances = 200;
  double overlap_fraction = 0.5;
  double noise_rate = kDefaultNoiseRate;
  std::uint32_t width = 64;
  std::uint32_t height = 64;
  /// Text prompts whose guide masks are recorded for the file backend.
  std::vector<std::string> templates{"{class}", "surgery tools"};

  void validate() const;
};

struct SynthInstance {
  std::string id;
  std::string image;
  Scene scene;
  PointPrompt point;
  std::size_t target = 0;
  bool in_overlap = false;
  std::uint64_t text_seed = 0;

  const Mask& gt() const { return scene.objects.at(target).mask; }
  const std::string& class_name() const {
    return scene.objects.at(target).class_name;
  }
};

struct Suite {
  SuiteConfig config;
  std::vector<SynthInstance> instances;
};

/// Exactly llround(overlap_fraction * n) instances click inside an overlap.
Suite build_suite(const SuiteConfig& config);

/// Writes manifest.json, experts.json and PBM masks under `out_dir`.
/// Returns the manifest path.
std::filesystem::path write_suite(const Suite& suite,
                                  const std::filesystem::path& out_dir);

/// build_suite + write_suite.
std::filesystem::path gen_suite(const SuiteConfig& config,
                                const std::filesystem::path& out_dir);

}  // namespace maskarbiter::synth
