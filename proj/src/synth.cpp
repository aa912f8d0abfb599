// Copyright (c) maskarbiter authors

#include "maskarbiter/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>

#include <json.hpp>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/evaluation.hpp"
#include "maskarbiter/mask_io.hpp"

namespace maskarbiter::synth {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

const std::vector<std::string>& class_vocabulary() {
  static const std::vector<std::string> kNames{
      "grasper", "scissors", "forceps", "retractor",
      "clipper", "needle_driver", "hook", "stapler"};
  return kNames;
}

bool is_generic_tool_word(std::string_view word) noexcept {
  return word == "tool" || word == "tools" || word == "instrument" ||
         word == "instruments";
}

namespace {

constexpr std::int32_t kRectMin = 6;
constexpr std::int32_t kRectMax = 24;
constexpr std::int32_t kRadiusMin = 3;
constexpr std::int32_t kRadiusMax = 12;
constexpr int kMaxAttempts = 1000;

void rasterize(SceneObject& o, std::uint32_t width, std::uint32_t height) {
  o.mask = Mask(width, height);
  if (o.kind == ShapeKind::rectangle) {
    for (std::int32_t y = o.y0; y < o.y0 + o.h; ++y) {
      for (std::int32_t x = o.x0; x < o.x0 + o.w; ++x) {
        o.mask.set(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y));
      }
    }
    return;
  }
  const std::int64_t rx2 = std::int64_t{o.rx} * o.rx;
  const std::int64_t ry2 = std::int64_t{o.ry} * o.ry;
  for (std::int32_t y = o.cy - o.ry; y <= o.cy + o.ry; ++y) {
    for (std::int32_t x = o.cx - o.rx; x <= o.cx + o.rx; ++x) {
      const std::int64_t dx = x - o.cx;
      const std::int64_t dy = y - o.cy;
      if (dx * dx * ry2 + dy * dy * rx2 <= rx2 * ry2) {
        o.mask.set(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y));
      }
    }
  }
}

SceneObject random_shape(Xoshiro256& rng, std::int32_t width,
                         std::int32_t height) {
  SceneObject o;
  if (rng.below(2) == 0) {
    o.kind = ShapeKind::rectangle;
    o.w = static_cast<std::int32_t>(rng.between(kRectMin, std::min(kRectMax, width)));
    o.h = static_cast<std::int32_t>(rng.between(kRectMin, std::min(kRectMax, height)));
    o.x0 = static_cast<std::int32_t>(rng.between(0, width - o.w));
    o.y0 = static_cast<std::int32_t>(rng.between(0, height - o.h));
  } else {
    o.kind = ShapeKind::ellipse;
    o.rx = static_cast<std::int32_t>(
        rng.between(kRadiusMin, std::min(kRadiusMax, (width - 1) / 2)));
    o.ry = static_cast<std::int32_t>(
        rng.between(kRadiusMin, std::min(kRadiusMax, (height - 1) / 2)));
    o.cx = static_cast<std::int32_t>(rng.between(o.rx, width - 1 - o.rx));
    o.cy = static_cast<std::int32_t>(rng.between(o.ry, height - 1 - o.ry));
  }
  return o;
}

// A shape guaranteed to contain pixel (px, py).
SceneObject shape_covering(Xoshiro256& rng, std::int32_t width,
                           std::int32_t height, std::int32_t px,
                           std::int32_t py) {
  SceneObject o;
  const std::int32_t rx_max = std::min({kRadiusMax, px, width - 1 - px});
  const std::int32_t ry_max = std::min({kRadiusMax, py, height - 1 - py});
  const bool want_ellipse = rng.below(2) == 1;
  if (want_ellipse && rx_max >= kRadiusMin && ry_max >= kRadiusMin) {
    o.kind = ShapeKind::ellipse;
    o.rx = static_cast<std::int32_t>(rng.between(kRadiusMin, rx_max));
    o.ry = static_cast<std::int32_t>(rng.between(kRadiusMin, ry_max));
    o.cx = px;
    o.cy = py;
    return o;
  }
  o.kind = ShapeKind::rectangle;
  o.w = static_cast<std::int32_t>(rng.between(kRectMin, std::min(kRectMax, width)));
  o.h = static_cast<std::int32_t>(rng.between(kRectMin, std::min(kRectMax, height)));
  // Offsets in [0, w-1] keep px inside after clamping to the image.
  o.x0 = std::clamp(px - static_cast<std::int32_t>(rng.below(o.w)), 0, width - o.w);
  o.y0 = std::clamp(py - static_cast<std::int32_t>(rng.below(o.h)), 0, height - o.h);
  return o;
}

std::size_t nth_set_pixel(const Mask& m, std::uint64_t n) {
  for (std::size_t p = 0; p < m.pixel_count(); ++p) {
    if (m.get_index(p) && n-- == 0) {
      return p;
    }
  }
  return m.pixel_count();
}

}  // namespace

Scene generate_scene(std::uint64_t seed, std::uint32_t width,
                     std::uint32_t height, bool force_overlap) {
  if (width < 16 || height < 16) {
    throw InvalidConfig("synthetic scenes need at least 16x16 pixels");
  }
  Xoshiro256 rng(seed);
  const auto w = static_cast<std::int32_t>(width);
  const auto h = static_cast<std::int32_t>(height);

  Scene scene;
  scene.width = width;
  scene.height = height;
  scene.rng_seed = seed;
  const auto count = static_cast<std::size_t>(
      rng.between(kMinObjects, kMaxObjects));

  // Distinct class names: partial Fisher-Yates over the vocabulary.
  std::vector<std::string> names = class_vocabulary();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(names.size() - i);
    std::swap(names[i], names[j]);
  }

  for (std::size_t i = 0; i < count; ++i) {
    SceneObject o;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw InvalidConfig("could not place a valid object");
      }
      if (force_overlap && i == 1) {
        const Mask& base = scene.objects[0].mask;
        const std::size_t p = nth_set_pixel(base, rng.below(area(base)));
        o = shape_covering(rng, w, h, static_cast<std::int32_t>(p % width),
                           static_cast<std::int32_t>(p / width));
      } else {
        o = random_shape(rng, w, h);
      }
      rasterize(o, width, height);
      const bool duplicate = std::any_of(
          scene.objects.begin(), scene.objects.end(),
          [&](const SceneObject& other) { return other.mask == o.mask; });
      if (area(o.mask) >= kMinObjectArea && !duplicate) {
        break;
      }
    }
    o.z = static_cast<std::int32_t>(i);
    o.class_name = names[i];
    scene.objects.push_back(std::move(o));
  }
  return scene;
}

std::vector<std::uint8_t> coverage(const Scene& scene) {
  std::vector<std::uint8_t> cov(
      static_cast<std::size_t>(scene.width) * scene.height, 0);
  for (const SceneObject& o : scene.objects) {
    for (std::size_t p = 0; p < cov.size(); ++p) {
      cov[p] += o.mask.get_index(p) ? 1 : 0;
    }
  }
  return cov;
}

Mask dilate4(const Mask& m) {
  Mask out = m;
  const std::uint32_t w = m.width();
  const std::uint32_t h = m.height();
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      if (!m.get(x, y)) {
        continue;
      }
      if (x > 0) out.set(x - 1, y);
      if (x + 1 < w) out.set(x + 1, y);
      if (y > 0) out.set(x, y - 1);
      if (y + 1 < h) out.set(x, y + 1);
    }
  }
  return out;
}

Mask boundary_band(const Mask& m) {
  Mask band(m.width(), m.height());
  const std::uint32_t w = m.width();
  const std::uint32_t h = m.height();
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      const bool v = m.get(x, y);
      const bool differs = (x > 0 && m.get(x - 1, y) != v) ||
                           (x + 1 < w && m.get(x + 1, y) != v) ||
                           (y > 0 && m.get(x, y - 1) != v) ||
                           (y + 1 < h && m.get(x, y + 1) != v);
      if (differs) {
        band.set(x, y);
      }
    }
  }
  return band;
}

std::vector<std::size_t> objects_at(const Scene& scene, PointPrompt p) {
  std::vector<std::size_t> hits;
  if (!p.inside(scene.width, scene.height)) {
    return hits;
  }
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].mask.get(static_cast<std::uint32_t>(p.x),
                                  static_cast<std::uint32_t>(p.y))) {
      hits.push_back(i);
    }
  }
  return hits;
}

std::size_t smallest_object_at(const Scene& scene, PointPrompt p) {
  const std::vector<std::size_t> hits = objects_at(scene, p);
  if (hits.empty()) {
    throw PointOutsideObjects("point (" + std::to_string(p.x) + ", " +
                              std::to_string(p.y) + ") hits no object");
  }
  std::size_t best = hits[0];
  for (const std::size_t i : hits) {
    const auto ai = area(scene.objects[i].mask);
    const auto ab = area(scene.objects[best].mask);
    if (ai < ab || (ai == ab && scene.objects[i].z < scene.objects[best].z)) {
      best = i;
    }
  }
  return best;
}

CandidateSet mock_point_expert(const Scene& scene, PointPrompt p,
                               std::size_t k) {
  if (k == 0 || k > 3) {
    throw InvalidConfig("mock point expert produces 1..3 candidates, asked for " +
                        std::to_string(k));
  }
  const std::vector<std::size_t> hits = objects_at(scene, p);
  const std::size_t a_index = smallest_object_at(scene, p);
  const Mask& a = scene.objects[a_index].mask;
  Mask b(scene.width, scene.height);
  for (const std::size_t i : hits) {
    for (std::size_t w = 0; w < b.pixel_count(); ++w) {
      if (scene.objects[i].mask.get_index(w)) {
        b.set_index(w);
      }
    }
  }
  Mask c = dilate4(a);

  const bool in_overlap = hits.size() >= 2;
  std::vector<Mask> masks{a, std::move(b), std::move(c)};
  std::vector<double> confs =
      in_overlap ? std::vector<double>{kMidConfidence, kTopConfidence, kLowConfidence}
                 : std::vector<double>{kTopConfidence, kMidConfidence, kLowConfidence};
  masks.resize(k, Mask(1, 1));
  confs.resize(k);
  return CandidateSet(std::move(masks), std::move(confs));
}

namespace {

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) {
    words.push_back(std::move(cur));
  }
  return words;
}

}  // namespace

Guide mock_text_expert(const Scene& scene, std::string_view text,
                       double noise_rate, std::uint64_t seed) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw InvalidConfig("noise rate must lie in [0, 1]");
  }
  const std::vector<std::string> words = words_of(text);
  std::vector<std::size_t> named;
  bool generic = false;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (std::find(words.begin(), words.end(), scene.objects[i].class_name) !=
        words.end()) {
      named.push_back(i);
    }
  }
  for (const std::string& w : words) {
    generic = generic || is_generic_tool_word(w);
  }

  Mask base(scene.width, scene.height);
  if (named.size() == 1) {
    base = scene.objects[named[0]].mask;
  } else if (named.empty() && generic) {
    for (const SceneObject& o : scene.objects) {
      for (std::size_t p = 0; p < base.pixel_count(); ++p) {
        if (o.mask.get_index(p)) {
          base.set_index(p);
        }
      }
    }
  } else {
    throw UnknownClassName("text '" + std::string(text) + "' " +
                           (named.empty() ? "names no object class in the scene"
                                          : "names several object classes"));
  }

  const Mask band = boundary_band(base);
  Xoshiro256 rng(seed);
  Mask guide = base;
  for (std::size_t p = 0; p < band.pixel_count(); ++p) {
    if (band.get_index(p) && rng.uniform() < noise_rate) {
      guide.set_index(p, !base.get_index(p));
    }
  }
  return Guide{std::move(guide), kTextConfidence};
}

void SuiteConfig::validate() const {
  if (n_instances < 1) {
    throw InvalidConfig("n_instances must be at least 1");
  }
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) {
    throw InvalidConfig("overlap_fraction must lie in [0, 1]");
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw InvalidConfig("noise_rate must lie in [0, 1]");
  }
  if (width < 16 || height < 16) {
    throw InvalidConfig("synthetic scenes need at least 16x16 pixels");
  }
  for (const std::string& t : templates) {
    if (!valid_text_prompt(t)) {
      throw InvalidConfig("text templates must not be blank");
    }
  }
}

namespace {

std::string padded(std::size_t i, std::size_t n) {
  std::string digits = std::to_string(i);
  const std::size_t width = std::max<std::size_t>(4, std::to_string(n - 1).size());
  if (digits.size() < width) {
    digits.insert(0, width - digits.size(), '0');
  }
  return digits;
}

// Picks the click and target for one instance, or returns false when the
// scene cannot host the requested kind of click.
bool place_click(const Scene& scene, bool want_overlap, Xoshiro256& rng,
                 SynthInstance& inst) {
  const std::vector<std::uint8_t> cov = coverage(scene);
  const std::uint32_t w = scene.width;
  if (want_overlap) {
    std::vector<std::size_t> pixels;
    for (std::size_t p = 0; p < cov.size(); ++p) {
      if (cov[p] >= 2) pixels.push_back(p);
    }
    if (pixels.empty()) {
      return false;
    }
    const std::size_t p = pixels[rng.below(pixels.size())];
    inst.point = PointPrompt{static_cast<std::int64_t>(p % w),
                             static_cast<std::int64_t>(p / w)};
    inst.target = smallest_object_at(scene, inst.point);
    inst.in_overlap = true;
    return true;
  }

  std::vector<std::size_t> hosts;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const Mask& m = scene.objects[i].mask;
    for (std::size_t p = 0; p < cov.size(); ++p) {
      if (m.get_index(p) && cov[p] == 1) {
        hosts.push_back(i);
        break;
      }
    }
  }
  if (hosts.empty()) {
    return false;
  }
  const std::size_t target = hosts[rng.below(hosts.size())];
  const Mask& m = scene.objects[target].mask;
  std::vector<std::size_t> exclusive;
  std::vector<std::size_t> interior;
  for (std::size_t p = 0; p < cov.size(); ++p) {
    if (!m.get_index(p) || cov[p] != 1) {
      continue;
    }
    exclusive.push_back(p);
    const auto x = static_cast<std::uint32_t>(p % w);
    const auto y = static_cast<std::uint32_t>(p / w);
    if (x > 0 && x + 1 < w && y > 0 && y + 1 < scene.height &&
        m.get(x - 1, y) && m.get(x + 1, y) && m.get(x, y - 1) &&
        m.get(x, y + 1)) {
      interior.push_back(p);
    }
  }
  const auto& pool = interior.empty() ? exclusive : interior;
  const std::size_t p = pool[rng.below(pool.size())];
  inst.point = PointPrompt{static_cast<std::int64_t>(p % w),
                           static_cast<std::int64_t>(p / w)};
  inst.target = target;
  inst.in_overlap = false;
  return true;
}

}  // namespace

Suite build_suite(const SuiteConfig& config) {
  config.validate();
  const std::size_t n = config.n_instances;
  const auto n_overlap = static_cast<std::size_t>(
      std::llround(config.overlap_fraction * static_cast<double>(n)));

  // Which instances click inside an overlap: first n_overlap flags set, then
  // a Fisher-Yates shuffle on the suite stream.
  std::vector<bool> overlap(n, false);
  std::fill_n(overlap.begin(), n_overlap, true);
  Xoshiro256 suite_rng(config.seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = suite_rng.below(i);
    const bool tmp = overlap[i - 1];
    overlap[i - 1] = overlap[j];
    overlap[j] = tmp;
  }

  Suite suite{config, {}};
  suite.instances.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SynthInstance inst;
    inst.id = "synth-" + padded(i, n);
    inst.image = "scene-" + padded(i, n);
    inst.text_seed = derive_seed(config.seed, 2 * i + 1);
    std::uint64_t scene_seed = derive_seed(config.seed, 2 * i);
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw InvalidConfig("could not generate instance " + inst.id);
      }
      inst.scene =
          generate_scene(scene_seed, config.width, config.height, overlap[i]);
      Xoshiro256 click_rng(derive_seed(scene_seed, 0));
      if (place_click(inst.scene, overlap[i], click_rng, inst)) {
        break;
      }
      scene_seed = derive_seed(scene_seed, static_cast<std::uint64_t>(attempt) + 1);
    }
    suite.instances.push_back(std::move(inst));
  }
  return suite;
}

fs::path write_suite(const Suite& suite, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "gt", ec);
  fs::create_directories(out_dir / "experts", ec);
  if (ec) {
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  const SuiteConfig& cfg = suite.config;

  ordered_json instances = ordered_json::array();
  ordered_json responses = ordered_json::array();
  for (const SynthInstance& inst : suite.instances) {
    const std::string gt_rel = "gt/" + inst.id + ".pbm";
    save_mask(inst.gt(), out_dir / gt_rel, MaskFormat::pbm);

    ordered_json rec;
    rec["id"] = inst.id;
    rec["image"] = inst.image;
    rec["point"] = {inst.point.x, inst.point.y};
    rec["text"] = inst.class_name();
    rec["class"] = inst.class_name();
    rec["gt"] = {{"path", gt_rel}};
    rec["target"] = inst.target;
    rec["overlap"] = inst.in_overlap;
    instances.push_back(std::move(rec));

    const CandidateSet cands = mock_point_expert(inst.scene, inst.point);
    ordered_json point_masks = ordered_json::array();
    for (std::size_t c = 0; c < cands.size(); ++c) {
      const std::string rel =
          "experts/" + inst.id + ".point." + std::to_string(c) + ".pbm";
      save_mask(cands[c], out_dir / rel, MaskFormat::pbm);
      point_masks.push_back({{"path", rel}});
    }
    ordered_json point_entry;
    point_entry["image"] = inst.image;
    point_entry["kind"] = "point";
    point_entry["point"] = {inst.point.x, inst.point.y};
    point_entry["k"] = cands.size();
    point_entry["masks"] = std::move(point_masks);
    point_entry["confidences"] = cands.confidences();
    responses.push_back(std::move(point_entry));

    std::vector<std::string> seen;
    for (std::size_t t = 0; t < cfg.templates.size(); ++t) {
      const std::string text = render_template(cfg.templates[t], inst.class_name());
      if (std::find(seen.begin(), seen.end(), text) != seen.end()) {
        continue;
      }
      seen.push_back(text);
      std::optional<Guide> guide;
      try {
        guide = mock_text_expert(inst.scene, text, cfg.noise_rate, inst.text_seed);
      } catch (const UnknownClassName&) {
        // The mock text expert has no answer for this text; record nothing.
        continue;
      }
      const std::string rel =
          "experts/" + inst.id + ".text." + std::to_string(t) + ".pbm";
      save_mask(guide->mask, out_dir / rel, MaskFormat::pbm);
      ordered_json text_entry;
      text_entry["image"] = inst.image;
      text_entry["kind"] = "text";
      text_entry["text"] = text;
      text_entry["masks"] = ordered_json::array({{{"path", rel}}});
      text_entry["confidences"] = {guide->confidence};
      responses.push_back(std::move(text_entry));
    }
  }

  ordered_json manifest;
  manifest["schema"] = 1;
  manifest["generator"] = {{"seed", cfg.seed},
                           {"n", cfg.n_instances},
                           {"overlap_fraction", cfg.overlap_fraction},
                           {"noise_rate", cfg.noise_rate},
                           {"width", cfg.width},
                           {"height", cfg.height},
                           {"templates", cfg.templates}};
  manifest["experts"] = "experts.json";
  manifest["instances"] = std::move(instances);

  ordered_json experts;
  experts["schema"] = 1;
  experts["responses"] = std::move(responses);

  write_file(out_dir / "experts.json", experts.dump(1) + "\n");
  const fs::path manifest_path = out_dir / "manifest.json";
  write_file(manifest_path, manifest.dump(1) + "\n");
  return manifest_path;
}

fs::path gen_suite(const SuiteConfig& config, const fs::path& out_dir) {
  return write_suite(build_suite(config), out_dir);
}

}  // namespace maskarbiter::synth
