// Copyright (c) maskarbiter authors
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Frozen values come from
// tests/oracle/oracles.py run against the same synthetic suite.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskarbiter/arbiter.hpp"
#include "maskarbiter/evaluation.hpp"
#include "maskarbiter/mask.hpp"
#include "maskarbiter/mask_io.hpp"
#include "maskarbiter/report.hpp"
#include "maskarbiter/rle.hpp"
#include "maskarbiter/rng.hpp"
#include "maskarbiter/synth.hpp"

namespace fs = std::filesystem;
using namespace maskarbiter;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Mask random_mask(Xoshiro256& rng, std::uint32_t w, std::uint32_t h, double density) {
  Mask m(w, h);
  for (std::size_t p = 0; p < m.pixel_count(); ++p) {
    if (rng.uniform() < density) m.set_index(p);
  }
  return m;
}

// Mixed corpus of same-shape pairs: random sizes and densities plus empty,
// full, 1x1 and 4096x4096 cases.
std::vector<std::pair<Mask, Mask>> pair_corpus(std::uint64_t seed, std::size_t n) {
  Xoshiro256 rng(seed);
  std::vector<std::pair<Mask, Mask>> out;
  out.emplace_back(Mask(1, 1), Mask(1, 1));
  out.emplace_back(Mask::filled(1, 1), Mask(1, 1));
  out.emplace_back(Mask::filled(1, 1), Mask::filled(1, 1));
  out.emplace_back(Mask(37, 5), Mask::filled(37, 5));
  out.emplace_back(Mask::filled(64, 64), Mask::filled(64, 64));
  {
    const Mask big = random_mask(rng, 4096, 4096, 0.5);
    out.emplace_back(big, random_mask(rng, 4096, 4096, 0.3));
    out.emplace_back(big, big);
    out.emplace_back(Mask(4096, 4096), Mask(4096, 4096));
    out.emplace_back(Mask::filled(4096, 4096), big);
  }
  while (out.size() < n) {
    const auto w = static_cast<std::uint32_t>(rng.between(1, 130));
    const auto h = static_cast<std::uint32_t>(rng.between(1, 130));
    const std::size_t kind = out.size() % 10;
    const double da = kind == 0 ? 0.0 : kind == 1 ? 1.0 : rng.uniform();
    Mask a = random_mask(rng, w, h, da);
    Mask b = kind == 2 ? a : random_mask(rng, w, h, rng.uniform());
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

Outcome metric_identities() {
  const auto t0 = Clock::now();
  const auto pairs = pair_corpus(1, 1200);
  std::size_t bad = 0;
  for (const auto& [a, b] : pairs) {
    const double j = iou(a, b), d = dice(a, b);
    if (std::abs(d - 2 * j / (1 + j)) > 1e-12) ++bad;
    if (j != iou(b, a) || d != dice(b, a)) ++bad;
    if ((j == 1.0) != (a == b)) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 30.0,
          fmt("%zu pairs incl. 1x1 and 4096x4096, %zu violations, %.2f s",
              pairs.size(), bad, secs)};
}

Outcome codec_oracle() {
  const auto t0 = Clock::now();
  const auto pairs = pair_corpus(2, 1200);
  std::size_t bad = 0;
  std::size_t masks = 0;
  for (const auto& [a, b] : pairs) {
    const RleMask ra = encode_rle(a), rb = encode_rle(b);
    if (decode_rle(ra) != a || decode_rle(rb) != b) ++bad;
    if (rle_overlap(ra, rb) != overlap(a, b)) ++bad;
    masks += 2;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 30.0,
          fmt("%zu masks round-tripped, %zu pairs overlapped, %zu mismatches, %.2f s",
              masks, pairs.size(), bad, secs)};
}

Outcome selection_correctness() {
  Xoshiro256 rng(3);
  std::size_t checked = 0, bad = 0;
  while (checked < 1000) {
    const auto w = static_cast<std::uint32_t>(rng.between(1, 24));
    const auto h = static_cast<std::uint32_t>(rng.between(1, 24));
    const auto k = static_cast<std::size_t>(rng.between(1, 6));
    std::vector<Mask> masks;
    std::vector<double> conf;
    for (std::size_t i = 0; i < k; ++i) {
      masks.push_back(random_mask(rng, w, h, rng.uniform()));
      conf.push_back(rng.uniform());
    }
    const CandidateSet c(masks, conf);
    const Guide g{random_mask(rng, w, h, rng.uniform())};
    const SelectionResult r = select(c, g, {0, 0, 1});
    if (r.fallback_used != FallbackUsed::none) continue;
    ++checked;

    // Brute force from raw pixel counts.
    std::size_t best_iou = 0, best_dice = 0;
    double top_iou = -1, top_dice = -1;
    for (std::size_t i = 0; i < k; ++i) {
      std::uint64_t inter = 0, uni = 0, sa = 0, sb = 0;
      for (std::size_t p = 0; p < masks[i].pixel_count(); ++p) {
        const bool x = masks[i].get_index(p), y = g.mask.get_index(p);
        inter += x && y;
        uni += x || y;
        sa += x;
        sb += y;
      }
      const double j = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
      const double d = sa + sb ? static_cast<double>(2 * inter) /
                                     static_cast<double>(sa + sb)
                               : 1.0;
      if (j > top_iou) top_iou = j, best_iou = i;
      if (d > top_dice) top_dice = d, best_dice = i;
    }
    if (r.chosen_index != best_iou || best_dice != best_iou) ++bad;
    const double scale = 0.001 + rng.uniform() * 1000.0;
    if (select(c, g, {0, 0, scale}).chosen_index != r.chosen_index) ++bad;
  }
  return {bad == 0, fmt("%zu random candidate sets, %zu violations", checked, bad)};
}

struct SynthRun {
  fs::path dir;
  Manifest manifest;
  Experts experts;
  double setup_seconds = 0;
};

SynthRun make_suite() {
  const auto t0 = Clock::now();
  SynthRun s;
  std::random_device rd;
  s.dir = fs::temp_directory_path() / ("maskarbiter-acceptance-" + std::to_string(rd()));
  synth::SuiteConfig c;
  c.seed = 42;
  c.n_instances = 200;
  c.overlap_fraction = 0.5;
  c.noise_rate = 0.05;
  s.manifest = load_manifest(synth::gen_suite(c, s.dir));
  auto file = std::make_shared<FileBackend>(*s.manifest.experts_file);
  s.experts = Experts{file, file};
  s.setup_seconds = seconds_since(t0);
  return s;
}

Outcome baseline_separation(const SynthRun& s) {
  const auto t0 = Clock::now();
  const EvalReport r = run_eval(s.manifest.instances, s.experts, EvalOptions{});
  const Aggregate* dual = r.aggregate(Variant::dual);
  const Aggregate* point = r.aggregate(Variant::point_only);
  const Aggregate* text = r.aggregate(Variant::text_only);

  const auto doc = nlohmann::json::parse(read_file(s.dir / "manifest.json"));
  std::size_t overlaps = 0, point_wrong = 0;
  for (std::size_t i = 0; i < s.manifest.instances.size(); ++i) {
    if (!doc.at("instances").at(i).at("overlap").get<bool>()) continue;
    ++overlaps;
    for (const InstanceResult& res : r.instances) {
      if (res.id == s.manifest.instances[i].id && res.variant == Variant::point_only &&
          res.iou < 1.0) {
        ++point_wrong;
      }
    }
  }

  // Oracle values (tests/oracle/oracles.py suite).
  const bool frozen = dual->mdice == 1.0 && dual->miou == 1.0 &&
                      point->mdice == 0.7736774409677791 &&
                      point->miou == 0.697723280021126 &&
                      text->mdice == 0.9846832597659048 &&
                      text->miou == 0.9700045319252268;
  const bool separation = *dual->miou >= *point->miou + 0.05 && *dual->miou > *text->miou;
  const double secs = s.setup_seconds + seconds_since(t0);
  const bool pass = r.failures.empty() && frozen && separation && overlaps == 100 &&
                    point_wrong == 100 && secs < 60.0;
  return {pass, fmt("mIoU dual %s, point_only %s, text_only %s; point_only wrong on "
                    "%zu/%zu overlap instances; frozen values %s; %.2f s incl. generation",
                    format_percent(*dual->miou).c_str(),
                    format_percent(*point->miou).c_str(),
                    format_percent(*text->miou).c_str(), point_wrong, overlaps,
                    frozen ? "match" : "DIFFER", secs)};
}

Outcome determinism(const SynthRun& s) {
  EvalOptions one, eight;
  one.parallelism = 1;
  eight.parallelism = 8;
  const std::string a = render_json(run_eval(s.manifest.instances, s.experts, one));
  const std::string b = render_json(run_eval(s.manifest.instances, s.experts, eight));
  return {a == b, fmt("parallelism 1 vs 8: %zu vs %zu bytes, %s", a.size(), b.size(),
                      a == b ? "identical" : "DIFFERENT")};
}

Outcome report_fidelity() {
  EvalReport r;
  Aggregate a;
  a.variant = Variant::dual;
  a.count = 1;
  a.mdice = 0.5;
  a.miou = 0.814623;
  r.aggregates = {a};
  const std::string md = render_markdown(r);
  const bool ok = md.find("| 81.46% |") != std::string::npos;
  return {ok, "mIoU 0.814623 renders as " + format_percent(0.814623)};
}

template <class F>
double median_seconds(int reps, F&& f) {
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    f();
    t.push_back(seconds_since(t0));
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

Mask column_band(std::uint32_t size, std::uint32_t x0, std::uint32_t x1,
                 std::uint32_t y0, std::uint32_t y1) {
  Mask m(size, size);
  for (std::uint32_t y = y0; y < y1; ++y) {
    m.set_span(static_cast<std::size_t>(y) * size + x0, x1 - x0);
  }
  return m;
}

Outcome performance() {
  Xoshiro256 rng(4);
  const Mask a = random_mask(rng, 4096, 4096, 0.5);
  const Mask b = random_mask(rng, 4096, 4096, 0.5);
  volatile double sink = 0;
  const double dense = median_seconds(31, [&] { sink = iou(a, b); });

  // Column bands spanning 480 columns: about 2 runs per column.
  const RleMask ra = encode_rle(column_band(4096, 100, 580, 300, 3000));
  const RleMask rb = encode_rle(column_band(4096, 400, 880, 1000, 3900));
  const std::size_t runs = std::max(ra.counts.size(), rb.counts.size());
  const double rle = median_seconds(201, [&] { sink = iou(rle_overlap(ra, rb)); });
  (void)sink;
  const bool pass = dense < 0.010 && rle < 100e-6 && runs < 1000;
  return {pass, fmt("dense 4096x4096 IoU median %.3f ms; RLE IoU (%zu runs) median %.1f us",
                    dense * 1e3, runs, rle * 1e6)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  SynthRun suite;
  bool suite_ok = true;
  std::string suite_error;
  try {
    suite = make_suite();
  } catch (const std::exception& e) {
    suite_ok = false;
    suite_error = e.what();
  }
  const auto needs_suite = [&](auto f) {
    return [&, f] {
      return suite_ok ? f(suite) : Outcome{false, "suite generation failed: " + suite_error};
    };
  };

  const std::vector<Criterion> criteria{
      {"metric-identities", metric_identities},
      {"codec-oracle", codec_oracle},
      {"selection-correctness", selection_correctness},
      {"baseline-separation", needs_suite(baseline_separation)},
      {"determinism", needs_suite(determinism)},
      {"report-fidelity", report_fidelity},
      {"performance", performance},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %-22s %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  if (suite_ok) {
    std::error_code ec;
    fs::remove_all(suite.dir, ec);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
