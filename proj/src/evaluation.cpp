// Copyright (c) maskarbiter authors

#include "maskarbiter/evaluation.hpp"

#include <algorithm>
#include <map>
#include <thread>
#include <unordered_set>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/mask_io.hpp"

namespace maskarbiter {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::dual:
      return "dual";
    case Variant::point_only:
      return "point_only";
    case Variant::text_only:
      return "text_only";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "dual") return Variant::dual;
  if (s == "point_only") return Variant::point_only;
  if (s == "text_only") return Variant::text_only;
  return std::nullopt;
}

std::vector<Variant> parse_variants(std::string_view s) {
  std::vector<Variant> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    const std::string_view name = s.substr(start, comma - start);
    if (!name.empty()) {
      const auto v = parse_variant(name);
      if (!v) {
        throw InvalidConfig("unknown variant '" + std::string(name) +
                            "' (expected dual, point_only, text_only)");
      }
      if (std::find(out.begin(), out.end(), *v) != out.end()) {
        throw InvalidConfig("variant listed twice: " + std::string(name));
      }
      out.push_back(*v);
    }
    start = comma + 1;
  }
  return out;
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> kAll{Variant::dual, Variant::point_only,
                                         Variant::text_only};
  return kAll;
}

namespace {
constexpr std::string_view kClassPlaceholder = "{class}";
}  // namespace

std::string render_template(std::string_view tmpl, std::string_view class_name) {
  std::string out;
  std::size_t start = 0;
  for (std::size_t pos; (pos = tmpl.find(kClassPlaceholder, start)) != tmpl.npos;
       start = pos + kClassPlaceholder.size()) {
    out.append(tmpl.substr(start, pos - start));
    out.append(class_name);
  }
  out.append(tmpl.substr(start));
  return out;
}

bool template_needs_class(std::string_view tmpl) noexcept {
  return tmpl.find(kClassPlaceholder) != std::string_view::npos;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void manifest_error(const std::string& where,
                                 const std::string& what) {
  throw MalformedManifest(where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    manifest_error(where, std::string("missing field \"") + key + "\"");
  }
  return *it;
}

std::string require_string(const json& obj, const char* key,
                           const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) {
    manifest_error(where + "." + key, "expected a string");
  }
  return v.get<std::string>();
}

InstanceRecord parse_record(const json& item, const fs::path& base_dir,
                            const std::string& where) {
  if (!item.is_object()) {
    manifest_error(where, "expected an object");
  }
  InstanceRecord rec;
  rec.id = require_string(item, "id", where);
  if (rec.id.empty()) {
    manifest_error(where + ".id", "must not be empty");
  }
  rec.image = require_string(item, "image", where);
  rec.text = require_string(item, "text", where);
  if (!valid_text_prompt(rec.text)) {
    manifest_error(where + ".text", "text prompt is blank");
  }
  if (const auto c = item.find("class"); c != item.end() && !c->is_null()) {
    if (!c->is_string()) {
      manifest_error(where + ".class", "expected a string");
    }
    rec.class_name = c->get<std::string>();
  }

  const json& point = require(item, "point", where);
  if (!point.is_array() || point.size() != 2 || !point[0].is_number_integer() ||
      !point[1].is_number_integer()) {
    manifest_error(where + ".point", "expected [x, y] integers");
  }
  rec.point = PointPrompt{point[0].get<std::int64_t>(), point[1].get<std::int64_t>()};

  const json& gt = require(item, "gt", where);
  try {
    if (gt.is_object() && gt.contains("path")) {
      const json& p = gt.at("path");
      if (!p.is_string()) {
        manifest_error(where + ".gt.path", "expected a string");
      }
      rec.gt = encode_rle(load_mask(base_dir / p.get<std::string>()));
    } else {
      rec.gt = canonicalize(rle_from_json(gt));
    }
  } catch (const MalformedManifest&) {
    throw;
  } catch (const std::exception& e) {
    manifest_error(where + ".gt", e.what());
  }

  if (!rec.point.inside(rec.gt.width, rec.gt.height)) {
    manifest_error(where + ".point",
                   "(" + std::to_string(rec.point.x) + ", " +
                       std::to_string(rec.point.y) + ") lies outside the " +
                       std::to_string(rec.gt.width) + "x" +
                       std::to_string(rec.gt.height) + " ground truth");
  }
  return rec;
}

}  // namespace

Manifest parse_manifest(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) {
    throw MalformedManifest("manifest: expected a JSON object");
  }
  const json& list = require(doc, "instances", "manifest");
  if (!list.is_array()) {
    manifest_error("manifest.instances", "expected an array");
  }
  Manifest m;
  std::unordered_set<std::string> ids;
  m.instances.reserve(list.size());
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string where = "instances[" + std::to_string(i) + "]";
    InstanceRecord rec = parse_record(list[i], base_dir, where);
    if (!ids.insert(rec.id).second) {
      manifest_error(where + ".id", "duplicate id '" + rec.id + "'");
    }
    m.instances.push_back(std::move(rec));
  }
  if (const auto e = doc.find("experts"); e != doc.end() && !e->is_null()) {
    if (!e->is_string()) {
      manifest_error("manifest.experts", "expected a path string");
    }
    m.experts_file = base_dir / e->get<std::string>();
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw MalformedManifest(e.what());
  }
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    // nlohmann reports "line L, column C" in the message.
    throw MalformedManifest(path.string() + ": " + e.what());
  }
  try {
    return parse_manifest(doc, path.parent_path());
  } catch (const MalformedManifest& e) {
    throw MalformedManifest(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scoring

namespace {

bool wants(const std::vector<Variant>& vs, Variant v) {
  return std::find(vs.begin(), vs.end(), v) != vs.end();
}

bool needs_point(const std::vector<Variant>& vs) {
  return wants(vs, Variant::dual) || wants(vs, Variant::point_only);
}

bool needs_text(const std::vector<Variant>& vs) {
  return wants(vs, Variant::dual) || wants(vs, Variant::text_only);
}

void check_shape(const Mask& gt, const Mask& m, const char* what) {
  if (!gt.same_shape(m)) {
    throw DimensionMismatch(std::string(what) + " is " + std::to_string(m.width()) +
                            "x" + std::to_string(m.height()) +
                            " but ground truth is " + std::to_string(gt.width()) +
                            "x" + std::to_string(gt.height()));
  }
}

}  // namespace

std::vector<InstanceResult> score_instance(const InstanceRecord& rec,
                                           const ExpertOutputs& outputs,
                                           const FusionWeights& w,
                                           FallbackPolicy fallback,
                                           const std::vector<Variant>& variants) {
  const Mask gt = decode_rle(rec.gt);
  if (needs_point(variants)) {
    if (!outputs.candidates) {
      throw InvalidInput("point expert output missing");
    }
    check_shape(gt, (*outputs.candidates)[0], "candidate mask");
  }
  if (needs_text(variants)) {
    if (!outputs.guide) {
      throw InvalidInput("text expert output missing");
    }
    check_shape(gt, outputs.guide->mask, "guide mask");
  }

  std::vector<InstanceResult> out;
  out.reserve(variants.size());
  for (const Variant v : variants) {
    InstanceResult r;
    r.id = rec.id;
    r.variant = v;
    r.class_name = rec.class_name;
    const Mask* final_mask = nullptr;
    switch (v) {
      case Variant::dual: {
        const SelectionResult sel =
            select(*outputs.candidates, *outputs.guide, w, fallback);
        r.chosen_index = sel.chosen_index;
        r.similarity = sel.similarity;
        r.scores = sel.scores;
        r.fallback_used = sel.fallback_used;
        final_mask = sel.fallback_used == FallbackUsed::guide
                         ? &outputs.guide->mask
                         : &(*outputs.candidates)[sel.chosen_index];
        break;
      }
      case Variant::point_only: {
        const std::size_t j = argmax_lowest(outputs.candidates->confidences());
        r.chosen_index = j;
        final_mask = &(*outputs.candidates)[j];
        break;
      }
      case Variant::text_only:
        final_mask = &outputs.guide->mask;
        break;
    }
    const PixelPair counts = overlap(*final_mask, gt);
    r.dice = dice(counts);
    r.iou = iou(counts);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::string point_request_id(const InstanceRecord& rec) { return rec.id + "#point"; }

std::string text_request_id(const InstanceRecord& rec, std::size_t tag) {
  return rec.id + "#text" + (tag == 0 ? "" : "." + std::to_string(tag));
}

CandidateSet fetch_candidates(const InstanceRecord& rec, ExpertBackend& backend) {
  return query_point_expert(
      backend, ExpertRequest::for_point(point_request_id(rec), rec.image, rec.point));
}

Guide fetch_guide(const InstanceRecord& rec, ExpertBackend& backend,
                  const std::string& text, std::size_t tag) {
  return query_text_expert(
      backend, ExpertRequest::for_text(text_request_id(rec, tag), rec.image, text));
}

template <class E>
[[noreturn]] void retag(const std::string& id, const E& e) {
  throw E(id + ": " + e.what());
}

}  // namespace

std::vector<InstanceResult> eval_instance(const InstanceRecord& rec,
                                          const Experts& experts,
                                          const FusionWeights& w,
                                          FallbackPolicy fallback,
                                          const std::vector<Variant>& variants) {
  try {
    ExpertOutputs outputs;
    if (needs_point(variants)) {
      outputs.candidates = fetch_candidates(rec, *experts.point);
    }
    if (needs_text(variants)) {
      outputs.guide = fetch_guide(rec, *experts.text, rec.text, 0);
    }
    return score_instance(rec, outputs, w, fallback, variants);
  } catch (const BackendUnavailable& e) {
    retag(rec.id, e);
  } catch (const ProtocolViolation& e) {
    retag(rec.id, e);
  } catch (const Timeout& e) {
    retag(rec.id, e);
  } catch (const DimensionMismatch& e) {
    retag(rec.id, e);
  }
}

std::string_view to_string(FailureKind k) noexcept {
  switch (k) {
    case FailureKind::backend:
      return "backend";
    case FailureKind::protocol:
      return "protocol";
    case FailureKind::timeout:
      return "timeout";
    case FailureKind::dimension:
      return "dimension";
    case FailureKind::input:
      return "input";
    case FailureKind::interrupted:
      return "interrupted";
  }
  return "?";
}

std::optional<FailureKind> parse_failure_kind(std::string_view s) {
  for (const FailureKind k :
       {FailureKind::backend, FailureKind::protocol, FailureKind::timeout,
        FailureKind::dimension, FailureKind::input, FailureKind::interrupted}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Batch runners

namespace {

template <class F>
void parallel_for(std::size_t n, std::size_t parallelism, F&& body) {
  const std::size_t workers = std::min(std::max<std::size_t>(parallelism, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      body(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        body(i);
      }
    });
  }
}

bool cancelled(const EvalOptions& o) {
  return o.cancel != nullptr && o.cancel->load(std::memory_order_relaxed);
}

struct Failure {
  FailureKind kind;
  std::string reason;
};

// Call from inside a catch block.
Failure classify_current() {
  try {
    throw;
  } catch (const BackendUnavailable& e) {
    return {FailureKind::backend, e.what()};
  } catch (const ProtocolViolation& e) {
    return {FailureKind::protocol, e.what()};
  } catch (const Timeout& e) {
    return {FailureKind::timeout, e.what()};
  } catch (const DimensionMismatch& e) {
    return {FailureKind::dimension, e.what()};
  } catch (const std::exception& e) {
    return {FailureKind::input, e.what()};
  }
}

const Failure kInterrupted{FailureKind::interrupted, "interrupted"};

// Per-instance expert outputs, or the reason fetching them failed.
struct Fetched {
  ExpertOutputs outputs;
  std::optional<Failure> error;
};

std::vector<Fetched> fetch_all(const std::vector<InstanceRecord>& records,
                               const Experts& experts, const EvalOptions& options,
                               bool point, bool text,
                               const std::vector<std::string>* texts,
                               std::size_t tag) {
  std::vector<Fetched> out(records.size());
  parallel_for(records.size(), options.parallelism, [&](std::size_t i) {
    if (cancelled(options)) {
      out[i].error = kInterrupted;
      return;
    }
    try {
      if (point) {
        out[i].outputs.candidates = fetch_candidates(records[i], *experts.point);
      }
      if (text) {
        const std::string& t = texts ? (*texts)[i] : records[i].text;
        out[i].outputs.guide = fetch_guide(records[i], *experts.text, t, tag);
      }
    } catch (const std::exception&) {
      out[i].error = classify_current();
    }
  });
  return out;
}

ReportConfig snapshot(const Experts& experts, const EvalOptions& options,
                      const FusionWeights& weights,
                      std::optional<std::string> tmpl) {
  ReportConfig c;
  c.weights = weights;
  c.fallback = options.fallback;
  c.point_backend = experts.point ? experts.point->describe() : "";
  c.text_backend = experts.text ? experts.text->describe() : "";
  c.prompt_template = std::move(tmpl);
  c.variants = options.variants;
  c.per_class = options.per_class;
  return c;
}

void check_inputs(const Experts& experts, const EvalOptions& options) {
  options.weights.validate();
  if (needs_point(options.variants) && !experts.point) {
    throw InvalidConfig("no point expert configured");
  }
  if (needs_text(options.variants) && !experts.text) {
    throw InvalidConfig("no text expert configured");
  }
}

// Scores every instance that fetched cleanly and aggregates in manifest order.
EvalReport assemble(const std::vector<InstanceRecord>& records,
                    const std::vector<const std::vector<Fetched>*>& sources,
                    const FusionWeights& weights, const EvalOptions& options,
                    ReportConfig config) {
  const std::size_t n = records.size();
  std::vector<std::vector<InstanceResult>> results(n);
  std::vector<std::optional<Failure>> errors(n);
  parallel_for(n, options.parallelism, [&](std::size_t i) {
    for (const std::vector<Fetched>* src : sources) {
      if (const Fetched& f = (*src)[i]; f.error) {
        errors[i] = *f.error;
        return;
      }
    }
    ExpertOutputs merged;
    for (const std::vector<Fetched>* src : sources) {
      const Fetched& f = (*src)[i];
      if (f.outputs.candidates) merged.candidates = f.outputs.candidates;
      if (f.outputs.guide) merged.guide = f.outputs.guide;
    }
    try {
      results[i] = score_instance(records[i], merged, weights, options.fallback,
                                  options.variants);
    } catch (const std::exception&) {
      errors[i] = classify_current();
    }
  });

  EvalReport report;
  report.config = std::move(config);
  report.total = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      report.failures.push_back({records[i].id, errors[i]->kind, errors[i]->reason});
    } else {
      std::move(results[i].begin(), results[i].end(),
                std::back_inserter(report.instances));
    }
  }
  for (const Variant v : options.variants) {
    report.aggregates.push_back(aggregate(report.instances, v));
  }
  if (options.per_class) {
    std::map<std::string, std::vector<InstanceResult>> by_class;
    for (const InstanceResult& r : report.instances) {
      by_class[r.class_name.value_or("(none)")].push_back(r);
    }
    for (const auto& [name, rows] : by_class) {
      for (const Variant v : options.variants) {
        Aggregate a = aggregate(rows, v);
        a.class_name = name;
        report.per_class.push_back(std::move(a));
      }
    }
  }
  return report;
}

}  // namespace

Aggregate aggregate(const std::vector<InstanceResult>& results, Variant v) {
  Aggregate a;
  a.variant = v;
  double dice_sum = 0.0;
  double iou_sum = 0.0;
  for (const InstanceResult& r : results) {
    if (r.variant != v) continue;
    dice_sum += r.dice;
    iou_sum += r.iou;
    ++a.count;
  }
  if (a.count > 0) {
    a.mdice = dice_sum / static_cast<double>(a.count);
    a.miou = iou_sum / static_cast<double>(a.count);
  }
  return a;
}

const Aggregate* EvalReport::aggregate(Variant v) const noexcept {
  for (const Aggregate& a : aggregates) {
    if (a.variant == v) return &a;
  }
  return nullptr;
}

EvalReport run_eval(const std::vector<InstanceRecord>& records,
                    const Experts& experts, const EvalOptions& options) {
  check_inputs(experts, options);
  const std::vector<Fetched> fetched =
      fetch_all(records, experts, options, needs_point(options.variants),
                needs_text(options.variants), nullptr, 0);
  return assemble(records, {&fetched}, options.weights, options,
                  snapshot(experts, options, options.weights, std::nullopt));
}

std::vector<EvalReport> run_prompt_sweep(const std::vector<InstanceRecord>& records,
                                         const Experts& experts,
                                         const std::vector<std::string>& templates,
                                         const EvalOptions& options) {
  check_inputs(experts, options);
  if (templates.empty()) {
    throw InvalidConfig("prompt sweep needs at least one template");
  }
  for (const std::string& t : templates) {
    if (!valid_text_prompt(t)) {
      throw InvalidConfig("prompt templates must not be blank");
    }
    if (!template_needs_class(t)) continue;
    for (const InstanceRecord& rec : records) {
      if (!rec.class_name) {
        throw MissingClassName("template '" + t + "' needs a class name but " +
                               rec.id + " has none");
      }
    }
  }

  const std::vector<Fetched> candidates = fetch_all(
      records, experts, options, needs_point(options.variants), false, nullptr, 0);

  std::vector<EvalReport> reports;
  reports.reserve(templates.size());
  for (std::size_t t = 0; t < templates.size(); ++t) {
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (const InstanceRecord& rec : records) {
      texts.push_back(render_template(templates[t], rec.class_name.value_or("")));
    }
    const std::vector<Fetched> guides =
        fetch_all(records, experts, options, false, needs_text(options.variants),
                  &texts, t + 1);
    reports.push_back(assemble(records, {&candidates, &guides}, options.weights,
                               options,
                               snapshot(experts, options, options.weights,
                                        templates[t])));
  }
  return reports;
}

std::vector<EvalReport> run_fusion_ablation(const std::vector<InstanceRecord>& records,
                                            const Experts& experts,
                                            const std::vector<FusionWeights>& grid,
                                            const EvalOptions& options) {
  check_inputs(experts, options);
  for (const FusionWeights& w : grid) {
    w.validate();
  }
  const std::vector<Fetched> fetched =
      fetch_all(records, experts, options, needs_point(options.variants),
                needs_text(options.variants), nullptr, 0);
  std::vector<EvalReport> reports;
  reports.reserve(grid.size());
  for (const FusionWeights& w : grid) {
    reports.push_back(assemble(records, {&fetched}, w, options,
                               snapshot(experts, options, w, std::nullopt)));
  }
  return reports;
}

}  // namespace maskarbiter
