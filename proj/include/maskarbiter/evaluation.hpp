// Copyright (c) maskarbiter authors
//
// Evaluation harness: runs the dual-selection protocol (one click and one
// text prompt per instance) against ground truth, alongside the two
// single-modality baselines, and aggregates per-instance Dice/IoU into
// mDice/mIoU.
//
// Manifest:
//   {"instances": [{"id", "image", "point": [x, y], "text", "class",
//                   "gt": <rle-json> | {"path": "<pbm>"}}, ...],
//    "experts": "<optional experts file for the file backend>"}

#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "maskarbiter/arbiter.hpp"
#include "maskarbiter/experts.hpp"
#include "maskarbiter/rle.hpp"

namespace maskarbiter {

enum class Variant { dual, point_only, text_only };

std::string_view to_string(Variant v) noexcept;
std::optional<Variant> parse_variant(std::string_view s);
/// Comma-separated list; throws InvalidConfig on unknown names/duplicates.
std::vector<Variant> parse_variants(std::string_view s);
const std::vector<Variant>& all_variants();

/// Replaces every `{class}` with the class name.
std::string render_template(std::string_view tmpl, std::string_view class_name);
bool template_needs_class(std::string_view tmpl) noexcept;

struct InstanceRecord {
  std::string id;
  std::string image;
  PointPrompt point;
  std::string text;
  RleMask gt;
  std::optional<std::string> class_name;
};

struct Manifest {
  std::vector<InstanceRecord> instances;
  /// Resolved path of the manifest's "experts" entry, when present.
  std::optional<std::filesystem::path> experts_file;
};

/// Throws MalformedManifest with a field path (and parser line/column for
/// syntax errors). Duplicate ids and clicks outside the gt are rejected.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const nlohmann::json& doc,
                        const std::filesystem::path& base_dir);

struct Experts {
  std::shared_ptr<ExpertBackend> point;
  std::shared_ptr<ExpertBackend> text;
};

struct InstanceResult {
  std::string id;
  Variant variant = Variant::dual;
  std::optional<std::string> class_name;
  double dice = 0.0;
  double iou = 0.0;
  std::optional<std::size_t> chosen_index;  // absent for text_only
  std::vector<double> similarity;
  std::vector<double> scores;
  FallbackUsed fallback_used = FallbackUsed::none;

  friend bool operator==(const InstanceResult&, const InstanceResult&) = default;
};

/// Why an instance produced no result.
enum class FailureKind { backend, protocol, timeout, dimension, input, interrupted };

std::string_view to_string(FailureKind k) noexcept;
std::optional<FailureKind> parse_failure_kind(std::string_view s);

struct InstanceFailure {
  std::string id;
  FailureKind kind = FailureKind::backend;
  std::string reason;

  friend bool operator==(const InstanceFailure&, const InstanceFailure&) = default;
};

struct Aggregate {
  Variant variant = Variant::dual;
  std::optional<std::string> class_name;  // set for per-class rows
  std::size_t count = 0;
  std::optional<double> mdice;  // absent when count == 0
  std::optional<double> miou;

  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

/// Configuration snapshot written into every report. Parallelism is left
/// out on purpose: it must not change the report bytes.
struct ReportConfig {
  FusionWeights weights;
  FallbackPolicy fallback = FallbackPolicy::point_confidence;
  std::string point_backend;
  std::string text_backend;
  std::optional<std::string> prompt_template;
  std::vector<Variant> variants = all_variants();
  bool per_class = false;

  friend bool operator==(const ReportConfig&, const ReportConfig&) = default;
};

struct EvalReport {
  static constexpr int kSchema = 1;

  ReportConfig config;
  std::size_t total = 0;
  std::vector<InstanceResult> instances;  // manifest order, then variant order
  std::vector<InstanceFailure> failures;  // manifest order
  std::vector<Aggregate> aggregates;      // one per variant
  std::vector<Aggregate> per_class;       // empty unless config.per_class

  std::size_t succeeded() const noexcept { return total - failures.size(); }
  const Aggregate* aggregate(Variant v) const noexcept;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalOptions {
  FusionWeights weights;
  FallbackPolicy fallback = FallbackPolicy::point_confidence;
  std::vector<Variant> variants = all_variants();
  bool per_class = false;
  std::size_t parallelism = 4;
  /// Checked before each instance starts; once set, the remaining instances
  /// are reported as failed ("interrupted").
  const std::atomic<bool>* cancel = nullptr;
};

/// Everything the experts said about one instance.
struct ExpertOutputs {
  std::optional<CandidateSet> candidates;
  std::optional<Guide> guide;
};

/// Scores already-fetched expert outputs for the requested variants.
/// Under the `guide` fallback the dual output is the guide mask itself.
std::vector<InstanceResult> score_instance(const InstanceRecord& rec,
                                           const ExpertOutputs& outputs,
                                           const FusionWeights& w,
                                           FallbackPolicy fallback,
                                           const std::vector<Variant>& variants);

/// Queries the experts and scores one instance. Backend and protocol errors
/// are rethrown as the same type with the instance id prefixed.
std::vector<InstanceResult> eval_instance(const InstanceRecord& rec,
                                          const Experts& experts,
                                          const FusionWeights& w,
                                          FallbackPolicy fallback,
                                          const std::vector<Variant>& variants);

/// Instances run concurrently up to options.parallelism; results are
/// collected and aggregated in manifest order.
EvalReport run_eval(const std::vector<InstanceRecord>& records,
                    const Experts& experts, const EvalOptions& options);

/// One report per template, `{class}` substituted per record. Candidates are
/// fetched once per instance and shared by every template. Throws
/// MissingClassName before any query if a template needs a class name a
/// record lacks, InvalidConfig on an empty template list.
std::vector<EvalReport> run_prompt_sweep(
    const std::vector<InstanceRecord>& records, const Experts& experts,
    const std::vector<std::string>& templates, const EvalOptions& options);

/// Dual selection under each weight triple (joint-confidence fusion
/// ablation). Both experts are queried once per instance.
std::vector<EvalReport> run_fusion_ablation(
    const std::vector<InstanceRecord>& records, const Experts& experts,
    const std::vector<FusionWeights>& grid, const EvalOptions& options);

/// Mean over results of one variant, in the given order. Exposed for tests.
Aggregate aggregate(const std::vector<InstanceResult>& results, Variant v);

}  // namespace maskarbiter
