// Copyright (c) maskarbiter authors
//
// Report emission. JSON is lossless (schema 1, doubles in shortest
// round-trip form); CSV has one row per instance and variant; markdown
// holds the aggregate table with percentages to two decimals.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskarbiter/evaluation.hpp"

namespace maskarbiter {

enum class ReportFormat { json, csv, markdown };

/// 0.814623 -> "81.46%".
std::string format_percent(double fraction);

nlohmann::ordered_json report_to_json(const EvalReport& r);
/// Throws MalformedFile on schema mismatch or missing fields.
EvalReport report_from_json(const nlohmann::json& j);

std::string render_json(const EvalReport& r);
std::string render_csv(const EvalReport& r);
std::string render_markdown(const EvalReport& r);

/// Dual-selection row per template (text prompt ablation table).
std::string render_sweep_markdown(const std::vector<EvalReport>& reports);
/// Dual-selection row per weight triple (fusion strategy table).
std::string render_fusion_markdown(const std::vector<EvalReport>& reports);

/// Filesystem-safe name for a prompt template: "{class}" -> "class",
/// "surgery tools" -> "surgery-tools".
std::string template_slug(const std::string& tmpl);

void emit_report(const EvalReport& r, const std::filesystem::path& path,
                 ReportFormat format);

}  // namespace maskarbiter
