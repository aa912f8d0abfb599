// Copyright (c) maskarbiter authors

#include "maskarbiter/report.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/mask_io.hpp"

namespace maskarbiter {

using nlohmann::json;
using nlohmann::ordered_json;

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
  return buf;
}

namespace {

ordered_json opt_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json aggregate_json(const Aggregate& a) {
  ordered_json j;
  j["variant"] = to_string(a.variant);
  if (a.class_name) {
    j["class"] = *a.class_name;
  }
  j["count"] = a.count;
  j["mDice"] = opt_number(a.mdice);
  j["mIoU"] = opt_number(a.miou);
  return j;
}

}  // namespace

ordered_json report_to_json(const EvalReport& r) {
  ordered_json cfg;
  cfg["weights"] = {r.config.weights.text, r.config.weights.point,
                    r.config.weights.iou};
  cfg["fallback"] = to_string(r.config.fallback);
  cfg["point_backend"] = r.config.point_backend;
  cfg["text_backend"] = r.config.text_backend;
  cfg["prompt_template"] = r.config.prompt_template
                               ? ordered_json(*r.config.prompt_template)
                               : ordered_json(nullptr);
  ordered_json variants = ordered_json::array();
  for (const Variant v : r.config.variants) {
    variants.push_back(to_string(v));
  }
  cfg["variants"] = std::move(variants);
  cfg["per_class"] = r.config.per_class;

  ordered_json aggregates = ordered_json::array();
  for (const Aggregate& a : r.aggregates) {
    aggregates.push_back(aggregate_json(a));
  }
  ordered_json per_class = ordered_json::array();
  for (const Aggregate& a : r.per_class) {
    per_class.push_back(aggregate_json(a));
  }

  ordered_json instances = ordered_json::array();
  for (const InstanceResult& i : r.instances) {
    ordered_json row;
    row["id"] = i.id;
    row["variant"] = to_string(i.variant);
    row["class"] = i.class_name ? ordered_json(*i.class_name) : ordered_json(nullptr);
    row["dice"] = i.dice;
    row["iou"] = i.iou;
    row["chosen_index"] =
        i.chosen_index ? ordered_json(*i.chosen_index) : ordered_json(nullptr);
    row["similarity"] = i.similarity;
    row["scores"] = i.scores;
    row["fallback"] = to_string(i.fallback_used);
    instances.push_back(std::move(row));
  }
  ordered_json failures = ordered_json::array();
  for (const InstanceFailure& f : r.failures) {
    failures.push_back(ordered_json{
        {"id", f.id}, {"kind", to_string(f.kind)}, {"reason", f.reason}});
  }

  ordered_json j;
  j["schema"] = EvalReport::kSchema;
  j["config"] = std::move(cfg);
  j["counts"] = {{"total", r.total},
                 {"succeeded", r.succeeded()},
                 {"failed", r.failures.size()}};
  j["aggregates"] = std::move(aggregates);
  if (r.config.per_class) {
    j["per_class"] = std::move(per_class);
  }
  j["instances"] = std::move(instances);
  j["failures"] = std::move(failures);
  return j;
}

namespace {

std::optional<double> read_opt_number(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

Variant read_variant(const json& j) {
  const auto v = parse_variant(j.get<std::string>());
  if (!v) throw MalformedFile("report: unknown variant " + j.dump());
  return *v;
}

Aggregate read_aggregate(const json& j) {
  Aggregate a;
  a.variant = read_variant(j.at("variant"));
  if (const auto c = j.find("class"); c != j.end()) {
    a.class_name = c->get<std::string>();
  }
  a.count = j.at("count").get<std::size_t>();
  a.mdice = read_opt_number(j, "mDice");
  a.miou = read_opt_number(j, "mIoU");
  return a;
}

}  // namespace

EvalReport report_from_json(const json& j) {
  try {
    if (j.at("schema").get<int>() != EvalReport::kSchema) {
      throw MalformedFile("report: unsupported schema " + j.at("schema").dump());
    }
    EvalReport r;
    const json& cfg = j.at("config");
    const json& w = cfg.at("weights");
    r.config.weights = FusionWeights{w.at(0).get<double>(), w.at(1).get<double>(),
                                     w.at(2).get<double>()};
    const auto fb = parse_fallback_policy(cfg.at("fallback").get<std::string>());
    if (!fb) throw MalformedFile("report: unknown fallback policy");
    r.config.fallback = *fb;
    r.config.point_backend = cfg.at("point_backend").get<std::string>();
    r.config.text_backend = cfg.at("text_backend").get<std::string>();
    if (!cfg.at("prompt_template").is_null()) {
      r.config.prompt_template = cfg.at("prompt_template").get<std::string>();
    }
    r.config.variants.clear();
    for (const json& v : cfg.at("variants")) {
      r.config.variants.push_back(read_variant(v));
    }
    r.config.per_class = cfg.at("per_class").get<bool>();

    r.total = j.at("counts").at("total").get<std::size_t>();
    for (const json& a : j.at("aggregates")) {
      r.aggregates.push_back(read_aggregate(a));
    }
    if (const auto pc = j.find("per_class"); pc != j.end()) {
      for (const json& a : *pc) {
        r.per_class.push_back(read_aggregate(a));
      }
    }
    for (const json& row : j.at("instances")) {
      InstanceResult i;
      i.id = row.at("id").get<std::string>();
      i.variant = read_variant(row.at("variant"));
      if (!row.at("class").is_null()) {
        i.class_name = row.at("class").get<std::string>();
      }
      i.dice = row.at("dice").get<double>();
      i.iou = row.at("iou").get<double>();
      if (!row.at("chosen_index").is_null()) {
        i.chosen_index = row.at("chosen_index").get<std::size_t>();
      }
      i.similarity = row.at("similarity").get<std::vector<double>>();
      i.scores = row.at("scores").get<std::vector<double>>();
      const auto used = parse_fallback_used(row.at("fallback").get<std::string>());
      if (!used) throw MalformedFile("report: unknown fallback marker");
      i.fallback_used = *used;
      r.instances.push_back(std::move(i));
    }
    for (const json& f : j.at("failures")) {
      const auto kind = parse_failure_kind(f.at("kind").get<std::string>());
      if (!kind) throw MalformedFile("report: unknown failure kind");
      r.failures.push_back(
          {f.at("id").get<std::string>(), *kind, f.at("reason").get<std::string>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw MalformedFile(std::string("report: ") + e.what());
  }
}

std::string render_json(const EvalReport& r) {
  return report_to_json(r).dump(2) + "\n";
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_reals(const std::vector<double>& vs) {
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ';';
    out += real(vs[i]);
  }
  return out;
}

std::string cell(const std::optional<double>& v) {
  return v ? format_percent(*v) : "n/a";
}

constexpr const char* kTableRule = "| --- | ---: | ---: | ---: |\n";

}  // namespace

std::string render_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "id,variant,class,dice,iou,chosen_index,fallback,similarity,scores\n";
  for (const InstanceResult& i : r.instances) {
    out << csv_field(i.id) << ',' << to_string(i.variant) << ','
        << csv_field(i.class_name.value_or("")) << ',' << real(i.dice) << ','
        << real(i.iou) << ','
        << (i.chosen_index ? std::to_string(*i.chosen_index) : "") << ','
        << to_string(i.fallback_used) << ',' << join_reals(i.similarity) << ','
        << join_reals(i.scores) << '\n';
  }
  return out.str();
}

std::string render_markdown(const EvalReport& r) {
  std::ostringstream out;
  out << "| Variant | Instances | mDice | mIoU |\n" << kTableRule;
  for (const Aggregate& a : r.aggregates) {
    out << "| " << to_string(a.variant) << " | " << a.count << " | "
        << cell(a.mdice) << " | " << cell(a.miou) << " |\n";
  }
  if (!r.per_class.empty()) {
    out << "\n| Class | Variant | Instances | mDice | mIoU |\n"
        << "| --- | --- | ---: | ---: | ---: |\n";
    for (const Aggregate& a : r.per_class) {
      out << "| " << a.class_name.value_or("") << " | " << to_string(a.variant)
          << " | " << a.count << " | " << cell(a.mdice) << " | " << cell(a.miou)
          << " |\n";
    }
  }
  return out.str();
}

std::string render_sweep_markdown(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "| Text prompt | Instances | mDice | mIoU |\n" << kTableRule;
  for (const EvalReport& r : reports) {
    const Aggregate* a = r.aggregate(Variant::dual);
    out << "| \"" << r.config.prompt_template.value_or("") << "\" | "
        << (a ? a->count : 0) << " | " << (a ? cell(a->mdice) : "n/a") << " | "
        << (a ? cell(a->miou) : "n/a") << " |\n";
  }
  return out.str();
}

std::string render_fusion_markdown(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "| Weights (text, point, iou) | Instances | mDice | mIoU |\n" << kTableRule;
  for (const EvalReport& r : reports) {
    const Aggregate* a = r.aggregate(Variant::dual);
    out << "| " << r.config.weights.to_string() << " | " << (a ? a->count : 0)
        << " | " << (a ? cell(a->mdice) : "n/a") << " | "
        << (a ? cell(a->miou) : "n/a") << " |\n";
  }
  return out.str();
}

std::string template_slug(const std::string& tmpl) {
  std::string out;
  bool dash = false;
  for (const char ch : tmpl) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      if (dash && !out.empty()) out += '-';
      out += static_cast<char>(std::tolower(c));
      dash = false;
    } else {
      dash = true;
    }
  }
  return out.empty() ? "prompt" : out;
}

void emit_report(const EvalReport& r, const std::filesystem::path& path,
                 ReportFormat format) {
  switch (format) {
    case ReportFormat::json:
      write_file(path, render_json(r));
      break;
    case ReportFormat::csv:
      write_file(path, render_csv(r));
      break;
    case ReportFormat::markdown:
      write_file(path, render_markdown(r));
      break;
  }
}

}  // namespace maskarbiter
