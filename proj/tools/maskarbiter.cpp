// Copyright (c) maskarbiter authors
//
// maskarbiter: batch command-line front end.
//
// Exit codes:
//   0    success
//   1    unexpected internal error
//   2    configuration error (bad flags, weights, dimension mismatch)
//   3    malformed input file (mask, RLE, manifest, experts file)
//   4    expert backend unavailable, timed out or off-protocol, including
//        runs where every instance failed that way
//   5    every evaluated instance failed, for any other mix of reasons
//   130  interrupted (partial reports are still written)

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "maskarbiter/arbiter.hpp"
#include "maskarbiter/errors.hpp"
#include "maskarbiter/evaluation.hpp"
#include "maskarbiter/experts.hpp"
#include "maskarbiter/mask_io.hpp"
#include "maskarbiter/report.hpp"
#include "maskarbiter/rle.hpp"
#include "maskarbiter/synth.hpp"

namespace fs = std::filesystem;
namespace ma = maskarbiter;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kMalformed = 3,
  kBackend = 4,
  kAllFailed = 5,
  kInterrupted = 130,
};

constexpr const char* kParallelismEnv = "MASKARBITER_PARALLELISM";
constexpr std::size_t kDefaultParallelism = 4;

std::atomic<bool> g_cancel{false};

extern "C" void on_sigint(int) {
  g_cancel.store(true);
  // A second Ctrl-C kills the process outright.
  std::signal(SIGINT, SIG_DFL);
}

std::size_t resolve_parallelism(std::optional<std::size_t> flag) {
  if (flag) {
    if (*flag == 0) throw ma::InvalidConfig("--parallelism must be positive");
    return *flag;
  }
  if (const char* env = std::getenv(kParallelismEnv); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || v == 0) {
      throw ma::InvalidConfig(std::string(kParallelismEnv) +
                              " must be a positive integer, got '" + env + "'");
    }
    return static_cast<std::size_t>(v);
  }
  return kDefaultParallelism;
}

std::vector<double> parse_reals(const std::string& s, const char* what) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    const std::string item = s.substr(start, comma - start);
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') {
      throw ma::InvalidConfig(std::string(what) + ": cannot parse '" + item + "'");
    }
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

ma::FallbackPolicy parse_fallback(const std::string& s) {
  const auto p = ma::parse_fallback_policy(s);
  if (!p) {
    throw ma::InvalidConfig("unknown fallback policy '" + s +
                            "' (expected point_confidence, guide, first)");
  }
  return *p;
}

// ---------------------------------------------------------------------------
// select

struct SelectArgs {
  std::string guide;
  std::vector<std::string> candidates;
  std::string confidences;
  double guide_confidence = 1.0;
  std::string weights = "0,0,1";
  std::string fallback = "point_confidence";
  std::string out;
};

int cmd_select(const SelectArgs& a) {
  const ma::FusionWeights w = ma::FusionWeights::parse(a.weights);
  const ma::FallbackPolicy fallback = parse_fallback(a.fallback);

  std::vector<ma::Mask> masks;
  masks.reserve(a.candidates.size());
  for (const std::string& p : a.candidates) {
    masks.push_back(ma::load_mask(p));
  }
  std::vector<double> conf(masks.size(), 1.0);
  if (!a.confidences.empty()) {
    conf = parse_reals(a.confidences, "--confidences");
  }
  const ma::Mask guide_mask = ma::load_mask(a.guide);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (!masks[i].same_shape(guide_mask)) {
      throw ma::DimensionMismatch(a.candidates[i] + " does not match the guide shape");
    }
  }
  const ma::CandidateSet cands(std::move(masks), std::move(conf));
  const ma::Guide guide{guide_mask, a.guide_confidence};
  const ma::SelectionResult r = ma::select(cands, guide, w, fallback);

  nlohmann::ordered_json out;
  out["chosen_index"] = r.chosen_index;
  out["scores"] = r.scores;
  out["similarity"] = r.similarity;
  out["fallback"] = ma::to_string(r.fallback_used);
  std::cout << out.dump() << '\n';

  if (!a.out.empty()) {
    const ma::Mask& chosen = r.fallback_used == ma::FallbackUsed::guide
                                 ? guide.mask
                                 : cands[r.chosen_index];
    ma::save_mask(chosen, a.out);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / ablate / sweep

struct EvalArgs {
  std::string manifest;
  std::string backend = "file";
  std::string point_backend;
  std::string text_backend;
  std::string weights = "0,0,1";
  std::string fallback = "point_confidence";
  std::string variants = "dual,point_only,text_only";
  std::optional<std::size_t> parallelism;
  std::int64_t timeout_ms = 120'000;
  bool per_class = false;
  bool csv = false;
  std::string out_dir = ".";
  // ablate
  std::vector<std::string> grid;
  // sweep
  std::vector<std::string> templates;
};

ma::BackendSpec resolve_spec(const std::string& text, const ma::Manifest& m,
                             const EvalArgs& a, std::size_t parallelism) {
  ma::BackendSpec spec = ma::BackendSpec::parse(text);
  if (spec.kind == ma::BackendSpec::Kind::file && spec.target.empty()) {
    if (!m.experts_file) {
      throw ma::InvalidConfig(
          "backend 'file' needs file:<path> or an \"experts\" entry in the manifest");
    }
    spec.target = m.experts_file->string();
  }
  if (a.timeout_ms <= 0) throw ma::InvalidConfig("--timeout must be positive");
  spec.timeout = std::chrono::milliseconds(a.timeout_ms);
  spec.parallelism = parallelism;
  return spec;
}

ma::Experts build_experts(const EvalArgs& a, const ma::Manifest& m,
                          std::size_t parallelism) {
  const ma::BackendSpec ps = resolve_spec(
      a.point_backend.empty() ? a.backend : a.point_backend, m, a, parallelism);
  const ma::BackendSpec ts = resolve_spec(
      a.text_backend.empty() ? a.backend : a.text_backend, m, a, parallelism);
  ma::Experts e;
  e.point = ma::make_backend(ps);
  // One process / one loaded file when both experts share a spec.
  e.text = ps.to_string() == ts.to_string() ? e.point : ma::make_backend(ts);
  return e;
}

ma::EvalOptions make_options(const EvalArgs& a, std::size_t parallelism) {
  ma::EvalOptions o;
  o.weights = ma::FusionWeights::parse(a.weights);
  o.fallback = parse_fallback(a.fallback);
  o.variants = ma::parse_variants(a.variants);
  if (o.variants.empty()) throw ma::InvalidConfig("--variants is empty");
  o.per_class = a.per_class;
  o.parallelism = parallelism;
  o.cancel = &g_cancel;
  return o;
}

void write_report(const ma::EvalReport& r, const fs::path& dir,
                  const std::string& stem, bool csv) {
  ma::emit_report(r, dir / (stem + ".json"), ma::ReportFormat::json);
  ma::emit_report(r, dir / (stem + ".md"), ma::ReportFormat::markdown);
  if (csv) ma::emit_report(r, dir / (stem + ".csv"), ma::ReportFormat::csv);
}

void print_failures(const ma::EvalReport& r) {
  for (const ma::InstanceFailure& f : r.failures) {
    std::cerr << "failed " << f.id << " (" << ma::to_string(f.kind)
              << "): " << f.reason << '\n';
  }
}

int outcome(const std::vector<const ma::EvalReport*>& reports) {
  if (g_cancel.load()) {
    std::cerr << "interrupted; partial reports written\n";
    return kInterrupted;
  }
  for (const ma::EvalReport* r : reports) {
    if (r->total > 0 && r->succeeded() == 0) {
      std::cerr << "all " << r->total << " instances failed\n";
      const bool transport = std::all_of(
          r->failures.begin(), r->failures.end(), [](const ma::InstanceFailure& f) {
            return f.kind == ma::FailureKind::backend ||
                   f.kind == ma::FailureKind::protocol ||
                   f.kind == ma::FailureKind::timeout;
          });
      return transport ? kBackend : kAllFailed;
    }
  }
  return kOk;
}

struct Prepared {
  ma::Manifest manifest;
  ma::Experts experts;
  ma::EvalOptions options;
  fs::path out_dir;
};

Prepared prepare(const EvalArgs& a) {
  const std::size_t par = resolve_parallelism(a.parallelism);
  Prepared p;
  p.options = make_options(a, par);
  p.manifest = ma::load_manifest(a.manifest);
  p.experts = build_experts(a, p.manifest, par);
  p.out_dir = a.out_dir;
  std::error_code ec;
  fs::create_directories(p.out_dir, ec);
  if (ec) throw ma::IoError(p.out_dir.string() + ": " + ec.message());
  return p;
}

int cmd_eval(const EvalArgs& a) {
  const Prepared p = prepare(a);
  const ma::EvalReport r = ma::run_eval(p.manifest.instances, p.experts, p.options);
  write_report(r, p.out_dir, "report", a.csv);
  print_failures(r);
  std::cout << ma::render_markdown(r);
  return outcome({&r});
}

std::vector<ma::FusionWeights> default_grid() {
  return {{0, 0, 1}, {0, 1, 1}, {1, 0, 1}, {1, 1, 1}, {1, 1, 0}};
}

std::string weights_slug(const ma::FusionWeights& w) {
  std::string s = w.to_string();
  for (char& c : s) {
    if (c == ',') c = '_';
  }
  return s;
}

int cmd_ablate(const EvalArgs& a) {
  const Prepared p = prepare(a);
  const ma::EvalReport single =
      ma::run_eval(p.manifest.instances, p.experts, p.options);
  write_report(single, p.out_dir, "ablation", a.csv);
  print_failures(single);

  std::vector<ma::FusionWeights> grid;
  for (const std::string& g : a.grid) {
    grid.push_back(ma::FusionWeights::parse(g));
  }
  if (grid.empty()) grid = default_grid();
  ma::EvalOptions fusion_opts = p.options;
  fusion_opts.variants = {ma::Variant::dual};
  const std::vector<ma::EvalReport> fusion =
      ma::run_fusion_ablation(p.manifest.instances, p.experts, grid, fusion_opts);
  for (const ma::EvalReport& r : fusion) {
    write_report(r, p.out_dir, "fusion-" + weights_slug(r.config.weights), a.csv);
  }
  const std::string fusion_md = ma::render_fusion_markdown(fusion);
  ma::write_file(p.out_dir / "fusion.md", fusion_md);

  std::cout << ma::render_markdown(single) << '\n' << fusion_md;
  std::vector<const ma::EvalReport*> all{&single};
  for (const ma::EvalReport& r : fusion) all.push_back(&r);
  return outcome(all);
}

int cmd_sweep(const EvalArgs& a) {
  const Prepared p = prepare(a);
  std::vector<std::string> templates = a.templates;
  if (templates.empty()) templates = {"{class}", "surgery tools"};
  const std::vector<ma::EvalReport> reports =
      ma::run_prompt_sweep(p.manifest.instances, p.experts, templates, p.options);

  std::map<std::string, int> used;
  for (const ma::EvalReport& r : reports) {
    std::string slug = ma::template_slug(*r.config.prompt_template);
    if (const int n = used[slug]++; n > 0) slug += "-" + std::to_string(n + 1);
    write_report(r, p.out_dir, "sweep-" + slug, a.csv);
    print_failures(r);
  }
  const std::string md = ma::render_sweep_markdown(reports);
  ma::write_file(p.out_dir / "sweep.md", md);
  std::cout << md;
  std::vector<const ma::EvalReport*> all;
  for (const ma::EvalReport& r : reports) all.push_back(&r);
  return outcome(all);
}

// ---------------------------------------------------------------------------
// rle / synth / serve

int cmd_rle(const std::string& mode, const std::string& in, const std::string& out) {
  if (mode == "encode") {
    const ma::Mask m = ma::load_mask(in, ma::MaskFormat::pbm);
    ma::write_file(out, ma::rle_to_json(ma::encode_rle(m)).dump() + "\n");
  } else {
    const ma::Mask m = ma::load_mask(in, ma::MaskFormat::rle_json);
    ma::save_mask(m, out, ma::MaskFormat::pbm);
  }
  return kOk;
}

struct SynthArgs {
  ma::synth::SuiteConfig config;
  std::vector<std::string> templates;
  std::string out_dir;
};

int cmd_synth(SynthArgs a) {
  if (!a.templates.empty()) a.config.templates = a.templates;
  const fs::path manifest = ma::synth::gen_suite(a.config, a.out_dir);
  std::cout << manifest.string() << '\n';
  return kOk;
}

struct ServeArgs {
  std::string backend = "file";
  std::string experts;
  std::string transport = "stdio";
  std::string host = "127.0.0.1";
  int port = 8765;
};

int cmd_serve(const ServeArgs& a) {
  ma::BackendSpec spec = ma::BackendSpec::parse(a.backend);
  if (spec.kind == ma::BackendSpec::Kind::file && spec.target.empty()) {
    if (a.experts.empty()) {
      throw ma::InvalidConfig("serve: --experts or --backend file:<path> required");
    }
    spec.target = a.experts;
  }
  const auto backend = ma::make_backend(spec);

  if (a.transport == "stdio") {
    ma::serve_jsonl(*backend, std::cin, std::cout);
    return kOk;
  }
  if (a.transport != "http") {
    throw ma::InvalidConfig("unknown transport '" + a.transport + "'");
  }
  httplib::Server server;
  server.Post("/expert", [&](const httplib::Request& req, httplib::Response& res) {
    res.set_content(ma::handle_wire_request(*backend, req.body), "application/json");
  });
  int port = a.port;
  if (port == 0) {
    port = server.bind_to_any_port(a.host);
  } else if (!server.bind_to_port(a.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw ma::BackendUnavailable("cannot bind " + a.host + ":" + std::to_string(a.port));
  }
  std::cerr << "listening on http://" << a.host << ':' << port << '\n';
  server.listen_after_bind();
  return kOk;
}

// ---------------------------------------------------------------------------

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ma::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ma::InvalidInput& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ma::DimensionMismatch& e) {
    std::cerr << "dimension mismatch: " << e.what() << '\n';
    return kConfig;
  } catch (const ma::MissingClassName& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ma::MalformedManifest& e) {
    std::cerr << "malformed manifest: " << e.what() << '\n';
    return kMalformed;
  } catch (const ma::MalformedFile& e) {
    std::cerr << "malformed file: " << e.what() << '\n';
    return kMalformed;
  } catch (const ma::MalformedRle& e) {
    std::cerr << "malformed rle: " << e.what() << '\n';
    return kMalformed;
  } catch (const ma::InvalidMask& e) {
    std::cerr << "invalid mask: " << e.what() << '\n';
    return kMalformed;
  } catch (const ma::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kMalformed;
  } catch (const ma::BackendUnavailable& e) {
    std::cerr << "backend unavailable: " << e.what() << '\n';
    return kBackend;
  } catch (const ma::ProtocolViolation& e) {
    std::cerr << "protocol violation: " << e.what() << '\n';
    return kBackend;
  } catch (const ma::Timeout& e) {
    std::cerr << "timeout: " << e.what() << '\n';
    return kBackend;
  } catch (const ma::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

void add_eval_flags(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--manifest,-m", a.manifest, "Instance manifest (JSON)")
      ->required();
  cmd->add_option("--backend", a.backend,
                  "Backend for both experts: file | file:<path> | exec:<cmd> | "
                  "http://host:port")
      ->capture_default_str();
  cmd->add_option("--point-backend", a.point_backend, "Override for the point expert");
  cmd->add_option("--text-backend", a.text_backend, "Override for the text expert");
  cmd->add_option("--weights", a.weights, "Fusion weights w_text,w_point,w_iou")
      ->capture_default_str();
  cmd->add_option("--fallback", a.fallback, "point_confidence | guide | first")
      ->capture_default_str();
  cmd->add_option("--parallelism,-j", a.parallelism,
                  "Concurrent instances (default $MASKARBITER_PARALLELISM or 4)");
  cmd->add_option("--timeout", a.timeout_ms, "Per-request backend timeout (ms)")
      ->capture_default_str();
  cmd->add_flag("--per-class", a.per_class, "Add per-class aggregates");
  cmd->add_flag("--csv", a.csv, "Also write per-instance CSV");
  cmd->add_option("--out-dir,-o", a.out_dir, "Directory for report files")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskarbiter: dual-prompt mask selection and evaluation"};
  app.require_subcommand(1);

  SelectArgs sel;
  auto* select = app.add_subcommand("select", "Pick one candidate mask using a guide mask");
  select->add_option("--guide,-g", sel.guide, "Guide mask (.pbm or .json)")->required();
  select->add_option("candidates", sel.candidates, "Candidate masks")->required();
  select->add_option("--confidences", sel.confidences,
                     "Comma-separated candidate confidences (default 1.0 each)");
  select->add_option("--guide-confidence", sel.guide_confidence, "Guide confidence")
      ->capture_default_str();
  select->add_option("--weights", sel.weights, "Fusion weights w_text,w_point,w_iou")
      ->capture_default_str();
  select->add_option("--fallback", sel.fallback, "point_confidence | guide | first")
      ->capture_default_str();
  select->add_option("--out", sel.out, "Write the chosen mask here");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate dual selection against ground truth");
  add_eval_flags(eval, ev);
  eval->add_option("--variants", ev.variants, "Comma list of dual,point_only,text_only")
      ->capture_default_str();

  EvalArgs ab;
  auto* ablate = app.add_subcommand(
      "ablate", "Single-modality baselines plus a fusion weight grid");
  add_eval_flags(ablate, ab);
  ablate->add_option("--grid", ab.grid,
                     "Weight triple for the fusion grid (repeatable)");

  EvalArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Compare text prompt templates");
  add_eval_flags(sweep, sw);
  sweep->add_option("--template,-t", sw.templates,
                    "Prompt template, {class} is substituted (repeatable)");

  std::string rle_mode, rle_in, rle_out;
  auto* rle = app.add_subcommand("rle", "Convert between PBM and RLE JSON");
  rle->add_option("mode", rle_mode, "encode | decode")
      ->required()
      ->check(CLI::IsMember({"encode", "decode"}));
  rle->add_option("in", rle_in, "Input file")->required();
  rle->add_option("out", rle_out, "Output file")->required();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic suite");
  synth->add_option("--seed", sy.config.seed, "Suite seed")->capture_default_str();
  synth->add_option("--n", sy.config.n_instances, "Instance count")
      ->capture_default_str();
  synth->add_option("--overlap-fraction", sy.config.overlap_fraction,
                    "Fraction of clicks placed in overlaps")
      ->capture_default_str();
  synth->add_option("--noise", sy.config.noise_rate, "Text expert boundary noise")
      ->capture_default_str();
  synth->add_option("--width", sy.config.width)->capture_default_str();
  synth->add_option("--height", sy.config.height)->capture_default_str();
  synth->add_option("--template,-t", sy.templates,
                    "Text prompt templates to record (repeatable)");
  synth->add_option("--out-dir,-o", sy.out_dir, "Output directory")->required();

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Serve a backend over the expert wire protocol");
  serve->add_option("--backend", sv.backend, "Backend spec to serve")
      ->capture_default_str();
  serve->add_option("--experts", sv.experts, "Experts file for the file backend");
  serve->add_option("--transport", sv.transport, "stdio | http")
      ->capture_default_str()
      ->check(CLI::IsMember({"stdio", "http"}));
  serve->add_option("--host", sv.host)->capture_default_str();
  serve->add_option("--port", sv.port, "HTTP port (0 picks a free one)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  std::signal(SIGINT, on_sigint);

  return guarded([&] {
    if (*select) return cmd_select(sel);
    if (*eval) return cmd_eval(ev);
    if (*ablate) return cmd_ablate(ab);
    if (*sweep) return cmd_sweep(sw);
    if (*rle) return cmd_rle(rle_mode, rle_in, rle_out);
    if (*synth) return cmd_synth(sy);
    return cmd_serve(sv);
  });
}
