// Copyright (c) maskarbiter authors

#include <gtest/gtest.h>

#include <mutex>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/evaluation.hpp"
#include "maskarbiter/mask_io.hpp"
#include "maskarbiter/report.hpp"
#include "maskarbiter/synth.hpp"
#include "support.hpp"

using namespace maskarbiter;
using nlohmann::json;
using testing_support::TempDir;

namespace {

Mask prefix(std::uint32_t w, std::uint32_t h, std::size_t n) {
  Mask m(w, h);
  m.set_span(0, n);
  return m;
}

// Experts scripted per image: candidates for points, one guide for text.
class ScriptedBackend final : public ExpertBackend {
 public:
  struct Entry {
    std::vector<Mask> candidates;
    std::vector<double> confidences;
    Mask guide{1, 1};
    bool fail = false;
  };

  std::map<std::string, Entry> entries;

  ExpertResponse query(const ExpertRequest& req) override {
    {
      std::lock_guard lock(mu_);
      seen_.push_back(req);
    }
    ExpertResponse r;
    r.id = req.id;
    const Entry& e = entries.at(req.image);
    if (e.fail) {
      r.error = "scripted failure";
      return r;
    }
    if (req.kind == RequestKind::point) {
      for (const Mask& m : e.candidates) r.masks.push_back(encode_rle(m));
      r.confidences = e.confidences;
    } else {
      r.masks.push_back(encode_rle(e.guide));
      r.confidences = {1.0};
    }
    return r;
  }
  std::string describe() const override { return "scripted"; }

  std::vector<ExpertRequest> seen() const {
    std::lock_guard lock(mu_);
    return seen_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<ExpertRequest> seen_;
};

InstanceRecord record(const std::string& id, const Mask& gt,
                      std::optional<std::string> cls = "grasper") {
  return InstanceRecord{id, id, PointPrompt{0, 0}, "grasper", encode_rle(gt), cls};
}

Experts both(const std::shared_ptr<ExpertBackend>& b) { return Experts{b, b}; }

struct SynthFixture {
  TempDir dir{"eval-synth"};
  Manifest manifest;
  Experts experts;

  explicit SynthFixture(std::size_t n = 200) {
    synth::SuiteConfig c;
    c.n_instances = n;
    const auto path = synth::gen_suite(c, dir.path());
    manifest = load_manifest(path);
    experts = both(std::make_shared<FileBackend>(*manifest.experts_file));
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

TEST(Manifest, ParsesInFileOrder) {
  TempDir dir("manifest");
  save_mask(prefix(4, 4, 6), dir / "gt.pbm");
  const json doc = json::parse(R"({"instances":[
    {"id":"b","image":"i1","point":[1,1],"text":"grasper","class":"grasper",
     "gt":{"path":"gt.pbm"}},
    {"id":"a","image":"i2","point":[0,0],"text":"hook",
     "gt":{"size":[2,2],"counts":[0,4]}},
    {"id":"c","image":"i3","point":[1,0],"text":"x","class":null,
     "gt":{"size":[2,2],"counts":[1,0,1,2]}}],
    "experts":"e.json"})");
  write_file(dir / "m.json", doc.dump());
  const Manifest m = load_manifest(dir / "m.json");
  ASSERT_EQ(m.instances.size(), 3u);
  EXPECT_EQ(m.instances[0].id, "b");
  EXPECT_EQ(m.instances[1].id, "a");
  EXPECT_EQ(m.instances[2].id, "c");
  EXPECT_EQ(decode_rle(m.instances[0].gt), prefix(4, 4, 6));
  EXPECT_EQ(m.instances[0].class_name, "grasper");
  EXPECT_FALSE(m.instances[1].class_name);
  EXPECT_EQ(m.instances[2].gt.counts, (std::vector<std::uint64_t>{2, 2}));
  EXPECT_EQ(m.experts_file, dir / "e.json");
}

TEST(Manifest, EmptyList) {
  EXPECT_TRUE(parse_manifest(json::parse(R"({"instances":[]})"), ".").instances.empty());
}

TEST(Manifest, Errors) {
  const auto expect_error = [](const char* text, const char* fragment) {
    try {
      parse_manifest(json::parse(text), ".");
      ADD_FAILURE() << "accepted: " << text;
    } catch (const MalformedManifest& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_error(R"({"instances":[{"id":"a","image":"i","point":[2,0],"text":"t",
                  "gt":{"size":[2,2],"counts":[4]}}]})",
               "instances[0].point");
  expect_error(R"({"instances":[{"id":"a","image":"i","point":[0,0],"text":"t",
                  "gt":{"size":[2,2],"counts":[4]}},
                 {"id":"a","image":"i","point":[0,0],"text":"t",
                  "gt":{"size":[2,2],"counts":[4]}}]})",
               "duplicate id");
  expect_error(R"({"instances":[{"id":"a","point":[0,0],"text":"t",
                  "gt":{"size":[2,2],"counts":[4]}}]})",
               "\"image\"");
  expect_error(R"({"instances":[{"id":"a","image":"i","point":[0],"text":"t",
                  "gt":{"size":[2,2],"counts":[4]}}]})",
               "instances[0].point");
  expect_error(R"({"instances":[{"id":"a","image":"i","point":[0,0],"text":"t",
                  "gt":{"size":[2,2],"counts":[3]}}]})",
               "instances[0].gt");
  expect_error(R"({"instances":[{"id":"a","image":"i","point":[0,0],"text":" ",
                  "gt":{"size":[2,2],"counts":[4]}}]})",
               "instances[0].text");
  expect_error(R"({"cases":[]})", "instances");

  TempDir dir("manifest-syntax");
  write_file(dir / "m.json", "{\n  \"instances\": [\n}");
  try {
    load_manifest(dir / "m.json");
    ADD_FAILURE();
  } catch (const MalformedManifest& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_manifest(dir / "absent.json"), MalformedManifest);
}

// ---------------------------------------------------------------------------
// Scoring

TEST(Eval, PerfectExperts) {
  auto b = std::make_shared<ScriptedBackend>();
  std::vector<InstanceRecord> recs;
  for (int i = 0; i < 5; ++i) {
    const Mask gt = prefix(8, 8, 5 + i);
    const std::string id = "p" + std::to_string(i);
    b->entries[id] = {{prefix(8, 8, 2), gt, prefix(8, 8, 30)}, {0.5, 0.9, 0.7}, gt};
    recs.push_back(record(id, gt));
  }
  const EvalReport r = run_eval(recs, both(b), EvalOptions{});
  ASSERT_EQ(r.aggregates.size(), 3u);
  for (const Aggregate& a : r.aggregates) {
    EXPECT_EQ(a.count, 5u);
    EXPECT_EQ(a.mdice, 1.0);
    EXPECT_EQ(a.miou, 1.0);
  }
}

TEST(Eval, DualIsPerfectWheneverGuideIsGtAndGtIsACandidate) {
  auto b = std::make_shared<ScriptedBackend>();
  Xoshiro256 rng(8);
  std::vector<InstanceRecord> recs;
  for (int i = 0; i < 50; ++i) {
    const std::string id = "v" + std::to_string(i);
    Mask gt = testing_support::random_mask(rng, 9, 7, 0.5);
    gt.set(0, 0);
    std::vector<Mask> cands;
    for (int k = 0; k < 3; ++k) cands.push_back(testing_support::random_mask(rng, 9, 7, 0.5));
    cands[rng.below(3)] = gt;
    b->entries[id] = {cands, {0.3, 0.6, 0.9}, gt};
    recs.push_back(record(id, gt));
  }
  EvalOptions o;
  o.variants = {Variant::dual};
  const EvalReport r = run_eval(recs, both(b), o);
  for (const InstanceResult& i : r.instances) EXPECT_EQ(i.iou, 1.0) << i.id;
}

TEST(Eval, FallbackIsRecorded) {
  auto b = std::make_shared<ScriptedBackend>();
  Mask far(8, 8);
  far.set(7, 7);
  const Mask gt = prefix(8, 8, 4);
  b->entries["f"] = {{prefix(8, 8, 2), gt, prefix(8, 8, 3)}, {0.1, 0.9, 0.5}, far};
  const auto results = eval_instance(record("f", gt), both(b), {},
                                     FallbackPolicy::point_confidence, all_variants());
  ASSERT_EQ(results.size(), 3u);
  EXPECT_EQ(results[0].variant, Variant::dual);
  EXPECT_EQ(results[0].fallback_used, FallbackUsed::point_confidence);
  EXPECT_EQ(results[0].chosen_index, 1u);
  EXPECT_EQ(results[0].iou, 1.0);
  EXPECT_FALSE(results[2].chosen_index);

  const auto guide = eval_instance(record("f", gt), both(b), {},
                                   FallbackPolicy::guide, {Variant::dual});
  EXPECT_EQ(guide[0].fallback_used, FallbackUsed::guide);
  EXPECT_EQ(guide[0].iou, 0.0);  // the guide itself is the output
}

TEST(Eval, FailuresAreExcludedAndListed) {
  auto b = std::make_shared<ScriptedBackend>();
  std::vector<InstanceRecord> recs;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "x" + std::to_string(i);
    const Mask gt = prefix(4, 4, 3 + i);
    b->entries[id] = {{gt, prefix(4, 4, 1), prefix(4, 4, 2)}, {0.9, 0.1, 0.1}, gt};
    b->entries[id].fail = i % 3 == 1;
    recs.push_back(record(id, gt));
  }
  // One instance whose experts disagree with the gt shape.
  b->entries["shape"] = {{prefix(5, 5, 3), prefix(5, 5, 4), prefix(5, 5, 5)},
                         {0.9, 0.8, 0.7},
                         prefix(5, 5, 3)};
  recs.push_back(record("shape", prefix(4, 4, 3)));

  EvalOptions o;
  o.parallelism = 3;
  const EvalReport r = run_eval(recs, both(b), o);
  EXPECT_EQ(r.total, 7u);
  ASSERT_EQ(r.failures.size(), 3u);
  EXPECT_EQ(r.failures[0].id, "x1");
  EXPECT_EQ(r.failures[0].kind, FailureKind::backend);
  EXPECT_EQ(r.failures[1].id, "x4");
  EXPECT_EQ(r.failures[2].id, "shape");
  EXPECT_EQ(r.failures[2].kind, FailureKind::dimension);
  EXPECT_EQ(r.succeeded(), 4u);
  EXPECT_EQ(r.aggregate(Variant::dual)->count, 4u);
  EXPECT_EQ(r.instances.size(), 12u);
}

TEST(Eval, EvalInstancePrefixesId) {
  auto b = std::make_shared<ScriptedBackend>();
  b->entries["z"] = {{prefix(4, 4, 1)}, {0.5}, prefix(4, 4, 1), true};
  try {
    eval_instance(record("z", prefix(4, 4, 2)), both(b), {},
                  FallbackPolicy::point_confidence, all_variants());
    FAIL();
  } catch (const BackendUnavailable& e) {
    EXPECT_EQ(std::string(e.what()).rfind("z: ", 0), 0u) << e.what();
  }
}

TEST(Eval, CancelMarksEverythingInterrupted) {
  auto b = std::make_shared<ScriptedBackend>();
  b->entries["a"] = {{prefix(4, 4, 1)}, {0.5}, prefix(4, 4, 1)};
  std::atomic<bool> cancel{true};
  EvalOptions o;
  o.cancel = &cancel;
  const EvalReport r = run_eval({record("a", prefix(4, 4, 1))}, both(b), o);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].kind, FailureKind::interrupted);
  EXPECT_TRUE(b->seen().empty());
}

TEST(Eval, MissingExpertIsConfigError) {
  auto b = std::make_shared<ScriptedBackend>();
  EvalOptions o;
  EXPECT_THROW(run_eval({}, Experts{b, nullptr}, o), InvalidConfig);
  o.variants = {Variant::point_only};
  EXPECT_NO_THROW(run_eval({}, Experts{b, nullptr}, o));
}

TEST(Eval, VariantParsing) {
  EXPECT_EQ(parse_variants("dual"), (std::vector<Variant>{Variant::dual}));
  EXPECT_EQ(parse_variants("text_only,dual"),
            (std::vector<Variant>{Variant::text_only, Variant::dual}));
  EXPECT_THROW(parse_variants("dual,dual"), InvalidConfig);
  EXPECT_THROW(parse_variants("triple"), InvalidConfig);
}

TEST(Eval, Templates) {
  EXPECT_EQ(render_template("a {class} and {class}", "hook"), "a hook and hook");
  EXPECT_EQ(render_template("surgery tools", "hook"), "surgery tools");
  EXPECT_TRUE(template_needs_class("{class}"));
  EXPECT_FALSE(template_needs_class("{klass}"));
}

// ---------------------------------------------------------------------------
// Aggregation

TEST(Aggregate, SingleInstanceEqualsItsMetrics) {
  InstanceResult r;
  r.variant = Variant::dual;
  r.dice = 0.37;
  r.iou = 0.2;
  const Aggregate a = aggregate({r}, Variant::dual);
  EXPECT_EQ(a.count, 1u);
  EXPECT_EQ(a.mdice, 0.37);
  EXPECT_EQ(a.miou, 0.2);
  EXPECT_FALSE(aggregate({r}, Variant::text_only).miou);
}

TEST(Aggregate, MeanMatchesNaiveSum) {
  Xoshiro256 rng(77);
  std::vector<InstanceResult> rs;
  long double dice_sum = 0, iou_sum = 0;
  for (int i = 0; i < 5000; ++i) {
    InstanceResult r;
    r.variant = Variant::point_only;
    r.iou = rng.uniform();
    r.dice = 2 * r.iou / (1 + r.iou);
    dice_sum += r.dice;
    iou_sum += r.iou;
    rs.push_back(r);
  }
  const Aggregate a = aggregate(rs, Variant::point_only);
  EXPECT_NEAR(*a.mdice, static_cast<double>(dice_sum / 5000), 1e-12);
  EXPECT_NEAR(*a.miou, static_cast<double>(iou_sum / 5000), 1e-12);
}

TEST(Aggregate, PerClassGroups) {
  auto b = std::make_shared<ScriptedBackend>();
  std::vector<InstanceRecord> recs;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "c" + std::to_string(i);
    const Mask gt = prefix(4, 4, 4);
    b->entries[id] = {{gt}, {1.0}, i < 2 ? gt : prefix(4, 4, 2)};
    recs.push_back(record(id, gt, i < 2 ? std::optional<std::string>("hook")
                                        : std::optional<std::string>()));
  }
  EvalOptions o;
  o.per_class = true;
  o.variants = {Variant::text_only};
  const EvalReport r = run_eval(recs, both(b), o);
  ASSERT_EQ(r.per_class.size(), 2u);
  EXPECT_EQ(r.per_class[0].class_name, "(none)");
  EXPECT_EQ(r.per_class[0].miou, 0.5);
  EXPECT_EQ(r.per_class[1].class_name, "hook");
  EXPECT_EQ(r.per_class[1].miou, 1.0);
}

// ---------------------------------------------------------------------------
// Synthetic suite, checked against tests/oracle/oracles.py

TEST(EvalSynth, FirstInstanceMatchesScalarReplay) {
  // n matters: it decides which instances click inside an overlap.
  SynthFixture f(200);
  const auto results =
      eval_instance(f.manifest.instances[0], f.experts, {},
                    FallbackPolicy::point_confidence, all_variants());
  ASSERT_EQ(results.size(), 3u);
  EXPECT_EQ(results[0].id, "synth-0000");
  EXPECT_EQ(results[0].similarity,
            (std::vector<double>{0.9649122807017544, 0.9649122807017544,
                                 0.6867469879518072}));
  EXPECT_EQ(results[0].chosen_index, 0u);
  EXPECT_EQ(results[0].iou, 1.0);
  EXPECT_EQ(results[1].iou, 1.0);
  EXPECT_EQ(results[2].iou, 0.9649122807017544);
  EXPECT_EQ(results[2].dice, 0.9821428571428571);
}

TEST(EvalSynth, SeedFortyTwoFrozen) {
  SynthFixture f;
  EvalOptions o;
  const EvalReport r = run_eval(f.manifest.instances, f.experts, o);
  ASSERT_TRUE(r.failures.empty());
  const Aggregate* dual = r.aggregate(Variant::dual);
  const Aggregate* point = r.aggregate(Variant::point_only);
  const Aggregate* text = r.aggregate(Variant::text_only);
  EXPECT_EQ(dual->mdice, 1.0);
  EXPECT_EQ(dual->miou, 1.0);
  EXPECT_EQ(point->mdice, 0.7736774409677791);
  EXPECT_EQ(point->miou, 0.697723280021126);
  EXPECT_EQ(text->mdice, 0.9846832597659048);
  EXPECT_EQ(text->miou, 0.9700045319252268);
}

TEST(EvalSynth, ParallelismDoesNotChangeReport) {
  SynthFixture f(60);
  EvalOptions one, many;
  one.parallelism = 1;
  many.parallelism = 8;
  EXPECT_EQ(render_json(run_eval(f.manifest.instances, f.experts, one)),
            render_json(run_eval(f.manifest.instances, f.experts, many)));
}

TEST(EvalSynth, PromptSweep) {
  SynthFixture f;
  const auto reports =
      run_prompt_sweep(f.manifest.instances, f.experts, {"{class}", "surgery tools"}, {});
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].config.prompt_template, "{class}");
  EXPECT_EQ(reports[0].aggregate(Variant::dual)->miou, 1.0);
  EXPECT_EQ(reports[1].aggregate(Variant::dual)->miou, 0.6651686139857502);
  EXPECT_EQ(reports[1].aggregate(Variant::dual)->mdice, 0.7548672837004904);
  EXPECT_EQ(reports[1].aggregate(Variant::text_only)->miou, 0.318938757177992);
  ASSERT_EQ(reports[0].instances.size(), reports[1].instances.size());
  for (std::size_t i = 0; i < reports[0].instances.size(); ++i) {
    EXPECT_EQ(reports[0].instances[i].id, reports[1].instances[i].id);
  }
}

TEST(Sweep, ConstantTemplateSendsSameTextAndClassCheckComesFirst) {
  auto b = std::make_shared<ScriptedBackend>();
  std::vector<InstanceRecord> recs;
  for (int i = 0; i < 3; ++i) {
    const std::string id = "s" + std::to_string(i);
    b->entries[id] = {{prefix(4, 4, 2), prefix(4, 4, 3), prefix(4, 4, 4)},
                      {1.0, 1.0, 1.0},
                      prefix(4, 4, 2)};
    recs.push_back(record(id, prefix(4, 4, 2), "cls" + std::to_string(i)));
  }
  const auto reports = run_prompt_sweep(recs, both(b), {"{class}", "tool"}, {});
  ASSERT_EQ(reports.size(), 2u);
  std::vector<std::string> texts;
  std::size_t point_queries = 0;
  for (const ExpertRequest& r : b->seen()) {
    if (r.kind == RequestKind::text && r.id.ends_with("#text.2")) texts.push_back(*r.text);
    point_queries += r.kind == RequestKind::point;
  }
  EXPECT_EQ(texts, (std::vector<std::string>{"tool", "tool", "tool"}));
  EXPECT_EQ(point_queries, 3u);  // candidates shared across templates

  auto fresh = std::make_shared<ScriptedBackend>();
  fresh->entries = b->entries;
  recs[1].class_name.reset();
  EXPECT_THROW(run_prompt_sweep(recs, both(fresh), {"tool", "{class}"}, {}),
               MissingClassName);
  EXPECT_TRUE(fresh->seen().empty());
  EXPECT_THROW(run_prompt_sweep(recs, both(fresh), {}, {}), InvalidConfig);
}

TEST(Fusion, OneReportPerWeightTriple) {
  SynthFixture f(40);
  EvalOptions o;
  o.variants = {Variant::dual};
  const std::vector<FusionWeights> grid{{0, 0, 1}, {0, 1, 0}, {1, 1, 1}};
  const auto reports = run_fusion_ablation(f.manifest.instances, f.experts, grid, o);
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_EQ(reports[1].config.weights, (FusionWeights{0, 1, 0}));
  EvalOptions po;
  po.variants = {Variant::point_only};
  // Point confidence alone reproduces the point-only baseline.
  EXPECT_EQ(reports[1].aggregate(Variant::dual)->miou,
            run_eval(f.manifest.instances, f.experts, po)
                .aggregate(Variant::point_only)
                ->miou);
}
