#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlel/policies.hpp>

#include <fstream>
#include <sstream>

using namespace nlel;
using namespace nlel::policy;

namespace {

context::ContextSnapshot plain_context(int depth = 1) {
  context::BudgetCounters budgets{100, 1000, 0, 0, 0};
  return context::summarize({}, {}, {}, budgets, depth);
}

context::ContextSnapshot exhausted_context() {
  context::BudgetCounters budgets{1000, 1000, 0, 0, 0};
  return context::summarize({}, {}, {}, budgets, 2);
}

// Backend that counts calls and replies from a fixed list, cycling.
class CountingBackend : public adapter::GenerationBackend {
 public:
  explicit CountingBackend(std::vector<std::string> replies)
      : replies_(std::move(replies)) {}
  adapter::GenerationOutcome generate(const adapter::GenerationRequest& req) override {
    ++calls;
    last_prompt = req.prompt;
    adapter::GenerationResponse resp;
    resp.backend_id = "counting";
    resp.prompt_tokens = adapter::approx_tokens(req.prompt);
    resp.texts.push_back(replies_[std::min(static_cast<size_t>(calls - 1),
                                           replies_.size() - 1)]);
    resp.completion_tokens = 16;
    return {resp, std::nullopt};
  }
  std::string id() const override { return "counting"; }

  int calls = 0;
  std::string last_prompt;

 private:
  std::vector<std::string> replies_;
};

class FailingBackend : public adapter::GenerationBackend {
 public:
  adapter::GenerationOutcome generate(const adapter::GenerationRequest&) override {
    ++calls;
    return {std::nullopt, adapter::AdapterError{adapter::ErrorKind::transport, "down", 1}};
  }
  std::string id() const override { return "failing"; }
  int calls = 0;
};

}  // namespace

TEST_CASE("json extraction takes the first balanced object") {
  auto r = extract_single_json_object("Sure! Here you go: {\"a\": 1} hope it helps");
  REQUIRE(r.object.has_value());
  CHECK((*r.object)["a"] == 1);
  CHECK(r.object_count == 1);

  // Nested braces and braces inside strings do not confuse the scan.
  r = extract_single_json_object(R"(prefix {"a": {"b": "}{"}, "c": 2} suffix)");
  REQUIRE(r.object.has_value());
  CHECK((*r.object)["c"] == 2);

  r = extract_single_json_object("no json here at all");
  CHECK_FALSE(r.object.has_value());
  CHECK(r.object_count == 0);

  // Two top-level objects violate the single-object contract.
  r = extract_single_json_object(R"({"a":1} and also {"b":2})");
  CHECK_FALSE(r.object.has_value());
  CHECK(r.object_count == 2);

  // Unbalanced tail.
  r = extract_single_json_object(R"(start {"a": )");
  CHECK_FALSE(r.object.has_value());
}

TEST_CASE("constant labeller always emits its one label") {
  ConstantLabeller labeller;
  auto labels = emit_labels(labeller, "any parent", plain_context(), 4);
  REQUIRE(labels.size() == 1);
  CHECK(labels[0].is_default);
  CHECK_FALSE(labels[0].is_stop);
}

TEST_CASE("budget exhaustion short-circuits to a default stop label") {
  CountingBackend backend({"should never be asked"});
  BackendLabeller labeller(backend);
  auto labels = emit_labels(labeller, "parent", exhausted_context(), 3);
  REQUIRE(labels.size() == 1);
  CHECK(labels[0].is_default);
  CHECK(labels[0].is_stop);
  CHECK(backend.calls == 0);
}

TEST_CASE("labels deduplicate and clamp to the requested count") {
  CountingBackend backend(
      {"work backward\nwork backward\nseek a counterexample\nformalize\nprobe"});
  BackendLabeller labeller(backend);
  auto labels = emit_labels(labeller, "parent", plain_context(), 3);
  REQUIRE(labels.size() == 3);
  CHECK(labels[0].text == "work backward");
  CHECK(labels[1].text == "seek a counterexample");
  CHECK(labels[2].text == "formalize");
}

TEST_CASE("labeller backend failure degrades to the default label") {
  FailingBackend backend;
  BackendLabeller labeller(backend);
  auto labels = emit_labels(labeller, "parent", plain_context(), 2);
  REQUIRE(labels.size() == 1);
  CHECK(labels[0].is_default);
  CHECK(backend.calls == 1);
}

TEST_CASE("constant tuner emits its fixed vector through projection") {
  ControlSchema schema = canonical_v1();
  ControlVector fixed = schema_defaults(schema);
  fixed.values[fields::branch_quota] = int64_t{1};
  fixed.values[fields::gen_count] = int64_t{1};

  ConstantTuner tuner(schema, fixed, 0.15);
  auto r = tuner.emit_control("parent", default_label(), plain_context());
  CHECK(int_at(r.applied, fields::branch_quota) == 1);
  CHECK(int_at(r.applied, fields::gen_count) == 1);
  CHECK_FALSE(r.audit.projection_moved);  // one step of 1/7 fits inside r=0.15

  // A vector outside the region is projected every time.
  ControlVector wild = schema_defaults(schema);
  wild.values[fields::temperature] = 2.0;
  ConstantTuner wild_tuner(schema, wild, 0.15);
  auto rw = wild_tuner.emit_control("parent", default_label(), plain_context());
  CHECK(rw.audit.projection_moved);
  CHECK(rw.applied.provenance == Provenance::projected);
  CHECK(number_at(rw.applied, fields::temperature) ==
        doctest::Approx(0.7 + 0.15 * 2.0).epsilon(1e-12));
}

TEST_CASE("jpe validates, projects and records the audit trail") {
  ControlSchema schema = canonical_v1();
  ControlVector target = schema_defaults(schema);
  target.values[fields::temperature] = 0.20;
  target.values[fields::top_p] = 0.60;
  target.values[fields::retrieval_weights] =
      Simplex{{"none", 0.0}, {"math-lemmas", 0.7}, {"general", 0.3}};
  target.values[fields::verify_passes] = int64_t{1};
  target.values[fields::max_tokens] = int64_t{40};
  target.values[fields::beta] = 0.10;
  target.values[fields::gen_count] = int64_t{1};
  std::string reply = "controls follow: " + to_wire(schema, target).dump();

  CountingBackend backend({reply});
  JsonParameterEmitter jpe(schema, JPEConfig{}, backend, 0.15);
  auto r = jpe.emit_control("prove the parity claim", {"contrapositive", false, false},
                            plain_context());
  CHECK(r.audit.parse_ok);
  CHECK_FALSE(r.audit.used_fallback);
  CHECK(r.audit.attempts == 1);
  // The emitted vector validates; the applied one is its projection.
  CHECK(r.emitted.provenance == Provenance::emitted);
  CHECK(r.audit.projection_distance <= 0.15 + 1e-9);
  CHECK(revalidate(schema, r.applied).ok());
  // Prompt carries all three ingredients.
  CHECK(r.audit.rendered_prompt.find("control schema control-v1") != std::string::npos);
  CHECK(r.audit.rendered_prompt.find("label: contrapositive") != std::string::npos);
  CHECK(r.audit.rendered_prompt.find("(no history yet)") != std::string::npos);
}

TEST_CASE("jpe retries once on prose then falls back to the defaults") {
  ControlSchema schema = canonical_v1();
  CountingBackend backend({"no json in this reply", "still nothing"});
  JsonParameterEmitter jpe(schema, JPEConfig{}, backend, 0.15);
  auto r = jpe.emit_control("parent", default_label(), plain_context());
  CHECK(backend.calls == 2);  // retry_limit 1 => two attempts
  CHECK(r.audit.used_fallback);
  CHECK(r.applied.values == schema_defaults(schema).values);
  CHECK(r.applied.provenance == Provenance::defaults);
}

TEST_CASE("jpe returns defaults when the reply equals the defaults") {
  ControlSchema schema = canonical_v1();
  CountingBackend backend({to_wire(schema, schema_defaults(schema)).dump()});
  JsonParameterEmitter jpe(schema, JPEConfig{}, backend, 0.15);
  auto r = jpe.emit_control("parent", default_label(), plain_context());
  CHECK_FALSE(r.audit.projection_moved);
  CHECK(r.applied.values == schema_defaults(schema).values);
}

TEST_CASE("jpe budget guard never touches the backend") {
  ControlSchema schema = canonical_v1();
  CountingBackend backend({"{}"});
  JsonParameterEmitter jpe(schema, JPEConfig{}, backend, 0.15);
  auto r = jpe.emit_control("parent", default_label(), exhausted_context());
  CHECK(backend.calls == 0);
  CHECK(r.applied.values == schema_defaults(schema).values);
  CHECK(r.applied.provenance == Provenance::clamped_budget);
}

TEST_CASE("jpe transport failure degrades to defaults with audit flags") {
  ControlSchema schema = canonical_v1();
  FailingBackend backend;
  JsonParameterEmitter jpe(schema, JPEConfig{}, backend, 0.15);
  auto r = jpe.emit_control("parent", default_label(), plain_context());
  CHECK(backend.calls == 2);
  CHECK(r.audit.used_fallback);
  CHECK_FALSE(r.audit.backend_called);
  CHECK(r.applied.values == schema_defaults(schema).values);
}

TEST_CASE("prompt rendering is deterministic and ledger rows are curated") {
  ControlSchema schema = canonical_v1();
  std::vector<ledger::LedgerRow> rows;
  for (int i = 0; i < 20; ++i) {
    ledger::LedgerRow row;
    row.parent_digest = ledger::parent_digest("p" + std::to_string(i));
    row.label_text = i % 2 ? "work backward from the goal" : "seek a counterexample";
    row.context = plain_context(i % 4);
    row.pi_applied = schema_defaults(schema);
    row.outcome_S = 0.1 * (i % 10);
    row.cost_tokens = 10 * i;
    row.tag = i % 3 ? ledger::ParetoTag::dominated : ledger::ParetoTag::pareto;
    rows.push_back(std::move(row));
  }

  CountingBackend backend({"{}"});
  JPEConfig cfg;
  cfg.max_ledger_rows = 4;
  JsonParameterEmitter jpe(schema, cfg, backend, 0.15, &rows);

  Label query{"work backward", false, false};
  auto picked = jpe.select_rows(query, plain_context(1));
  REQUIRE(picked.size() == 4);
  // Same-depth-bucket rows with similar label text rank first.
  CHECK(picked[0]->label_text == "work backward from the goal");

  std::string p1 = jpe.render_prompt("parent", query, plain_context(1));
  std::string p2 = jpe.render_prompt("parent", query, plain_context(1));
  CHECK(p1 == p2);
  CHECK(p1.find("[PARETO]") != std::string::npos);
  CHECK(p1.find("[DOMINATED]") != std::string::npos);

  // Zero-row configuration renders no history.
  cfg.max_ledger_rows = 0;
  JsonParameterEmitter empty_jpe(schema, cfg, backend, 0.15, &rows);
  CHECK(empty_jpe.render_prompt("parent", query, plain_context(1))
            .find("(no history yet)") != std::string::npos);
}

TEST_CASE("template rendering substitutes only known placeholders") {
  std::string out = render_template("a {x} b {y} c {unknown}", {{"x", "1"}, {"y", "2"}});
  CHECK(out == "a 1 b 2 c {unknown}");
}

TEST_CASE("shipped prompt templates match the embedded defaults") {
  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  std::string base = std::string(NLEL_SOURCE_DIR) + "/prompts/";
  CHECK(slurp(base + "labeller_v1.txt") == kLabellerTemplateV1);
  CHECK(slurp(base + "tuner_v1.txt") == kTunerTemplateV1);
}
