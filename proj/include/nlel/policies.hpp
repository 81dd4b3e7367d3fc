#pragma once

// Policy layer: labellers propose edge directives, tuners map
// (parent, label, context) to a control vector. The prompt-only JSON
// parameter emitter is the production tuner; constant policies reproduce the
// classic chain / quota-search controllers exactly.
//
// Degradation contract: whatever a backend returns (prose, junk, hostile
// JSON), the tuner's applied vector validates against the schema and lies
// inside the trust region. On budget exhaustion no backend is called at all
// and the defaults are applied.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nlel/context.hpp"
#include "nlel/control_schema.hpp"
#include "nlel/ledger.hpp"
#include "nlel/lm_adapter.hpp"
#include "nlel/rng.hpp"

namespace nlel::policy {

// ============================================================================
// Labels
// ============================================================================

struct Label {
  std::string text;
  bool is_default = false;
  bool is_stop = false;

  bool operator==(const Label&) const = default;
};

inline Label default_label() { return {"continue the current line of reasoning", true, false}; }
inline Label stop_label() { return {"stop", true, true}; }

// ============================================================================
// Prompt templates
// ============================================================================

// Placeholders: {schema} {ledger} {parent} {label} {context} {m}
inline std::string render_template(std::string_view tmpl,
                                   const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      size_t close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        std::string key(tmpl.substr(i + 1, close - i - 1));
        auto it = slots.find(key);
        if (it != slots.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

inline constexpr const char* kLabellerTemplateV1 =
    "You label edges of a reasoning tree.\n"
    "Parent step:\n{parent}\n"
    "Search context: {context}\n"
    "Recent labels: {ledger}\n"
    "Propose up to {m} short, distinct natural-language directives for the next\n"
    "step, one per line. Answer with the directives only.\n";

inline constexpr const char* kTunerTemplateV1 =
    "You emit execution controls for one reasoning-tree edge.\n"
    "Schema (stay strictly within bounds):\n{schema}\n"
    "History (efficient rows are tagged PARETO, inefficient DOMINATED):\n{ledger}\n"
    "Current case:\n  parent: {parent}\n  label: {label}\n  context: {context}\n"
    "Reply with exactly one JSON object containing every schema field.\n";

inline std::string render_context_slot(const context::ContextSnapshot& c) {
  return context::render_compact(c);
}

// ============================================================================
// JSON extraction
// ============================================================================

struct ExtractedJson {
  std::optional<nlohmann::json> object;
  int object_count = 0;  // balanced, parseable top-level objects found
};

// Scans for balanced top-level JSON objects (string- and escape-aware).
// The first parseable one is the payload; more than one is a rejection —
// the contract is a single object per response.
inline ExtractedJson extract_single_json_object(std::string_view text) {
  ExtractedJson result;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      ++i;
      continue;
    }
    int depth = 0;
    bool in_string = false, escaped = false;
    size_t j = i;
    size_t end = std::string_view::npos;
    for (; j < text.size(); ++j) {
      char c = text[j];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}') {
        if (--depth == 0) {
          end = j;
          break;
        }
      }
    }
    if (end == std::string_view::npos) break;  // unbalanced tail
    auto parsed = nlohmann::json::parse(text.substr(i, end - i + 1), nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) {
      ++result.object_count;
      if (!result.object) result.object = std::move(parsed);
    }
    i = end + 1;
  }
  if (result.object_count > 1) result.object.reset();
  return result;
}

// ============================================================================
// Labellers
// ============================================================================

class Labeller {
 public:
  virtual ~Labeller() = default;
  // Raw proposals; the emit_labels() pipeline handles guards and dedup.
  virtual std::vector<Label> propose(const std::string& parent_text,
                                     const context::ContextSnapshot& ctx, int m) = 0;
  virtual std::string name() const = 0;
};

class ConstantLabeller : public Labeller {
 public:
  explicit ConstantLabeller(Label label = default_label()) : label_(std::move(label)) {}
  std::vector<Label> propose(const std::string&, const context::ContextSnapshot&,
                             int) override {
    return {label_};
  }
  std::string name() const override { return "constant"; }

 private:
  Label label_;
};

// Seeded junk directives; the ablation baseline for label semantics.
class RandomLabeller : public Labeller {
 public:
  explicit RandomLabeller(uint64_t seed) : seed_(seed) {}
  std::vector<Label> propose(const std::string& parent_text,
                             const context::ContextSnapshot& ctx, int m) override {
    static const char* words[] = {"purple", "quartz", "seven", "drift",
                                  "vector", "lantern", "oblique", "mirror"};
    rng::Stream rs(rng::derive(seed_, {rng::fnv1a64(parent_text),
                                       static_cast<uint64_t>(ctx.depth)}));
    std::vector<Label> out;
    for (int i = 0; i < m; ++i) {
      std::string text = std::string(words[rs.below(8)]) + " " + words[rs.below(8)];
      out.push_back({text, false, false});
    }
    return out;
  }
  std::string name() const override { return "random"; }

 private:
  uint64_t seed_;
};

// Prompts an LM backend and reads one directive per line.
class BackendLabeller : public Labeller {
 public:
  BackendLabeller(adapter::GenerationBackend& backend,
                  std::string template_text = kLabellerTemplateV1,
                  adapter::UsageTally* tally = nullptr)
      : backend_(backend), template_(std::move(template_text)), tally_(tally) {}

  std::vector<Label> propose(const std::string& parent_text,
                             const context::ContextSnapshot& ctx, int m) override {
    std::string history;
    for (const auto& l : ctx.recent_labels) {
      if (!history.empty()) history += "; ";
      history += l;
    }
    adapter::GenerationRequest req;
    req.prompt = render_template(template_, {{"parent", parent_text},
                                             {"context", render_context_slot(ctx)},
                                             {"ledger", history},
                                             {"m", std::to_string(m)}});
    req.temperature = 0.7;
    req.max_tokens = 96;
    auto outcome = backend_.generate(req);
    if (!outcome.ok()) return {};
    if (tally_) tally_->record(*outcome.response);
    std::vector<Label> out;
    for (const auto& text : outcome.response->texts) {
      size_t start = 0;
      while (start < text.size()) {
        size_t nl = text.find('\n', start);
        std::string line = text.substr(start, nl == std::string::npos ? nl : nl - start);
        start = nl == std::string::npos ? text.size() : nl + 1;
        while (!line.empty() && (line.front() == '-' || line.front() == '*' ||
                                 line.front() == ' ' || std::isdigit(static_cast<unsigned char>(line.front())) ||
                                 line.front() == '.' || line.front() == ')'))
          line.erase(line.begin());
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r'))
          line.pop_back();
        if (!line.empty()) out.push_back({line, false, false});
      }
    }
    return out;
  }
  std::string name() const override { return "backend"; }

 private:
  adapter::GenerationBackend& backend_;
  std::string template_;
  adapter::UsageTally* tally_;
};

// The label emission pipeline: budget guard first (no backend touch when the
// budget bits flip), then proposal, de-duplication by text, count clamp, and
// degradation to the default label when the policy yields nothing.
inline std::vector<Label> emit_labels(Labeller& labeller, const std::string& parent_text,
                                      const context::ContextSnapshot& ctx, int m) {
  if (m < 1) throw std::invalid_argument("label count must be >= 1");
  if (ctx.budget_exhausted) return {stop_label()};

  std::vector<Label> raw = labeller.propose(parent_text, ctx, m);
  std::vector<Label> out;
  for (auto& label : raw) {
    if (label.text.empty()) continue;
    bool seen = false;
    for (const auto& existing : out) seen = seen || existing.text == label.text;
    if (!seen) out.push_back(std::move(label));
    if (static_cast<int>(out.size()) == m) break;
  }
  if (out.empty()) out.push_back(default_label());
  return out;
}

// ============================================================================
// Tuners
// ============================================================================

struct TunerAudit {
  std::string rendered_prompt;
  std::string raw_text;
  bool backend_called = false;
  bool parse_ok = false;
  bool used_fallback = false;
  int attempts = 0;
  std::vector<std::string> validation_errors;
  double projection_distance = 0.0;  // distance(applied, defaults)
  bool projection_moved = false;
};

struct TunerResult {
  ControlVector emitted;  // pre-projection (validated or fallback)
  ControlVector applied;  // post-projection, the vector the engine uses
  TunerAudit audit;
};

struct JPEConfig {
  std::string schema_doc;
  size_t max_ledger_rows = 8;
  int retry_limit = 1;
  std::string template_text = kTunerTemplateV1;
};

class Tuner {
 public:
  virtual ~Tuner() = default;
  virtual TunerResult emit_control(const std::string& parent_text, const Label& label,
                                   const context::ContextSnapshot& ctx) = 0;
  virtual std::string name() const = 0;
};

namespace detail {

inline TunerResult finish(const ControlSchema& schema, const ControlVector& defaults,
                          double radius, ControlVector emitted, TunerAudit audit) {
  auto projection = project_trust_region(schema, emitted, defaults, radius);
  audit.projection_moved = projection.moved;
  audit.projection_distance = projection.distance_to_center;
  return {std::move(emitted), std::move(projection.vector), std::move(audit)};
}

}  // namespace detail

// Ignores the case entirely and emits one fixed vector; with the constant
// labeller this reproduces chain and quota-search baselines exactly.
class ConstantTuner : public Tuner {
 public:
  ConstantTuner(ControlSchema schema, ControlVector fixed, double trust_radius)
      : schema_(std::move(schema)), defaults_(schema_defaults(schema_)),
        fixed_(std::move(fixed)), radius_(trust_radius) {
    auto check = revalidate(schema_, fixed_);
    if (!check.ok())
      throw std::invalid_argument("constant tuner vector invalid: " + check.describe());
  }

  TunerResult emit_control(const std::string&, const Label&,
                           const context::ContextSnapshot& ctx) override {
    if (ctx.budget_exhausted) {
      ControlVector clamped = defaults_;
      clamped.provenance = Provenance::clamped_budget;
      TunerAudit audit;
      audit.used_fallback = true;
      return detail::finish(schema_, defaults_, radius_, clamped, audit);
    }
    ControlVector emitted = fixed_;
    emitted.provenance = Provenance::emitted;
    return detail::finish(schema_, defaults_, radius_, emitted, TunerAudit{});
  }
  std::string name() const override { return "constant"; }

 private:
  ControlSchema schema_;
  ControlVector defaults_;
  ControlVector fixed_;
  double radius_;
};

// Prompt-only JSON parameter emitter. Renders schema + tagged ledger rows +
// the current case, parses exactly one JSON object from the reply, validates
// strictly, projects into the trust region. Any failure after the retry
// budget degrades to the defaults; this function never throws on model
// output.
class JsonParameterEmitter : public Tuner {
 public:
  JsonParameterEmitter(ControlSchema schema, JPEConfig config,
                       adapter::GenerationBackend& backend, double trust_radius,
                       const std::vector<ledger::LedgerRow>* ledger_rows = nullptr,
                       adapter::UsageTally* tally = nullptr)
      : schema_(std::move(schema)), defaults_(schema_defaults(schema_)),
        config_(std::move(config)), backend_(backend), radius_(trust_radius),
        ledger_rows_(ledger_rows), tally_(tally) {
    if (config_.schema_doc.empty()) config_.schema_doc = render_schema_text(schema_);
  }

  TunerResult emit_control(const std::string& parent_text, const Label& label,
                           const context::ContextSnapshot& ctx) override {
    TunerAudit audit;
    if (ctx.budget_exhausted) {
      ControlVector clamped = defaults_;
      clamped.provenance = Provenance::clamped_budget;
      audit.used_fallback = true;
      return detail::finish(schema_, defaults_, radius_, clamped, audit);
    }

    audit.rendered_prompt = render_prompt(parent_text, label, ctx);
    adapter::GenerationRequest req;
    req.prompt = audit.rendered_prompt;
    req.temperature = 0.2;
    req.max_tokens = 256;

    for (int attempt = 0; attempt <= config_.retry_limit; ++attempt) {
      audit.attempts = attempt + 1;
      auto outcome = backend_.generate(req);
      if (!outcome.ok()) {
        audit.validation_errors.push_back(std::string("backend: ") +
                                          adapter::to_string(outcome.error->kind));
        continue;
      }
      audit.backend_called = true;
      if (tally_) tally_->record(*outcome.response);
      audit.raw_text = outcome.response->texts.empty() ? ""
                                                       : outcome.response->texts.front();
      auto extracted = extract_single_json_object(audit.raw_text);
      if (!extracted.object) {
        audit.validation_errors.push_back(
            extracted.object_count > 1 ? "multiple JSON objects in reply"
                                       : "no JSON object in reply");
        continue;
      }
      audit.parse_ok = true;
      auto validated = validate(schema_, *extracted.object);
      if (!validated.ok()) {
        for (const auto& issue : validated.issues)
          audit.validation_errors.push_back(issue.field + ": " + issue.message);
        continue;
      }
      return detail::finish(schema_, defaults_, radius_, *validated.vector, audit);
    }

    audit.used_fallback = true;
    ControlVector fallback = defaults_;
    fallback.provenance = Provenance::defaults;
    return detail::finish(schema_, defaults_, radius_, fallback, audit);
  }

  std::string name() const override { return "jpe"; }

  // Recent rows from the same depth bucket ranked by label similarity;
  // remaining capacity fills with the freshest rows regardless of bucket.
  std::vector<const ledger::LedgerRow*> select_rows(const Label& label,
                                                    const context::ContextSnapshot& ctx) const {
    std::vector<const ledger::LedgerRow*> picked;
    if (!ledger_rows_ || config_.max_ledger_rows == 0) return picked;
    auto bucket = [](int depth) { return std::min(depth, 6) / 2; };

    struct Scored {
      const ledger::LedgerRow* row;
      double similarity;
      size_t recency;
    };
    std::vector<Scored> in_bucket, rest;
    for (size_t i = 0; i < ledger_rows_->size(); ++i) {
      const auto& row = (*ledger_rows_)[i];
      double sim = 1.0 - context::trigram_jaccard_distance(row.label_text, label.text);
      if (bucket(row.context.depth) == bucket(ctx.depth))
        in_bucket.push_back({&row, sim, i});
      else
        rest.push_back({&row, sim, i});
    }
    auto by_rank = [](const Scored& a, const Scored& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return a.recency > b.recency;
    };
    std::sort(in_bucket.begin(), in_bucket.end(), by_rank);
    std::sort(rest.begin(), rest.end(),
              [](const Scored& a, const Scored& b) { return a.recency > b.recency; });
    for (const auto& s : in_bucket)
      if (picked.size() < config_.max_ledger_rows) picked.push_back(s.row);
    for (const auto& s : rest)
      if (picked.size() < config_.max_ledger_rows) picked.push_back(s.row);
    return picked;
  }

  std::string render_prompt(const std::string& parent_text, const Label& label,
                            const context::ContextSnapshot& ctx) const {
    std::string rows_text;
    for (const auto* row : select_rows(label, ctx)) {
      rows_text += ledger::render_row_line(schema_, *row);
      rows_text += "\n";
    }
    if (rows_text.empty()) rows_text = "(no history yet)\n";
    return render_template(config_.template_text,
                           {{"schema", config_.schema_doc},
                            {"ledger", rows_text},
                            {"parent", parent_text},
                            {"label", label.text},
                            {"context", render_context_slot(ctx)}});
  }

 private:
  ControlSchema schema_;
  ControlVector defaults_;
  JPEConfig config_;
  adapter::GenerationBackend& backend_;
  double radius_;
  const std::vector<ledger::LedgerRow>* ledger_rows_;
  adapter::UsageTally* tally_;
};

}  // namespace nlel::policy
