#pragma once

// Run orchestration: configuration, policy wiring, per-seed instance loops,
// trace/report/manifest output, offline replay and the ablation grid.
// Instances run sequentially so a fixed configuration is reproducible down
// to the byte; the tuner's in-prompt ledger accumulates across instances
// within one seed, tagged after every instance.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlel/context.hpp"
#include "nlel/control_schema.hpp"
#include "nlel/ledger.hpp"
#include "nlel/lm_adapter.hpp"
#include "nlel/metrics.hpp"
#include "nlel/policies.hpp"
#include "nlel/search.hpp"
#include "nlel/synthetic_env.hpp"
#include "nlel/trace.hpp"

namespace nlel::runner {

// ============================================================================
// Configuration
// ============================================================================

enum class PolicyKind { nlel_jpe, constant_cot, constant_tot, random_labels };

inline const char* to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::nlel_jpe: return "nlel_jpe";
    case PolicyKind::constant_cot: return "constant_cot";
    case PolicyKind::constant_tot: return "constant_tot";
    case PolicyKind::random_labels: return "random_labels";
  }
  return "?";
}

inline PolicyKind policy_from_string(std::string_view s) {
  if (s == "nlel_jpe") return PolicyKind::nlel_jpe;
  if (s == "constant_cot") return PolicyKind::constant_cot;
  if (s == "constant_tot") return PolicyKind::constant_tot;
  if (s == "random_labels") return PolicyKind::random_labels;
  throw std::invalid_argument("unknown policy: " + std::string(s));
}

struct RunConfig {
  std::string schema_path;  // empty -> built-in canonical schema
  env::EnvSpec env_spec;
  PolicyKind policy = PolicyKind::nlel_jpe;
  double trust_radius = 0.15;
  double beta0 = 0.3;
  double gamma_a = 0.7;
  search::RunBudget budget;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  double lambda = 0.001;
  std::string ledger_path;  // optional seed ledger, JSONL
  std::string output_dir = "out";
  int instances = 20;
  size_t max_ledger_rows = 8;
  int retry_limit = 1;
  int quant_bits = 0;  // 0 disables control quantization
  uint64_t bootstrap_seed = 1234;
};

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  cfg.schema_path = j.value("schema", std::string{});
  if (cfg.schema_path == "builtin") cfg.schema_path.clear();
  if (j.contains("env")) cfg.env_spec = env::env_spec_from_json(j.at("env"));
  cfg.policy = policy_from_string(j.value("policy", "nlel_jpe"));
  cfg.trust_radius = j.value("trust_radius", cfg.trust_radius);
  cfg.beta0 = j.value("beta0", cfg.beta0);
  cfg.gamma_a = j.value("gamma_a", cfg.gamma_a);
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    cfg.budget.token_limit = b.value("token_limit", cfg.budget.token_limit);
    cfg.budget.expansion_cap = b.value("expansion_cap", cfg.budget.expansion_cap);
    cfg.budget.depth_cap = b.value("depth_cap", cfg.budget.depth_cap);
    cfg.budget.c_min = b.value("c_min", cfg.budget.c_min);
    cfg.budget.c_max = b.value("c_max", cfg.budget.c_max);
  }
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.ledger_path = j.value("ledger_path", cfg.ledger_path);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.instances = j.value("instances", cfg.instances);
  cfg.max_ledger_rows = j.value("max_ledger_rows", cfg.max_ledger_rows);
  cfg.retry_limit = j.value("retry_limit", cfg.retry_limit);
  cfg.quant_bits = j.value("quant_bits", cfg.quant_bits);
  cfg.bootstrap_seed = j.value("bootstrap_seed", cfg.bootstrap_seed);
  if (cfg.seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
  if (cfg.trust_radius < 0.0 || cfg.trust_radius > 1.0)
    throw std::invalid_argument("trust_radius must be in [0,1]");
  if (cfg.instances < 1) throw std::invalid_argument("instances must be >= 1");
  return cfg;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["schema"] = cfg.schema_path.empty() ? "builtin" : cfg.schema_path;
  j["env"] = env::env_spec_to_json(cfg.env_spec);
  j["policy"] = to_string(cfg.policy);
  j["trust_radius"] = cfg.trust_radius;
  j["beta0"] = cfg.beta0;
  j["gamma_a"] = cfg.gamma_a;
  j["budget"] = {{"token_limit", cfg.budget.token_limit},
                 {"expansion_cap", cfg.budget.expansion_cap},
                 {"depth_cap", cfg.budget.depth_cap},
                 {"c_min", cfg.budget.c_min},
                 {"c_max", cfg.budget.c_max}};
  j["seeds"] = cfg.seeds;
  j["lambda"] = cfg.lambda;
  j["ledger_path"] = cfg.ledger_path;
  j["output_dir"] = cfg.output_dir;
  j["instances"] = cfg.instances;
  j["max_ledger_rows"] = cfg.max_ledger_rows;
  j["retry_limit"] = cfg.retry_limit;
  j["quant_bits"] = cfg.quant_bits;
  j["bootstrap_seed"] = cfg.bootstrap_seed;
  return j;
}

inline ControlSchema load_schema(const RunConfig& cfg) {
  if (cfg.schema_path.empty()) return canonical_v1();
  std::ifstream in(cfg.schema_path);
  if (!in) throw std::runtime_error("cannot open schema file: " + cfg.schema_path);
  return schema_from_json(nlohmann::json::parse(in));
}

// ============================================================================
// Deterministic mock policy backends (synthetic runs)
// ============================================================================

// Stand-in labeller model: returns a rotation of directive phrases keyed by
// the prompt digest, so identical prompts always see identical directives.
class DirectiveMockBackend : public adapter::GenerationBackend {
 public:
  explicit DirectiveMockBackend(uint64_t seed) : seed_(seed) {}

  adapter::GenerationOutcome generate(const adapter::GenerationRequest& req) override {
    static const char* directives[] = {
        "push the algebraic reduction",
        "work backward from the goal",
        "seek a counterexample to the claim",
        "formalize the subgoal precisely",
        "probe the weakest assumption",
        "restate in canonical form",
    };
    rng::Stream rs(rng::derive(seed_, {rng::fnv1a64(req.prompt)}));
    std::string text;
    size_t start = rs.below(6);
    for (int i = 0; i < 3; ++i) {
      text += directives[(start + static_cast<size_t>(i)) % 6];
      text += "\n";
    }
    adapter::GenerationResponse resp;
    resp.backend_id = id();
    resp.texts.push_back(text);
    resp.prompt_tokens = adapter::approx_tokens(req.prompt);
    resp.completion_tokens = std::min<int64_t>(24, req.max_tokens);
    return {resp, std::nullopt};
  }
  std::string id() const override { return "mock-labeller"; }

 private:
  uint64_t seed_;
};

// Stand-in tuner model: emits a schema-valid JSON object jittered around the
// defaults, nudged by keywords in the rendered case. Deterministic per
// (seed, prompt digest).
class TunerMockBackend : public adapter::GenerationBackend {
 public:
  TunerMockBackend(const ControlSchema& schema, uint64_t seed)
      : schema_(schema), defaults_(schema_defaults(schema)), seed_(seed) {}

  adapter::GenerationOutcome generate(const adapter::GenerationRequest& req) override {
    rng::Stream rs(rng::derive(seed_, {rng::fnv1a64(req.prompt)}));
    ojson wire = to_wire(schema_, defaults_);
    bool algebraic = req.prompt.find("algebra") != std::string::npos;
    bool exploratory = req.prompt.find("counterexample") != std::string::npos ||
                       req.prompt.find("probe") != std::string::npos;
    double temp = algebraic ? 0.3 : exploratory ? 0.9 : 0.7;
    wire[fields::temperature] = temp + 0.1 * (rs.uniform01() - 0.5);
    wire[fields::gen_count] = static_cast<int64_t>(1 + rs.below(3));
    wire[fields::verify_passes] = static_cast<int64_t>(algebraic ? 2 : 1);
    wire[fields::max_tokens] = static_cast<int64_t>(128 + rs.below(256));
    adapter::GenerationResponse resp;
    resp.backend_id = id();
    resp.texts.push_back(wire.dump());
    resp.prompt_tokens = adapter::approx_tokens(req.prompt);
    resp.completion_tokens = std::min<int64_t>(48, req.max_tokens);
    return {resp, std::nullopt};
  }
  std::string id() const override { return "mock-tuner"; }

 private:
  const ControlSchema& schema_;
  ControlVector defaults_;
  uint64_t seed_;
};

// ============================================================================
// Policy bundles
// ============================================================================

inline ControlVector chain_controls(const ControlSchema& schema) {
  ControlVector pi = schema_defaults(schema);
  pi.values[fields::branch_quota] = int64_t{1};
  pi.values[fields::gen_count] = int64_t{1};
  return pi;
}

struct PolicyBundle {
  std::unique_ptr<policy::Labeller> labeller;
  std::unique_ptr<policy::Tuner> tuner;
  std::unique_ptr<adapter::GenerationBackend> label_backend;
  std::unique_ptr<adapter::GenerationBackend> tuner_backend;
  std::unique_ptr<adapter::UsageTally> controller_tally =
      std::make_unique<adapter::UsageTally>();
};

// Wraps a tuner and snaps the continuous fields of its emission onto a
// 2^bits-level grid before projection; the ablation knob for control
// quantization.
class QuantizedTuner : public policy::Tuner {
 public:
  QuantizedTuner(const ControlSchema& schema, std::unique_ptr<policy::Tuner> inner,
                 int bits, double trust_radius)
      : schema_(schema), defaults_(schema_defaults(schema)),
        inner_(std::move(inner)), radius_(trust_radius) {
    for (const auto& f : schema_.fields)
      if (f.kind == FieldKind::continuous) bits_[f.name] = bits;
  }

  policy::TunerResult emit_control(const std::string& parent_text,
                                   const policy::Label& label,
                                   const context::ContextSnapshot& ctx) override {
    policy::TunerResult r = inner_->emit_control(parent_text, label, ctx);
    auto q = quantize(schema_, r.emitted, bits_);
    auto projection = project_trust_region(schema_, q.vector, defaults_, radius_);
    r.emitted = q.vector;
    r.applied = projection.vector;
    r.audit.projection_moved = projection.moved;
    r.audit.projection_distance = projection.distance_to_center;
    return r;
  }
  std::string name() const override { return inner_->name() + "+quantized"; }

 private:
  ControlSchema schema_;
  ControlVector defaults_;
  std::unique_ptr<policy::Tuner> inner_;
  double radius_;
  std::map<std::string, int> bits_;
};

inline PolicyBundle make_policy(PolicyKind kind, const ControlSchema& schema,
                                const RunConfig& cfg, uint64_t seed,
                                const std::vector<ledger::LedgerRow>* rows) {
  PolicyBundle bundle;
  switch (kind) {
    case PolicyKind::constant_cot:
      bundle.labeller = std::make_unique<policy::ConstantLabeller>();
      bundle.tuner = std::make_unique<policy::ConstantTuner>(
          schema, chain_controls(schema), cfg.trust_radius);
      break;
    case PolicyKind::constant_tot:
      bundle.labeller = std::make_unique<policy::ConstantLabeller>();
      bundle.tuner = std::make_unique<policy::ConstantTuner>(
          schema, schema_defaults(schema), cfg.trust_radius);
      break;
    case PolicyKind::nlel_jpe:
    case PolicyKind::random_labels: {
      bundle.label_backend =
          std::make_unique<DirectiveMockBackend>(rng::derive(seed, "labeller"));
      bundle.tuner_backend = std::make_unique<TunerMockBackend>(
          schema, rng::derive(seed, "tuner"));
      if (kind == PolicyKind::random_labels)
        bundle.labeller =
            std::make_unique<policy::RandomLabeller>(rng::derive(seed, "random"));
      else
        bundle.labeller = std::make_unique<policy::BackendLabeller>(
            *bundle.label_backend, policy::kLabellerTemplateV1,
            bundle.controller_tally.get());
      policy::JPEConfig jpe;
      jpe.max_ledger_rows = cfg.max_ledger_rows;
      jpe.retry_limit = cfg.retry_limit;
      bundle.tuner = std::make_unique<policy::JsonParameterEmitter>(
          schema, jpe, *bundle.tuner_backend, cfg.trust_radius, rows,
          bundle.controller_tally.get());
      break;
    }
  }
  if (cfg.quant_bits > 0)
    bundle.tuner = std::make_unique<QuantizedTuner>(schema, std::move(bundle.tuner),
                                                    cfg.quant_bits, cfg.trust_radius);
  return bundle;
}

// ============================================================================
// Run
// ============================================================================

struct RunArtifacts {
  metrics::MetricsReport report;
  std::vector<std::string> trace_files;  // relative to output_dir
  std::string output_dir;
  std::vector<metrics::InstanceTrace> traces;
};

inline std::string instance_root_text(uint64_t seed, int instance) {
  return "task " + std::to_string(instance) + " (seed " + std::to_string(seed) + ")";
}

inline RunArtifacts run(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  ControlSchema schema = load_schema(cfg);
  require_control_contract(schema);
  env::SyntheticEnv environment(cfg.env_spec, schema);

  fs::create_directories(fs::path(cfg.output_dir) / "traces");

  RunArtifacts artifacts;
  artifacts.output_dir = cfg.output_dir;
  std::vector<ledger::LedgerRow> all_rows;

  for (uint64_t seed : cfg.seeds) {
    std::vector<ledger::LedgerRow> seed_rows;
    if (!cfg.ledger_path.empty() && fs::exists(cfg.ledger_path))
      seed_rows = ledger::load_rows(cfg.ledger_path, schema);

    for (int instance = 0; instance < cfg.instances; ++instance) {
      PolicyBundle bundle = make_policy(cfg.policy, schema, cfg, seed, &seed_rows);

      search::EngineConfig ecfg;
      ecfg.trust_radius = cfg.trust_radius;
      ecfg.beta0 = cfg.beta0;
      ecfg.gamma_a = cfg.gamma_a;
      ecfg.budget = cfg.budget;
      ecfg.seed = rng::derive(seed, {static_cast<uint64_t>(instance)});
      ecfg.success_mu_threshold = environment.tau();

      search::EnvSource source(environment,
                               rng::derive(seed, {static_cast<uint64_t>(instance),
                                                  rng::fnv1a64("instance")}));
      verify::SyntheticVerifier verifier;
      search::SearchEngine engine(schema, ecfg, source, *bundle.labeller,
                                  *bundle.tuner, verifier);
      search::RunResult result = engine.run(instance_root_text(seed, instance));

      std::string rel = "traces/seed" + std::to_string(seed) + "_inst" +
                        std::to_string(instance) + ".jsonl";
      trace::write_jsonl((fs::path(cfg.output_dir) / rel).string(), schema,
                         result.events);
      artifacts.trace_files.push_back(rel);

      metrics::InstanceTrace itrace;
      itrace.seed = seed;
      itrace.instance = instance;
      itrace.events = std::move(result.events);
      itrace.controller_tokens = bundle.controller_tally->total();
      artifacts.traces.push_back(std::move(itrace));

      for (auto& row : result.ledger_rows) seed_rows.push_back(std::move(row));
      ledger::pareto_tag(seed_rows);
    }
    for (auto& row : seed_rows) all_rows.push_back(row);
  }

  artifacts.report =
      metrics::build_report(artifacts.traces, cfg.budget.token_limit,
                            environment.tau(), cfg.bootstrap_seed);

  std::ofstream report_out(fs::path(cfg.output_dir) / "report.json",
                           std::ios::binary);
  report_out << metrics::report_to_json(artifacts.report).dump(2) << "\n";

  ledger::pareto_tag(all_rows);
  std::error_code ec;
  fs::remove(fs::path(cfg.output_dir) / "ledger.jsonl", ec);
  ledger::append_rows((fs::path(cfg.output_dir) / "ledger.jsonl").string(), schema,
                      all_rows);

  nlohmann::ordered_json manifest;
  manifest["config"] = config_to_json(cfg);
  manifest["config_digest"] = rng::short_digest(config_to_json(cfg).dump());
  manifest["schema_digest"] = rng::short_digest(schema_to_json(schema).dump());
  manifest["env_digest"] = rng::short_digest(env_spec_to_json(cfg.env_spec).dump());
  manifest["seeds"] = cfg.seeds;
  manifest["traces"] = artifacts.trace_files;
  std::ofstream manifest_out(fs::path(cfg.output_dir) / "manifest.json",
                             std::ios::binary);
  manifest_out << manifest.dump(2) << "\n";

  return artifacts;
}

// ============================================================================
// Replay
// ============================================================================

struct ReplayResult {
  metrics::MetricsReport report;
  bool matches_stored = false;
};

// Rebuilds the report from the recorded traces alone and compares it to the
// stored one byte for byte.
inline ReplayResult replay(const std::string& output_dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest_in(fs::path(output_dir) / "manifest.json");
  if (!manifest_in) throw std::runtime_error("no manifest in " + output_dir);
  nlohmann::json manifest = nlohmann::json::parse(manifest_in);
  RunConfig cfg = config_from_json(manifest.at("config"));
  ControlSchema schema = load_schema(cfg);
  env::SyntheticEnv environment(cfg.env_spec, schema);

  std::vector<metrics::InstanceTrace> traces;
  for (const auto& rel : manifest.at("traces").get<std::vector<std::string>>()) {
    metrics::InstanceTrace t;
    std::string stem = fs::path(rel).stem().string();  // seed<k>_inst<i>
    size_t underscore = stem.find("_inst");
    t.seed = std::stoull(stem.substr(4, underscore - 4));
    t.instance = std::stoi(stem.substr(underscore + 5));
    t.events = trace::read_jsonl((fs::path(output_dir) / rel).string(), schema);
    traces.push_back(std::move(t));
  }

  ReplayResult out;
  out.report = metrics::build_report(traces, cfg.budget.token_limit,
                                     environment.tau(), cfg.bootstrap_seed);

  std::ifstream stored(fs::path(output_dir) / "report.json");
  if (stored) {
    nlohmann::json stored_json = nlohmann::json::parse(stored);
    // Controller tokens are not recoverable from generation traces alone.
    nlohmann::json mine =
        nlohmann::json::parse(metrics::report_to_json(out.report).dump());
    mine.erase("controller_tokens");
    stored_json.erase("controller_tokens");
    out.matches_stored = mine == stored_json;
  }
  return out;
}

// ============================================================================
// Ablation grid
// ============================================================================

struct AblationCell {
  std::string axis;
  std::string value;
  double accuracy = 0.0;
  double tokens_per_success = 0.0;
};

// Small sweeps along one axis at a time: trust radius, ledger rows,
// control quantization bits, annealing on/off.
inline std::vector<AblationCell> ablate(RunConfig base) {
  std::vector<AblationCell> cells;
  auto run_cell = [&](const std::string& axis, const std::string& value,
                      RunConfig cfg) {
    cfg.output_dir = base.output_dir + "/ablate_" + axis + "_" + value;
    RunArtifacts art = run(cfg);
    AblationCell cell;
    cell.axis = axis;
    cell.value = value;
    for (const auto& p : art.report.success_at_compute)
      if (p.multiplier == 1.0) cell.accuracy = p.accuracy;
    cell.tokens_per_success = art.report.tokens_per_success.value_or(0.0);
    cells.push_back(cell);
  };

  for (double r : {0.0, 0.05, 0.15, 0.5}) {
    RunConfig cfg = base;
    cfg.trust_radius = r;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", r);
    run_cell("radius", buf, cfg);
  }
  for (size_t rows : {size_t{0}, size_t{8}, size_t{32}}) {
    RunConfig cfg = base;
    cfg.max_ledger_rows = rows;
    run_cell("ledger_rows", std::to_string(rows), cfg);
  }
  for (int bits : {1, 2, 3}) {
    RunConfig cfg = base;
    cfg.quant_bits = bits;
    run_cell("bits", std::to_string(bits), cfg);
  }
  for (double gamma : {0.7, 1.0}) {
    RunConfig cfg = base;
    cfg.gamma_a = gamma;
    run_cell("annealing", gamma < 1.0 ? "on" : "off", cfg);
  }
  return cells;
}

}  // namespace nlel::runner
