#pragma once

// The reasoning tree and its expansion loop.
//
// One expansion runs four steps: emit labels for the parent, generate a
// candidate bundle per label under that label's tuned controls, pool every
// bundle through one top-k selection, then update frontier, counters and
// label history. Candidates that fail verification drop out of the pool
// before selection but stay in the trace.
//
// Determinism: nodes are numbered in generation order, the frontier is
// expanded in id order, and every stochastic draw derives its seed from
// (run seed, node id, label index), so a fixed configuration replays to a
// byte-identical trace.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nlel/context.hpp"
#include "nlel/control_schema.hpp"
#include "nlel/lm_adapter.hpp"
#include "nlel/ledger.hpp"
#include "nlel/policies.hpp"
#include "nlel/rng.hpp"
#include "nlel/synthetic_env.hpp"
#include "nlel/trace.hpp"
#include "nlel/verification.hpp"

namespace nlel::search {

// ============================================================================
// Selection primitives
// ============================================================================

inline double score(double mu, double sigma, double beta) {
  return mu + beta * sigma;
}

// Geometric depth annealing; gamma_a = 1 disables it.
inline double anneal_beta(double beta0, int depth, double gamma_a) {
  if (beta0 < 0.0) throw std::invalid_argument("beta0 must be >= 0");
  if (gamma_a <= 0.0 || gamma_a > 1.0)
    throw std::invalid_argument("annealing factor must be in (0,1]");
  double beta = beta0;
  for (int d = 0; d < depth; ++d) beta *= gamma_a;
  return beta;
}

struct ScoredCandidate {
  uint64_t id = 0;
  double mu = 0.0;
  double sigma = 0.0;
};

// Keeps the k highest by S = mu + beta * sigma, ties broken by ascending id.
// Returned in descending S order; fewer than k candidates all survive.
inline std::vector<ScoredCandidate> select_topk(std::vector<ScoredCandidate> candidates,
                                                size_t k, double beta) {
  if (k < 1) throw std::invalid_argument("retention size must be >= 1");
  std::stable_sort(candidates.begin(), candidates.end(),
                   [beta](const ScoredCandidate& a, const ScoredCandidate& b) {
                     double sa = score(a.mu, a.sigma, beta);
                     double sb = score(b.mu, b.sigma, beta);
                     if (sa != sb) return sa > sb;
                     return a.id < b.id;
                   });
  if (candidates.size() > k) candidates.resize(k);
  return candidates;
}

// ============================================================================
// Compute accounting
// ============================================================================

// Candidates generated by a full tree walk with per-depth branch quotas b_d
// and bundle sizes g_d: sum over depths of (nodes at depth d) * b_d * g_d.
inline int64_t expansion_bound(std::span<const int64_t> branch_quotas,
                               std::span<const int64_t> bundle_sizes) {
  if (branch_quotas.size() != bundle_sizes.size())
    throw std::invalid_argument("quota and bundle schedules must align");
  int64_t total = 0;
  int64_t nodes_at_depth = 1;
  for (size_t d = 0; d < branch_quotas.size(); ++d) {
    if (branch_quotas[d] < 1 || bundle_sizes[d] < 1)
      throw std::invalid_argument("quotas and bundle sizes must be >= 1");
    total += nodes_at_depth * branch_quotas[d] * bundle_sizes[d];
    nodes_at_depth *= branch_quotas[d];
  }
  return total;
}

// Per-candidate costs clamp into [c_min, c_max], so a run generating
// `bound` candidates spends inside this envelope.
inline std::pair<double, double> total_compute_envelope(int64_t bound, double c_min,
                                                        double c_max) {
  if (bound < 0) throw std::invalid_argument("bound must be >= 0");
  if (c_min > c_max) throw std::invalid_argument("c_min must be <= c_max");
  return {c_min * static_cast<double>(bound), c_max * static_cast<double>(bound)};
}

// Largest integer value a field can take inside the trust region, after
// rounding toward the defaults. Used to build worst-case schedules.
inline int64_t max_int_within_radius(const ControlSchema& schema,
                                     std::string_view field_name, double radius) {
  const FieldSpec* f = schema.find(field_name);
  if (!f || f->kind != FieldKind::integer)
    throw std::invalid_argument("not an integer field: " + std::string(field_name));
  ControlVector defaults = schema_defaults(schema);
  int64_t d0 = std::get<int64_t>(defaults.values.at(f->name));
  double span = f->upper - f->lower;
  double x0 = (static_cast<double>(d0) - f->lower) / span;
  double hi = std::min(1.0, x0 + radius);
  int64_t v = static_cast<int64_t>(std::floor(f->lower + hi * span + 1e-9));
  return std::clamp(v, d0, static_cast<int64_t>(f->upper));
}

// ============================================================================
// Tree types
// ============================================================================

enum class NodeStatus { frontier, expanded, pruned, terminal };

struct Node {
  uint64_t id = 0;
  uint64_t parent_id = 0;
  std::string text;
  int depth = 0;
  double mu = 0.0;
  double sigma = 0.0;
  NodeStatus status = NodeStatus::frontier;
  int64_t incoming_quota = 1;  // branch quota of the applied controls on the way in
};

struct Edge {
  uint64_t parent_id = 0;
  uint64_t child_id = 0;
  std::string label;
  ControlVector pi_emitted;
  ControlVector pi_applied;
  int64_t tokens_spent = 0;
};

struct RunBudget {
  int64_t token_limit = 4000;
  int expansion_cap = 64;
  int depth_cap = 3;
  double c_min = 10.0;
  double c_max = 50.0;
};

// ============================================================================
// Candidate sources
// ============================================================================

struct GeneratedCandidate {
  std::string text;
  double mu = 0.0;
  double sigma = 0.0;
  bool truth_correct = false;
};

struct BundleResult {
  std::vector<GeneratedCandidate> candidates;
  int64_t prompt_tokens = 0;
  int64_t completion_tokens = 0;
  int64_t tooling_tokens = 0;
  int64_t retrieval_calls = 0;
  double cost_per_candidate = 0.0;
  bool failed = false;
  std::string failure_reason;

  int64_t total_tokens() const {
    return prompt_tokens + completion_tokens + tooling_tokens;
  }
};

class CandidateSource {
 public:
  virtual ~CandidateSource() = default;
  virtual BundleResult generate_bundle(const Node& parent, const std::string& label,
                                       const ControlVector& applied, int count,
                                       uint64_t bundle_seed) = 0;
};

// Synthetic world source. The environment state is a function of the parent
// node, shared across that parent's labels.
class EnvSource : public CandidateSource {
 public:
  EnvSource(const env::SyntheticEnv& environment, uint64_t instance_key)
      : env_(environment), instance_key_(instance_key) {}

  uint64_t state_key(const Node& parent) const {
    return rng::derive(instance_key_, {parent.id, rng::fnv1a64("env-state")});
  }

  BundleResult generate_bundle(const Node& parent, const std::string& label,
                               const ControlVector& applied, int count,
                               uint64_t) override {
    BundleResult out;
    auto cands = env_.gen_bundle(label, applied, count, state_key(parent));
    for (auto& c : cands)
      out.candidates.push_back({std::move(c.text), c.mu, c.sigma, c.truth_correct});
    out.prompt_tokens = adapter::approx_tokens(parent.text);
    out.completion_tokens =
        static_cast<int64_t>(count) * int_at(applied, fields::max_tokens);
    out.cost_per_candidate = env_.candidate_cost(applied);
    return out;
  }

  const env::SyntheticEnv& environment() const { return env_; }

 private:
  const env::SyntheticEnv& env_;
  uint64_t instance_key_;
};

// LM-adapter source: child texts come from a generation backend, value and
// uncertainty from an injected oracle, retrieval snippets are prepended to
// the child prompt when the mixture carries mass.
class AdapterSource : public CandidateSource {
 public:
  using ValueOracle =
      std::function<std::pair<double, double>(std::string_view text, int depth,
                                              uint64_t seed)>;

  AdapterSource(adapter::GenerationBackend& backend,
                adapter::RetrievalBackend* retrieval = nullptr,
                ValueOracle value_oracle = default_value_oracle(),
                double success_threshold = 0.7,
                int64_t tooling_tokens_per_call = 5,
                adapter::UsageTally* tally = nullptr)
      : backend_(backend), retrieval_(retrieval),
        value_oracle_(std::move(value_oracle)),
        success_threshold_(success_threshold),
        tooling_tokens_per_call_(tooling_tokens_per_call), tally_(tally) {}

  static ValueOracle default_value_oracle() {
    return [](std::string_view text, int depth, uint64_t) {
      rng::Stream rs(rng::fnv1a64(text) ^ static_cast<uint64_t>(depth));
      return std::make_pair(0.3 + 0.5 * rs.uniform01(), 0.05 + 0.15 * rs.uniform01());
    };
  }

  BundleResult generate_bundle(const Node& parent, const std::string& label,
                               const ControlVector& applied, int count,
                               uint64_t bundle_seed) override {
    BundleResult out;
    std::string prompt = parent.text + "\nDIRECTIVE: " + label + "\n";
    if (retrieval_) {
      auto fetched = adapter::run_retrieval(*retrieval_, applied, parent.text);
      out.retrieval_calls = fetched.calls;
      out.tooling_tokens = fetched.calls * tooling_tokens_per_call_;
      if (!fetched.rendered.empty()) prompt += fetched.rendered;
    }
    auto outcome =
        backend_.generate(adapter::request_from_controls(prompt, applied, count));
    if (!outcome.ok()) {
      out.failed = true;
      out.failure_reason = adapter::to_string(outcome.error->kind);
      return out;
    }
    if (tally_) tally_->record(*outcome.response);
    out.prompt_tokens = outcome.response->prompt_tokens;
    out.completion_tokens = outcome.response->completion_tokens;
    for (size_t i = 0; i < outcome.response->texts.size(); ++i) {
      const std::string& text = outcome.response->texts[i];
      auto [mu, sigma] =
          value_oracle_(text, parent.depth + 1, rng::derive(bundle_seed, {i}));
      out.candidates.push_back({text, mu, sigma, mu >= success_threshold_});
    }
    out.cost_per_candidate =
        out.candidates.empty()
            ? 0.0
            : static_cast<double>(out.total_tokens()) /
                  static_cast<double>(out.candidates.size());
    return out;
  }

 private:
  adapter::GenerationBackend& backend_;
  adapter::RetrievalBackend* retrieval_;
  ValueOracle value_oracle_;
  double success_threshold_;
  int64_t tooling_tokens_per_call_;
  adapter::UsageTally* tally_;
};

// ============================================================================
// Engine
// ============================================================================

struct EngineConfig {
  double trust_radius = 0.15;
  double beta0 = 0.3;
  double gamma_a = 0.7;
  RunBudget budget;
  uint64_t seed = 1;
  size_t label_window = context::kDefaultLabelWindow;
  verify::IndependenceMode verify_mode = verify::IndependenceMode::independent;
  double success_mu_threshold = 0.7;  // a candidate counts as solved above this
};

struct RunResult {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<trace::TraceEvent> events;
  std::vector<ledger::LedgerRow> ledger_rows;

  uint64_t answer_id = 0;
  double answer_mu = 0.0;
  bool answer_is_terminal = false;

  int expansions = 0;
  int64_t candidates_generated = 0;
  int64_t tokens_used = 0;
  double total_cost_units = 0.0;
  context::BudgetCounters counters;
};

class SearchEngine {
 public:
  SearchEngine(const ControlSchema& schema, EngineConfig config,
               CandidateSource& source, policy::Labeller& labeller,
               policy::Tuner& tuner, verify::VerifierBackend& verifier)
      : schema_(schema), defaults_(schema_defaults(schema)), config_(config),
        source_(source), labeller_(labeller), tuner_(tuner), verifier_(verifier) {
    require_control_contract(schema_);
  }

  RunResult run(const std::string& root_text) {
    RunResult result;
    result.counters.token_budget = config_.budget.token_limit;

    Node root;
    root.id = 0;
    root.text = root_text;
    root.status = NodeStatus::frontier;
    root.incoming_quota = int_at(defaults_, fields::branch_quota);
    result.nodes.push_back(root);

    std::deque<size_t> frontier{0};
    std::vector<std::string> label_history;
    uint64_t next_id = 1;
    uint64_t seq = 0;

    while (!frontier.empty() && result.expansions < config_.budget.expansion_cap) {
      size_t parent_index = frontier.front();
      frontier.pop_front();
      expand_parent(result, frontier, label_history, parent_index, next_id, seq);
      result.expansions += 1;
    }

    finalize_answer(result);
    return result;
  }

 private:
  context::ContextSnapshot snapshot_for(const RunResult& result,
                                        const std::deque<size_t>& frontier,
                                        std::span<const std::string> history,
                                        const Node& parent) const {
    std::vector<context::CandidateView> frontier_views;
    for (size_t idx : frontier) {
      const Node& n = result.nodes[idx];
      frontier_views.push_back({n.text, n.mu, n.sigma});
    }
    std::vector<context::CandidateView> sibling_views;
    if (parent.id != 0) {
      for (const Node& n : result.nodes)
        if (n.id != parent.id && n.depth == parent.depth &&
            n.parent_id == parent.parent_id)
          sibling_views.push_back({n.text, n.mu, n.sigma});
    }
    return context::summarize(frontier_views, sibling_views, history,
                              result.counters, parent.depth, config_.label_window);
  }

  void expand_parent(RunResult& result, std::deque<size_t>& frontier,
                     std::vector<std::string>& label_history, size_t parent_index,
                     uint64_t& next_id, uint64_t& seq) {
    // Copy: growing result.nodes below would invalidate a reference.
    const Node parent = result.nodes[parent_index];
    const int quota = static_cast<int>(parent.incoming_quota);
    context::ContextSnapshot ctx =
        snapshot_for(result, frontier, label_history, parent);

    trace::TraceEvent event;
    event.seq = seq++;
    event.parent_id = parent.id;
    event.context = ctx;
    event.beta_used = anneal_beta(config_.beta0, parent.depth + 1, config_.gamma_a);

    std::vector<policy::Label> labels =
        policy::emit_labels(labeller_, parent.text, ctx, quota);

    struct PoolEntry {
      ScoredCandidate scored;
      size_t candidate_index;  // into event.candidates
      GeneratedCandidate generated;
      size_t label_index;
    };
    std::vector<PoolEntry> pool;
    std::vector<int64_t> label_tokens(labels.size(), 0);

    for (size_t li = 0; li < labels.size(); ++li) {
      const policy::Label& label = labels[li];
      event.labels.push_back(label.text);

      if (label.is_stop) {
        ControlVector clamped = defaults_;
        clamped.provenance = ctx.budget_exhausted ? Provenance::clamped_budget
                                                  : Provenance::defaults;
        event.pi_emitted.push_back(clamped);
        event.pi_applied.push_back(clamped);
        continue;
      }

      policy::TunerResult tuned = tuner_.emit_control(parent.text, label, ctx);
      event.pi_emitted.push_back(tuned.emitted);
      event.pi_applied.push_back(tuned.applied);

      int bundle_size = static_cast<int>(int_at(tuned.applied, fields::gen_count));
      uint64_t bundle_seed =
          rng::derive(config_.seed, {rng::fnv1a64("bundle"), parent.id, li});
      BundleResult bundle =
          source_.generate_bundle(parent, label.text, tuned.applied, bundle_size,
                                  bundle_seed);
      if (bundle.failed) {
        event.failures.push_back(label.text + ": " + bundle.failure_reason);
        continue;
      }

      event.tokens += bundle.total_tokens();
      label_tokens[li] = bundle.total_tokens();
      result.counters.retrieval_calls += bundle.retrieval_calls;
      result.total_cost_units +=
          bundle.cost_per_candidate * static_cast<double>(bundle.candidates.size());

      verify::VerifierConfig vcfg;
      vcfg.passes = static_cast<int>(int_at(tuned.applied, fields::verify_passes));
      vcfg.strictness = number_at(tuned.applied, fields::verify_strictness);
      vcfg.mode = config_.verify_mode;

      for (const GeneratedCandidate& cand : bundle.candidates) {
        uint64_t id = next_id++;
        result.candidates_generated += 1;
        verify::VerifyResult verdict = verify::run_passes(
            cand.text, cand.truth_correct, vcfg, verifier_,
            rng::derive(config_.seed, {rng::fnv1a64("verify"), id}));
        if (verdict.accepted) result.counters.verify_accepts += 1;
        else result.counters.verify_rejects += 1;

        trace::CandidateRecord rec;
        rec.id = id;
        rec.text = cand.text;
        rec.mu = cand.mu;
        rec.sigma = cand.sigma;
        rec.score = score(cand.mu, cand.sigma, event.beta_used);
        rec.verified = verdict.accepted;
        rec.label_index = li;
        event.candidates.push_back(rec);
        if (verdict.accepted)
          pool.push_back({{id, cand.mu, cand.sigma}, event.candidates.size() - 1,
                          cand, li});
      }
    }

    // One ToT culling pass over the union of all bundles.
    std::vector<ScoredCandidate> scored;
    scored.reserve(pool.size());
    for (const auto& p : pool) scored.push_back(p.scored);
    std::vector<ScoredCandidate> survivors =
        select_topk(std::move(scored), static_cast<size_t>(quota), event.beta_used);
    for (const auto& s : survivors) event.survivors.push_back(s.id);

    std::vector<uint64_t> survivor_ids = event.survivors;
    std::sort(survivor_ids.begin(), survivor_ids.end());
    for (uint64_t id : survivor_ids) {
      const PoolEntry* entry = nullptr;
      for (const auto& p : pool)
        if (p.scored.id == id) entry = &p;
      Node child;
      child.id = id;
      child.parent_id = parent.id;
      child.text = entry->generated.text;
      child.depth = parent.depth + 1;
      child.mu = entry->generated.mu;
      child.sigma = entry->generated.sigma;
      child.incoming_quota =
          int_at(event.pi_applied[entry->label_index], fields::branch_quota);
      child.status = child.depth >= config_.budget.depth_cap ? NodeStatus::terminal
                                                             : NodeStatus::frontier;
      if (child.status == NodeStatus::frontier)
        frontier.push_back(result.nodes.size());
      result.nodes.push_back(child);

      Edge edge;
      edge.parent_id = parent.id;
      edge.child_id = id;
      edge.label = labels[entry->label_index].text;
      edge.pi_emitted = event.pi_emitted[entry->label_index];
      edge.pi_applied = event.pi_applied[entry->label_index];
      edge.tokens_spent = label_tokens[entry->label_index];
      result.edges.push_back(edge);
    }

    result.nodes[parent_index].status =
        event.survivors.empty() ? NodeStatus::terminal : NodeStatus::expanded;

    // Step 4: state update.
    for (const auto& label : labels) label_history.push_back(label.text);
    result.counters.tokens_used += event.tokens;
    result.tokens_used += event.tokens;
    append_ledger_rows(result, parent, labels, event, label_tokens);
    result.events.push_back(std::move(event));
  }

  void append_ledger_rows(RunResult& result, const Node& parent,
                          const std::vector<policy::Label>& labels,
                          const trace::TraceEvent& event,
                          const std::vector<int64_t>& label_tokens) {
    for (size_t li = 0; li < labels.size(); ++li) {
      if (labels[li].is_stop || li >= event.pi_applied.size()) continue;
      ledger::LedgerRow row;
      row.parent_digest = ledger::parent_digest(parent.text);
      row.label_text = labels[li].text;
      row.context = event.context;
      row.pi_applied = event.pi_applied[li];
      row.cost_tokens = label_tokens[li];
      bool any = false;
      for (const auto& c : event.candidates) {
        if (c.label_index != li) continue;
        if (c.verified) {
          row.verify_record.accepts += 1;
          row.outcome_S = any ? std::max(row.outcome_S, c.score) : c.score;
          any = true;
          row.success = row.success || c.mu >= config_.success_mu_threshold;
        } else {
          row.verify_record.rejects += 1;
        }
      }
      result.ledger_rows.push_back(std::move(row));
    }
  }

  void finalize_answer(RunResult& result) {
    const Node* best_terminal = nullptr;
    const Node* best_any = nullptr;
    for (const Node& n : result.nodes) {
      if (n.id == 0) continue;
      if (n.status == NodeStatus::terminal &&
          (!best_terminal || n.mu > best_terminal->mu))
        best_terminal = &n;
      if (!best_any || n.mu > best_any->mu) best_any = &n;
    }
    const Node* answer = best_terminal ? best_terminal : best_any;
    if (!answer) answer = &result.nodes.front();
    result.answer_id = answer->id;
    result.answer_mu = answer->mu;
    result.answer_is_terminal = best_terminal != nullptr;
  }

  const ControlSchema& schema_;
  ControlVector defaults_;
  EngineConfig config_;
  CandidateSource& source_;
  policy::Labeller& labeller_;
  policy::Tuner& tuner_;
  verify::VerifierBackend& verifier_;
};

}  // namespace nlel::search
