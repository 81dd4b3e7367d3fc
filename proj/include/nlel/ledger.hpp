#pragma once

// Historical record of (parent, label, context) -> control mappings with
// outcomes. Rows are tagged Pareto or dominated to provide contrastive
// signal inside tuner prompts; the ledger objective J and the carve-out
// decision rule live here too.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlel/context.hpp"
#include "nlel/control_schema.hpp"
#include "nlel/rng.hpp"

namespace nlel::ledger {

// ============================================================================
// Rows
// ============================================================================

enum class ParetoTag { untagged, pareto, dominated };

inline const char* to_string(ParetoTag t) {
  switch (t) {
    case ParetoTag::untagged: return "UNTAGGED";
    case ParetoTag::pareto: return "PARETO";
    case ParetoTag::dominated: return "DOMINATED";
  }
  return "?";
}

struct VerifyRecord {
  int64_t accepts = 0;
  int64_t rejects = 0;
};

struct LedgerRow {
  std::string parent_digest;  // 16 hex chars of the parent text hash
  std::string label_text;
  context::ContextSnapshot context;
  ControlVector pi_applied;
  double outcome_S = 0.0;
  bool success = false;
  int64_t cost_tokens = 0;
  VerifyRecord verify_record;
  ParetoTag tag = ParetoTag::untagged;
};

inline std::string parent_digest(std::string_view parent_text) {
  return rng::short_digest(parent_text);
}

// ============================================================================
// Objective and tagging
// ============================================================================

// J = mean(outcome) - lambda * mean(cost / cost_unit). The divisor makes the
// penalty budget-relative when callers pass the run's token limit.
inline double objective_J(std::span<const LedgerRow> rows, double lambda,
                          double cost_unit = 1.0) {
  if (rows.empty()) throw std::invalid_argument("objective over an empty ledger");
  if (cost_unit <= 0.0) throw std::invalid_argument("cost unit must be positive");
  double s = 0.0, c = 0.0;
  for (const auto& r : rows) {
    s += r.outcome_S;
    c += static_cast<double>(r.cost_tokens) / cost_unit;
  }
  double n = static_cast<double>(rows.size());
  return s / n - lambda * c / n;
}

// A row is Pareto iff no other row is at least as good on outcome and at
// most as costly, with one strict. Sweep over cost groups; ties on both
// axes do not dominate each other. Idempotent by construction.
inline void pareto_tag(std::vector<LedgerRow>& rows) {
  std::vector<size_t> order(rows.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (rows[a].cost_tokens != rows[b].cost_tokens)
      return rows[a].cost_tokens < rows[b].cost_tokens;
    return rows[a].outcome_S > rows[b].outcome_S;
  });

  double best_lower_cost = -std::numeric_limits<double>::infinity();
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    double group_best = -std::numeric_limits<double>::infinity();
    while (j < order.size() &&
           rows[order[j]].cost_tokens == rows[order[i]].cost_tokens) {
      group_best = std::max(group_best, rows[order[j]].outcome_S);
      ++j;
    }
    for (size_t k = i; k < j; ++k) {
      LedgerRow& row = rows[order[k]];
      bool dominated = best_lower_cost >= row.outcome_S ||
                       group_best > row.outcome_S;
      row.tag = dominated ? ParetoTag::dominated : ParetoTag::pareto;
    }
    best_lower_cost = std::max(best_lower_cost, group_best);
    i = j;
  }
}

// ============================================================================
// Carve-out decision rule
// ============================================================================

struct CarveoutEstimate {
  double alpha = 0.0;        // gate true-positive rate
  double eta = 0.0;          // gate false-positive rate
  double rho = 0.0;          // mass of the high-advantage slice
  double gamma = 0.0;        // advantage threshold on the slice
  double harm_bound = 0.0;   // worst-case loss on a false positive (M)
  double call_cost_mean = 0.0;  // per-invocation overhead when the gate fires
  double fixed_cost = 0.0;
};

struct CarveoutDecision {
  double delta_j_lower_bound = 0.0;
  bool deploy = false;
};

inline void check_estimate(const CarveoutEstimate& e) {
  auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in01(e.alpha) || !in01(e.eta) || !in01(e.rho))
    throw std::invalid_argument("carve-out rates must lie in [0,1]");
  if (e.gamma < 0 || e.harm_bound < 0 || e.call_cost_mean < 0 || e.fixed_cost < 0)
    throw std::invalid_argument("carve-out costs must be non-negative");
}

// Lower bound on the objective improvement from deploying one extra gated
// label: true gains minus false-positive harm minus invocation overhead.
inline CarveoutDecision carveout_advantage(const CarveoutEstimate& e) {
  check_estimate(e);
  double fire_mass = e.alpha * e.rho + e.eta * (1.0 - e.rho);
  double bound = e.alpha * e.rho * e.gamma - e.eta * (1.0 - e.rho) * e.harm_bound -
                 fire_mass * e.call_cost_mean - e.fixed_cost;
  return {bound, bound > 0.0};
}

// Worst-case per-state loss when the gate fires outside the slice: a full
// trust-region swing plus the priced cost delta.
inline double estimate_harm_bound(double lipschitz, double radius, double lambda,
                                  double delta_cost_max) {
  if (lipschitz < 0 || radius < 0 || lambda < 0 || delta_cost_max < 0)
    throw std::invalid_argument("harm bound inputs must be non-negative");
  return lipschitz * radius + lambda * delta_cost_max;
}

// ============================================================================
// Persistence and prompt rendering
// ============================================================================

inline nlohmann::ordered_json row_to_json(const ControlSchema& schema,
                                          const LedgerRow& row) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["parent_digest"] = row.parent_digest;
  j["label"] = row.label_text;
  j["context"] = context::to_json(row.context);
  j["pi_applied"] = to_wire(schema, row.pi_applied);
  j["outcome_S"] = row.outcome_S;
  j["success"] = row.success;
  j["cost_tokens"] = row.cost_tokens;
  j["verify"] = {{"accepts", row.verify_record.accepts},
                 {"rejects", row.verify_record.rejects}};
  j["tag"] = to_string(row.tag);
  return j;
}

inline LedgerRow row_from_json(const ControlSchema& schema, const nlohmann::json& j) {
  LedgerRow row;
  row.parent_digest = j.at("parent_digest").get<std::string>();
  row.label_text = j.at("label").get<std::string>();
  row.context = context::context_from_json(j.at("context"));
  auto validated = validate(schema, j.at("pi_applied"));
  if (!validated.ok())
    throw std::invalid_argument("ledger row control vector invalid: " +
                                validated.describe());
  row.pi_applied = *validated.vector;
  row.outcome_S = j.at("outcome_S").get<double>();
  row.success = j.at("success").get<bool>();
  row.cost_tokens = j.at("cost_tokens").get<int64_t>();
  row.verify_record.accepts = j.at("verify").at("accepts").get<int64_t>();
  row.verify_record.rejects = j.at("verify").at("rejects").get<int64_t>();
  std::string tag = j.at("tag").get<std::string>();
  row.tag = tag == "PARETO" ? ParetoTag::pareto
            : tag == "DOMINATED" ? ParetoTag::dominated
                                 : ParetoTag::untagged;
  return row;
}

inline void append_rows(const std::string& path, const ControlSchema& schema,
                        std::span<const LedgerRow> rows) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open ledger file: " + path);
  for (const auto& r : rows) out << row_to_json(schema, r).dump() << "\n";
}

inline std::vector<LedgerRow> load_rows(const std::string& path,
                                        const ControlSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ledger file: " + path);
  std::vector<LedgerRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(row_from_json(schema, nlohmann::json::parse(line)));
  }
  return rows;
}

// Fixed one-line prompt rendering:
//   [PARETO] label=... ctx={depth,sigma~,novelty,budget%} Pi={...} -> S=..., cost=...
inline std::string render_row_line(const ControlSchema& schema, const LedgerRow& row) {
  std::string pi = to_wire(schema, row.pi_applied).dump();
  char tail[64];
  std::snprintf(tail, sizeof(tail), " \xE2\x86\x92 S=%.4f, cost=%lld", row.outcome_S,
                static_cast<long long>(row.cost_tokens));
  return std::string("[") + to_string(row.tag) + "] label=" + row.label_text +
         " ctx=" + context::render_compact(row.context) + " \xCE\xA0=" + pi + tail;
}

}  // namespace nlel::ledger
