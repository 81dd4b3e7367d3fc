#pragma once

// Compute-aware reporting. Budgeted accuracy is computed by trace replay:
// walk events in sequence order, admit an event while the tokens spent so
// far are below the budget (mirroring the engine's own admission rule), and
// count the instance as solved if any admitted candidate value crosses the
// environment threshold. One recorded run therefore yields every budget
// point, and live metrics equal replayed metrics by construction.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlel/rng.hpp"
#include "nlel/trace.hpp"

namespace nlel::metrics {

struct PrefixStats {
  size_t events_included = 0;
  int64_t tokens = 0;
  bool crossed = false;
  int64_t verify_accepts = 0;
  int64_t verify_rejects = 0;
};

// Events are admitted while cumulative tokens stay strictly below the
// budget, which matches the engine: an expansion starts whenever the budget
// bit has not yet flipped, even if it overshoots.
inline PrefixStats evaluate_prefix(std::span<const trace::TraceEvent> events,
                                   int64_t token_budget, double tau) {
  PrefixStats stats;
  for (const auto& ev : events) {
    if (stats.tokens >= token_budget) break;
    stats.events_included += 1;
    stats.tokens += ev.tokens;
    for (const auto& c : ev.candidates) {
      stats.crossed = stats.crossed || c.mu >= tau;
      if (c.verified) stats.verify_accepts += 1;
      else stats.verify_rejects += 1;
    }
  }
  return stats;
}

struct InstanceTrace {
  uint64_t seed = 0;
  int instance = 0;
  std::vector<trace::TraceEvent> events;
  int64_t controller_tokens = 0;
};

struct BudgetPoint {
  double multiplier = 1.0;
  double accuracy = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct MetricsReport {
  int instances = 0;
  int seeds = 0;
  int64_t reference_budget = 0;
  std::vector<BudgetPoint> success_at_compute;
  std::optional<double> tokens_per_success;      // at the 1.0x budget
  std::optional<double> expansions_per_success;  // likewise
  double verify_accept_rate = 0.0;
  int64_t total_tokens = 0;
  int64_t controller_tokens = 0;
};

inline constexpr std::array<double, 3> kBudgetMultipliers{0.5, 1.0, 2.0};

namespace detail {

inline std::array<double, 2> bootstrap_ci(const std::vector<double>& per_instance,
                                          uint64_t resample_seed, int resamples = 500) {
  if (per_instance.empty()) return {0.0, 0.0};
  rng::Stream rs(resample_seed);
  std::vector<double> means;
  means.reserve(static_cast<size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    double sum = 0.0;
    for (size_t i = 0; i < per_instance.size(); ++i)
      sum += per_instance[rs.below(per_instance.size())];
    means.push_back(sum / static_cast<double>(per_instance.size()));
  }
  std::sort(means.begin(), means.end());
  auto at = [&](double q) {
    size_t idx = static_cast<size_t>(q * static_cast<double>(means.size() - 1));
    return means[idx];
  };
  return {at(0.025), at(0.975)};
}

}  // namespace detail

// Aggregates per-(seed, instance) traces into the report. Instances are the
// bootstrap resampling unit; seeds average within an instance.
inline MetricsReport build_report(std::span<const InstanceTrace> traces,
                                  int64_t reference_budget, double tau,
                                  uint64_t resample_seed,
                                  std::span<const double> multipliers = kBudgetMultipliers) {
  MetricsReport report;
  report.reference_budget = reference_budget;

  int max_instance = -1;
  std::set<uint64_t> seeds_seen;
  for (const auto& t : traces) {
    max_instance = std::max(max_instance, t.instance);
    seeds_seen.insert(t.seed);
  }
  report.instances = max_instance + 1;
  report.seeds = static_cast<int>(seeds_seen.size());

  int64_t accepts = 0, rejects = 0;
  int solved_at_reference = 0;
  int64_t expansions_total = 0;
  for (const auto& t : traces) {
    auto full = evaluate_prefix(t.events, reference_budget, tau);
    accepts += full.verify_accepts;
    rejects += full.verify_rejects;
    report.total_tokens += full.tokens;
    report.controller_tokens += t.controller_tokens;
    expansions_total += static_cast<int64_t>(t.events.size());
    solved_at_reference += full.crossed ? 1 : 0;
  }
  report.verify_accept_rate =
      accepts + rejects > 0
          ? static_cast<double>(accepts) / static_cast<double>(accepts + rejects)
          : 0.0;
  if (solved_at_reference > 0) {
    report.tokens_per_success = static_cast<double>(report.total_tokens) /
                                static_cast<double>(solved_at_reference);
    report.expansions_per_success = static_cast<double>(expansions_total) /
                                    static_cast<double>(solved_at_reference);
  }

  for (size_t mi = 0; mi < multipliers.size(); ++mi) {
    double mult = multipliers[mi];
    int64_t budget = static_cast<int64_t>(mult * static_cast<double>(reference_budget));
    std::vector<double> per_instance(static_cast<size_t>(report.instances), 0.0);
    std::vector<double> counts(static_cast<size_t>(report.instances), 0.0);
    double solved = 0.0, total = 0.0;
    for (const auto& t : traces) {
      bool crossed = evaluate_prefix(t.events, budget, tau).crossed;
      per_instance[static_cast<size_t>(t.instance)] += crossed ? 1.0 : 0.0;
      counts[static_cast<size_t>(t.instance)] += 1.0;
      solved += crossed ? 1.0 : 0.0;
      total += 1.0;
    }
    for (size_t i = 0; i < per_instance.size(); ++i)
      if (counts[i] > 0) per_instance[i] /= counts[i];
    BudgetPoint point;
    point.multiplier = mult;
    point.accuracy = total > 0 ? solved / total : 0.0;
    auto ci = detail::bootstrap_ci(per_instance, rng::derive(resample_seed, {mi}));
    point.ci_low = ci[0];
    point.ci_high = ci[1];
    report.success_at_compute.push_back(point);
  }
  return report;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["instances"] = r.instances;
  j["seeds"] = r.seeds;
  j["reference_budget"] = r.reference_budget;
  nlohmann::ordered_json points = nlohmann::ordered_json::array();
  for (const auto& p : r.success_at_compute) {
    nlohmann::ordered_json pj = nlohmann::ordered_json::object();
    pj["multiplier"] = p.multiplier;
    pj["accuracy"] = p.accuracy;
    pj["ci_low"] = p.ci_low;
    pj["ci_high"] = p.ci_high;
    points.push_back(pj);
  }
  j["success_at_compute"] = points;
  if (r.tokens_per_success) j["tokens_per_success"] = *r.tokens_per_success;
  else j["tokens_per_success"] = nullptr;
  if (r.expansions_per_success) j["expansions_per_success"] = *r.expansions_per_success;
  else j["expansions_per_success"] = nullptr;
  j["verify_accept_rate"] = r.verify_accept_rate;
  j["total_tokens"] = r.total_tokens;
  j["controller_tokens"] = r.controller_tokens;
  return j;
}

}  // namespace nlel::metrics
