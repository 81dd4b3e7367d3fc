#pragma once

// Compact measurable context: the tuner's and labeller's only view of the
// live search state beyond the parent text. Pure aggregation; value and
// uncertainty estimation happen upstream.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace nlel::context {

// ============================================================================
// Lexical novelty
// ============================================================================

using TextDistanceFn = std::function<double(std::string_view, std::string_view)>;

inline std::set<std::string> char_trigrams(std::string_view text) {
  std::set<std::string> grams;
  if (text.size() >= 3)
    for (size_t i = 0; i + 3 <= text.size(); ++i)
      grams.insert(std::string(text.substr(i, 3)));
  return grams;
}

// Jaccard distance over character 3-gram sets. Two strings too short to
// produce any trigram compare as identical.
inline double trigram_jaccard_distance(std::string_view a, std::string_view b) {
  auto ga = char_trigrams(a);
  auto gb = char_trigrams(b);
  if (ga.empty() && gb.empty()) return 0.0;
  size_t inter = 0;
  for (const auto& g : ga) inter += gb.count(g);
  size_t uni = ga.size() + gb.size() - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Median nearest-neighbour distance across the given texts. Fewer than two
// texts are maximally novel by convention.
inline double novelty(std::span<const std::string> texts,
                      const TextDistanceFn& dist = trigram_jaccard_distance) {
  if (texts.size() < 2) return 1.0;
  std::vector<double> nearest;
  nearest.reserve(texts.size());
  for (size_t i = 0; i < texts.size(); ++i) {
    double best = 1.0;
    for (size_t j = 0; j < texts.size(); ++j) {
      if (i == j) continue;
      best = std::min(best, dist(texts[i], texts[j]));
    }
    nearest.push_back(best);
  }
  return median(std::move(nearest));
}

// ============================================================================
// Snapshot
// ============================================================================

struct CandidateView {
  std::string text;
  double mu = 0.0;
  double sigma = 0.0;
};

struct BudgetCounters {
  int64_t tokens_used = 0;
  int64_t token_budget = 1;
  int64_t retrieval_calls = 0;
  int64_t verify_accepts = 0;
  int64_t verify_rejects = 0;
};

struct ContextSnapshot {
  double frontier_sigma_median = 0.0;
  double novelty_median = 1.0;
  int depth = 0;
  double sibling_best_mu = 0.0;
  double sibling_best_sigma = 0.0;
  std::vector<std::string> recent_labels;
  int64_t tokens_used = 0;
  int64_t token_budget = 1;
  int64_t retrieval_calls = 0;
  int64_t verify_accepts = 0;
  int64_t verify_rejects = 0;
  bool budget_exhausted = false;

  bool operator==(const ContextSnapshot&) const = default;
};

inline constexpr size_t kDefaultLabelWindow = 8;

// Pure aggregation over the current frontier, the parent's siblings, the
// recent label history and the budget counters. Empty frontier (the root
// case) reports zero uncertainty and maximal novelty.
inline ContextSnapshot summarize(std::span<const CandidateView> frontier,
                                 std::span<const CandidateView> siblings,
                                 std::span<const std::string> label_history,
                                 const BudgetCounters& budgets, int depth,
                                 size_t label_window = kDefaultLabelWindow,
                                 const TextDistanceFn& dist = trigram_jaccard_distance) {
  ContextSnapshot snap;
  snap.depth = depth;

  if (!frontier.empty()) {
    std::vector<double> sigmas;
    std::vector<std::string> texts;
    sigmas.reserve(frontier.size());
    texts.reserve(frontier.size());
    for (const auto& c : frontier) {
      sigmas.push_back(c.sigma);
      texts.push_back(c.text);
    }
    snap.frontier_sigma_median = median(std::move(sigmas));
    snap.novelty_median = novelty(texts, dist);
  }

  const CandidateView* best = nullptr;
  for (const auto& s : siblings)
    if (!best || s.mu > best->mu) best = &s;
  if (best) {
    snap.sibling_best_mu = best->mu;
    snap.sibling_best_sigma = best->sigma;
  }

  size_t take = std::min(label_window, label_history.size());
  snap.recent_labels.assign(label_history.end() - static_cast<ptrdiff_t>(take),
                            label_history.end());

  snap.tokens_used = budgets.tokens_used;
  snap.token_budget = budgets.token_budget;
  snap.retrieval_calls = budgets.retrieval_calls;
  snap.verify_accepts = budgets.verify_accepts;
  snap.verify_rejects = budgets.verify_rejects;
  snap.budget_exhausted = budgets.tokens_used >= budgets.token_budget;
  return snap;
}

// ============================================================================
// Serialization (trace log and prompt rendering)
// ============================================================================

inline nlohmann::ordered_json to_json(const ContextSnapshot& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["frontier_sigma_median"] = c.frontier_sigma_median;
  j["novelty_median"] = c.novelty_median;
  j["depth"] = c.depth;
  j["sibling_best_mu"] = c.sibling_best_mu;
  j["sibling_best_sigma"] = c.sibling_best_sigma;
  j["recent_labels"] = c.recent_labels;
  j["tokens_used"] = c.tokens_used;
  j["token_budget"] = c.token_budget;
  j["retrieval_calls"] = c.retrieval_calls;
  j["verify_accepts"] = c.verify_accepts;
  j["verify_rejects"] = c.verify_rejects;
  j["budget_exhausted"] = c.budget_exhausted;
  return j;
}

inline ContextSnapshot context_from_json(const nlohmann::json& j) {
  ContextSnapshot c;
  c.frontier_sigma_median = j.at("frontier_sigma_median").get<double>();
  c.novelty_median = j.at("novelty_median").get<double>();
  c.depth = j.at("depth").get<int>();
  c.sibling_best_mu = j.at("sibling_best_mu").get<double>();
  c.sibling_best_sigma = j.at("sibling_best_sigma").get<double>();
  c.recent_labels = j.at("recent_labels").get<std::vector<std::string>>();
  c.tokens_used = j.at("tokens_used").get<int64_t>();
  c.token_budget = j.at("token_budget").get<int64_t>();
  c.retrieval_calls = j.at("retrieval_calls").get<int64_t>();
  c.verify_accepts = j.at("verify_accepts").get<int64_t>();
  c.verify_rejects = j.at("verify_rejects").get<int64_t>();
  c.budget_exhausted = j.at("budget_exhausted").get<bool>();
  return c;
}

// Compact single-line rendering used in ledger rows and prompts.
inline std::string render_compact(const ContextSnapshot& c) {
  char buf[160];
  int pct = c.token_budget > 0
                ? static_cast<int>(100.0 * static_cast<double>(c.tokens_used) /
                                   static_cast<double>(c.token_budget))
                : 0;
  std::snprintf(buf, sizeof(buf), "{depth:%d,\xCF\x83\xCC\x83:%.3f,novelty:%.3f,budget%%:%d}",
                c.depth, c.frontier_sigma_median, c.novelty_median, pct);
  return buf;
}

}  // namespace nlel::context
