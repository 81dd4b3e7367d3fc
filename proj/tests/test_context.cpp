#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlel/context.hpp>
#include <nlel/rng.hpp>

#include <algorithm>
#include <set>

using namespace nlel;
using namespace nlel::context;

namespace {

// Brute-force oracle: per-text nearest-neighbour trigram Jaccard, median.
// Kept independent of the header's novelty() loop structure.
double novelty_oracle(const std::vector<std::string>& texts) {
  if (texts.size() < 2) return 1.0;
  auto jaccard = [](const std::string& a, const std::string& b) {
    std::set<std::string> ga, gb;
    for (size_t i = 0; i + 3 <= a.size(); ++i) ga.insert(a.substr(i, 3));
    for (size_t i = 0; i + 3 <= b.size(); ++i) gb.insert(b.substr(i, 3));
    if (ga.empty() && gb.empty()) return 0.0;
    std::vector<std::string> inter;
    std::set_intersection(ga.begin(), ga.end(), gb.begin(), gb.end(),
                          std::back_inserter(inter));
    double uni = static_cast<double>(ga.size() + gb.size() - inter.size());
    return 1.0 - static_cast<double>(inter.size()) / uni;
  };
  std::vector<double> nn;
  for (size_t i = 0; i < texts.size(); ++i) {
    double best = 1.0;
    for (size_t j = 0; j < texts.size(); ++j)
      if (i != j) best = std::min(best, jaccard(texts[i], texts[j]));
    nn.push_back(best);
  }
  std::sort(nn.begin(), nn.end());
  size_t n = nn.size();
  return n % 2 ? nn[n / 2] : 0.5 * (nn[n / 2 - 1] + nn[n / 2]);
}

std::string random_text(rng::Stream& rs) {
  static const char* alphabet = "abcdefg";
  std::string t;
  size_t len = 2 + rs.below(10);
  for (size_t i = 0; i < len; ++i) t += alphabet[rs.below(7)];
  return t;
}

}  // namespace

TEST_CASE("novelty conventions") {
  std::vector<std::string> dup{"abc", "abc"};
  CHECK(novelty(dup) == 0.0);

  std::vector<std::string> disjoint{"aaaa", "zzzz"};
  CHECK(novelty(disjoint) == 1.0);

  std::vector<std::string> single{"abc"};
  CHECK(novelty(single) == 1.0);
  CHECK(novelty({}) == 1.0);
}

TEST_CASE("novelty matches the brute-force oracle") {
  // Hand-computed: trigrams {abc,bcd}, {bcd,cde}, {qrs,rst}; nearest
  // neighbour distances {2/3, 2/3, 1}; median 2/3.
  std::vector<std::string> texts{"abcd", "bcde", "qrst"};
  CHECK(novelty(texts) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(novelty(texts) == doctest::Approx(novelty_oracle(texts)).epsilon(1e-12));

  rng::Stream rs(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> batch;
    size_t n = 2 + rs.below(6);
    for (size_t i = 0; i < n; ++i) batch.push_back(random_text(rs));
    CHECK(novelty(batch) == doctest::Approx(novelty_oracle(batch)).epsilon(1e-12));
  }
}

TEST_CASE("novelty is permutation-invariant") {
  rng::Stream rs(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> batch;
    size_t n = 2 + rs.below(5);
    for (size_t i = 0; i < n; ++i) batch.push_back(random_text(rs));
    double base = novelty(batch);
    for (int shuffle = 0; shuffle < 5; ++shuffle) {
      for (size_t i = batch.size(); i > 1; --i)
        std::swap(batch[i - 1], batch[rs.below(i)]);
      CHECK(novelty(batch) == doctest::Approx(base).epsilon(1e-12));
    }
  }
}

TEST_CASE("summarize aggregates frontier and sibling statistics") {
  std::vector<CandidateView> frontier{
      {"step one", 0.4, 0.1}, {"step two", 0.6, 0.3}, {"step three", 0.5, 0.2}};
  std::vector<CandidateView> siblings{{"s1", 0.2, 0.05}, {"s2", 0.9, 0.4}};
  std::vector<std::string> history{"try algebra", "work backward"};
  BudgetCounters budgets{100, 1000, 2, 3, 1};

  ContextSnapshot snap = summarize(frontier, siblings, history, budgets, 3);
  CHECK(snap.frontier_sigma_median == 0.2);
  CHECK(snap.depth == 3);
  CHECK(snap.sibling_best_mu == 0.9);
  CHECK(snap.sibling_best_sigma == 0.4);
  CHECK(snap.recent_labels == history);
  CHECK(snap.tokens_used == 100);
  CHECK_FALSE(snap.budget_exhausted);

  // Same inputs, identical snapshot.
  CHECK(summarize(frontier, siblings, history, budgets, 3) == snap);
}

TEST_CASE("summarize root conventions") {
  ContextSnapshot snap = summarize({}, {}, {}, BudgetCounters{0, 500, 0, 0, 0}, 0);
  CHECK(snap.frontier_sigma_median == 0.0);
  CHECK(snap.novelty_median == 1.0);
  CHECK(snap.depth == 0);
  CHECK(snap.sibling_best_mu == 0.0);
  CHECK_FALSE(snap.budget_exhausted);
}

TEST_CASE("identical frontier texts have zero novelty") {
  std::vector<CandidateView> frontier{{"same", 0.1, 0.1}, {"same", 0.2, 0.2},
                                      {"same", 0.3, 0.3}};
  ContextSnapshot snap = summarize(frontier, {}, {}, BudgetCounters{}, 1);
  CHECK(snap.novelty_median == 0.0);
}

TEST_CASE("budget exhaustion flips exactly at the boundary") {
  for (int64_t used : {0, 499, 500, 501, 900}) {
    ContextSnapshot snap =
        summarize({}, {}, {}, BudgetCounters{used, 500, 0, 0, 0}, 0);
    CHECK(snap.budget_exhausted == (used >= 500));
  }
}

TEST_CASE("label history is windowed to the configured length") {
  std::vector<std::string> history;
  for (int i = 0; i < 20; ++i) history.push_back("label-" + std::to_string(i));
  ContextSnapshot snap = summarize({}, {}, history, BudgetCounters{}, 0);
  REQUIRE(snap.recent_labels.size() == kDefaultLabelWindow);
  CHECK(snap.recent_labels.front() == "label-12");
  CHECK(snap.recent_labels.back() == "label-19");

  snap = summarize({}, {}, history, BudgetCounters{}, 0, 3);
  CHECK(snap.recent_labels == std::vector<std::string>{"label-17", "label-18", "label-19"});
}

TEST_CASE("snapshot JSON round-trip") {
  std::vector<CandidateView> frontier{{"alpha", 0.4, 0.1}, {"beta", 0.6, 0.3}};
  ContextSnapshot snap =
      summarize(frontier, {}, {{"x"}}, BudgetCounters{42, 100, 1, 2, 3}, 2);
  ContextSnapshot back =
      context_from_json(nlohmann::json::parse(to_json(snap).dump()));
  CHECK(back == snap);
}

TEST_CASE("pluggable distance hook") {
  // A degenerate metric that calls everything identical.
  TextDistanceFn zero = [](std::string_view, std::string_view) { return 0.0; };
  std::vector<std::string> texts{"abcd", "qrst"};
  CHECK(novelty(texts, zero) == 0.0);
}
