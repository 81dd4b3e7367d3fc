#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlel/ledger.hpp>
#include <nlel/rng.hpp>

#include <cstdio>
#include <filesystem>

using namespace nlel;
using namespace nlel::ledger;

namespace {

LedgerRow row(double s, int64_t cost) {
  static ControlSchema schema = canonical_v1();
  LedgerRow r;
  r.parent_digest = parent_digest("parent");
  r.label_text = "try algebra";
  r.pi_applied = schema_defaults(schema);
  r.outcome_S = s;
  r.cost_tokens = cost;
  return r;
}

// O(n^2) domination oracle, straight from the definition.
std::vector<ParetoTag> brute_force_tags(const std::vector<LedgerRow>& rows) {
  std::vector<ParetoTag> tags(rows.size(), ParetoTag::pareto);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows.size(); ++j) {
      if (i == j) continue;
      bool geq = rows[j].outcome_S >= rows[i].outcome_S &&
                 rows[j].cost_tokens <= rows[i].cost_tokens;
      bool strict = rows[j].outcome_S > rows[i].outcome_S ||
                    rows[j].cost_tokens < rows[i].cost_tokens;
      if (geq && strict) {
        tags[i] = ParetoTag::dominated;
        break;
      }
    }
  }
  return tags;
}

}  // namespace

TEST_CASE("objective J prices compute against outcomes") {
  std::vector<LedgerRow> rows{row(0.8, 100)};
  CHECK(objective_J(rows, 0.001) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(objective_J(rows, 0.0) == doctest::Approx(0.8).epsilon(1e-12));

  // Duplication and permutation leave the mean unchanged.
  std::vector<LedgerRow> dup{row(0.8, 100), row(0.8, 100)};
  CHECK(objective_J(dup, 0.001) == doctest::Approx(objective_J(rows, 0.001)));

  std::vector<LedgerRow> mixed{row(0.2, 50), row(0.9, 10), row(0.5, 400)};
  std::vector<LedgerRow> perm{mixed[2], mixed[0], mixed[1]};
  CHECK(objective_J(mixed, 0.003) == doctest::Approx(objective_J(perm, 0.003)));

  // Budget-relative cost units.
  CHECK(objective_J(rows, 0.5, 1000.0) == doctest::Approx(0.8 - 0.5 * 0.1));

  CHECK_THROWS_AS(objective_J(std::vector<LedgerRow>{}, 0.1), std::invalid_argument);
}

TEST_CASE("pareto tagging on the worked triple") {
  // (0.8,100) and (0.7,50) trade off; (0.6,120) is beaten on both axes.
  std::vector<LedgerRow> rows{row(0.8, 100), row(0.7, 50), row(0.6, 120)};
  pareto_tag(rows);
  CHECK(rows[0].tag == ParetoTag::pareto);
  CHECK(rows[1].tag == ParetoTag::pareto);
  CHECK(rows[2].tag == ParetoTag::dominated);
}

TEST_CASE("pareto tagging edge cases") {
  std::vector<LedgerRow> single{row(0.1, 9999)};
  pareto_tag(single);
  CHECK(single[0].tag == ParetoTag::pareto);

  // Identical rows do not dominate each other.
  std::vector<LedgerRow> twins{row(0.5, 100), row(0.5, 100)};
  pareto_tag(twins);
  CHECK(twins[0].tag == ParetoTag::pareto);
  CHECK(twins[1].tag == ParetoTag::pareto);

  // Same cost, different outcome: the better one wins.
  std::vector<LedgerRow> pair{row(0.5, 100), row(0.6, 100)};
  pareto_tag(pair);
  CHECK(pair[0].tag == ParetoTag::dominated);
  CHECK(pair[1].tag == ParetoTag::pareto);
}

TEST_CASE("pareto tagging matches the brute-force oracle up to n=200") {
  rng::Stream rs(404);
  for (int trial = 0; trial < 30; ++trial) {
    size_t n = 1 + rs.below(200);
    std::vector<LedgerRow> rows;
    for (size_t i = 0; i < n; ++i)
      rows.push_back(row(rs.uniform(0, 1), static_cast<int64_t>(rs.below(40))));
    auto expected = brute_force_tags(rows);
    pareto_tag(rows);
    for (size_t i = 0; i < n; ++i) CHECK(rows[i].tag == expected[i]);

    // Idempotence.
    auto once = rows;
    pareto_tag(rows);
    for (size_t i = 0; i < n; ++i) CHECK(rows[i].tag == once[i].tag);
  }
}

TEST_CASE("carve-out advantage bound on the worked example") {
  CarveoutEstimate e;
  e.alpha = 0.9;
  e.rho = 0.2;
  e.gamma = 0.5;
  e.eta = 0.05;
  e.harm_bound = 1.0;
  e.call_cost_mean = 0.01;
  e.fixed_cost = 0.01;
  auto d = carveout_advantage(e);
  CHECK(d.delta_j_lower_bound == doctest::Approx(0.0378).epsilon(1e-12));
  CHECK(d.deploy);
}

TEST_CASE("carve-out degenerate cases") {
  CarveoutEstimate e;
  e.alpha = 0.0;
  e.rho = 0.3;
  e.gamma = 0.5;
  e.eta = 0.05;
  e.harm_bound = 1.0;
  e.call_cost_mean = 0.01;
  e.fixed_cost = 0.0;
  auto d = carveout_advantage(e);
  CHECK(d.delta_j_lower_bound <= 0.0);
  CHECK_FALSE(d.deploy);

  // Pure-gain limit: no errors, no costs.
  e.alpha = 1.0;
  e.eta = 0.0;
  e.call_cost_mean = 0.0;
  d = carveout_advantage(e);
  CHECK(d.delta_j_lower_bound == doctest::Approx(0.3 * 0.5));
  CHECK(d.deploy);

  e.alpha = 1.5;
  CHECK_THROWS_AS(carveout_advantage(e), std::invalid_argument);
}

TEST_CASE("harm bound arithmetic") {
  CHECK(estimate_harm_bound(2.0, 0.15, 0.001, 200) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(estimate_harm_bound(2.0, 0.0, 0.001, 0) == 0.0);
  CHECK(estimate_harm_bound(3.0, 0.1, 0.0, 999) == doctest::Approx(0.3));
  CHECK_THROWS_AS(estimate_harm_bound(-1, 0, 0, 0), std::invalid_argument);
}

TEST_CASE("rows persist as JSONL and round-trip") {
  ControlSchema schema = canonical_v1();
  std::string path =
      (std::filesystem::temp_directory_path() / "nlel_ledger_test.jsonl").string();
  std::remove(path.c_str());

  std::vector<LedgerRow> rows{row(0.8, 100), row(0.7, 50)};
  rows[0].context.depth = 2;
  rows[0].verify_record = {3, 1};
  rows[0].tag = ParetoTag::pareto;
  append_rows(path, schema, rows);
  append_rows(path, schema, std::vector<LedgerRow>{row(0.6, 120)});

  auto loaded = load_rows(path, schema);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].outcome_S == 0.8);
  CHECK(loaded[0].context.depth == 2);
  CHECK(loaded[0].verify_record.accepts == 3);
  CHECK(loaded[0].tag == ParetoTag::pareto);
  CHECK(loaded[2].cost_tokens == 120);
  CHECK(loaded[1].pi_applied.values == rows[1].pi_applied.values);
  std::remove(path.c_str());
}

TEST_CASE("prompt rendering follows the fixed one-line template") {
  ControlSchema schema = canonical_v1();
  LedgerRow r = row(0.8125, 412);
  r.tag = ParetoTag::pareto;
  r.context.depth = 2;
  r.context.tokens_used = 370;
  r.context.token_budget = 1000;
  std::string line = render_row_line(schema, r);
  CHECK(line.find("[PARETO] label=try algebra ctx={depth:2,") == 0);
  CHECK(line.find("budget%:37}") != std::string::npos);
  CHECK(line.find("S=0.8125, cost=412") != std::string::npos);
  CHECK(line.find("\"temperature\":0.7") != std::string::npos);
}

TEST_CASE("parent digest is a stable 16-hex prefix") {
  std::string d = parent_digest("prove that odd squares are odd");
  CHECK(d.size() == 16);
  CHECK(d == parent_digest("prove that odd squares are odd"));
  CHECK(d != parent_digest("a different parent"));
  for (char c : d) CHECK(std::isxdigit(static_cast<unsigned char>(c)));
}
