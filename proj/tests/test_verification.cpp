#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlel/verification.hpp>

#include <cmath>
#include <stdexcept>

using namespace nlel;
using namespace nlel::verify;

namespace {

// Measured false-accept rate over n incorrect candidates.
double measure_false_accept(int t, IndependenceMode mode, double strictness,
                            int n, uint64_t seed) {
  SyntheticVerifier backend(0.2, 0.0);
  VerifierConfig cfg{t, strictness, mode};
  int accepted = 0;
  for (int i = 0; i < n; ++i) {
    auto r = run_passes("bad candidate", false, cfg, backend,
                        rng::derive(seed, {static_cast<uint64_t>(i)}));
    accepted += r.accepted ? 1 : 0;
  }
  return static_cast<double>(accepted) / n;
}

class ThrowingVerifier : public VerifierBackend {
 public:
  PassRecord check(std::string_view, bool, double, uint64_t) override {
    throw std::runtime_error("verifier backend unavailable");
  }
};

}  // namespace

TEST_CASE("zero passes accept vacuously") {
  SyntheticVerifier backend;
  VerifierConfig cfg{0, 0.5, IndependenceMode::independent};
  auto r = run_passes("anything", false, cfg, backend, 1);
  CHECK(r.accepted);
  CHECK(r.per_pass.empty());
}

TEST_CASE("noiseless verifier always accepts correct candidates") {
  SyntheticVerifier backend(0.2, 0.0);
  for (int t : {1, 2, 3, 4}) {
    VerifierConfig cfg{t, 0.5, IndependenceMode::independent};
    for (uint64_t s = 0; s < 200; ++s) {
      auto r = run_passes("good", true, cfg, backend, s);
      CHECK(r.accepted);
      CHECK(r.per_pass.size() == static_cast<size_t>(t));
    }
  }
}

TEST_CASE("strictness maps linearly onto the false-accept rate") {
  SyntheticVerifier backend(0.2, 0.0);
  CHECK(backend.false_accept_rate(0.5) == doctest::Approx(0.1));
  CHECK(backend.false_accept_rate(1.0) == 0.0);
  CHECK(backend.false_accept_rate(0.0) == doctest::Approx(0.2));
}

TEST_CASE("independent passes multiply the error rate") {
  // epsilon = 0.1 at strictness 0.5; expect eps^t within 3 binomial sigma.
  const int n = 100000;
  for (int t : {1, 2}) {
    double predicted = std::pow(0.1, t);
    double measured =
        measure_false_accept(t, IndependenceMode::independent, 0.5, n, 77);
    double sigma = std::sqrt(predicted * (1 - predicted) / n);
    CHECK(std::abs(measured - predicted) <= 3 * sigma);
  }
}

TEST_CASE("false-accept rate is non-increasing in pass count") {
  const int n = 40000;
  double prev = 1.0;
  for (int t : {1, 2, 3, 4}) {
    double measured =
        measure_false_accept(t, IndependenceMode::independent, 0.5, n, 31);
    CHECK(measured <= prev + 1e-12);
    prev = measured;
  }
}

TEST_CASE("fully correlated passes stay within the union-style ceiling") {
  // All passes share one coin, so the measured rate sits at epsilon itself,
  // trivially below t * epsilon.
  const int n = 50000;
  for (int t : {2, 3}) {
    double measured =
        measure_false_accept(t, IndependenceMode::union_bound, 0.5, n, 19);
    double sigma = std::sqrt(0.1 * 0.9 / n);
    CHECK(std::abs(measured - 0.1) <= 3 * sigma);
    CHECK(measured <= t * 0.1);
  }
}

TEST_CASE("early exit stops at the first reject") {
  SyntheticVerifier backend(1.0, 0.0);  // strictness 1 -> always reject incorrect
  VerifierConfig cfg{4, 1.0, IndependenceMode::independent};
  auto r = run_passes("bad", false, cfg, backend, 3);
  CHECK_FALSE(r.accepted);
  CHECK(r.per_pass.size() == 1);
}

TEST_CASE("backend failure counts as a flagged reject") {
  ThrowingVerifier backend;
  VerifierConfig cfg{2, 0.5, IndependenceMode::independent};
  auto r = run_passes("anything", true, cfg, backend, 5);
  CHECK_FALSE(r.accepted);
  REQUIRE(r.per_pass.size() == 1);
  CHECK(r.per_pass[0].backend_failed);
}

TEST_CASE("runs are deterministic under a fixed seed") {
  SyntheticVerifier backend(0.5, 0.1);
  VerifierConfig cfg{3, 0.2, IndependenceMode::independent};
  for (uint64_t s = 0; s < 50; ++s) {
    auto a = run_passes("text", false, cfg, backend, s);
    auto b = run_passes("text", false, cfg, backend, s);
    CHECK(a.accepted == b.accepted);
    CHECK(a.per_pass.size() == b.per_pass.size());
  }
}
