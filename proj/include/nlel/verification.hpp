#pragma once

// Verification cascade: t passes per candidate with conjunctive acceptance
// and early exit on the first reject. The synthetic backend is seeded and
// deterministic with a known false-accept rate, which makes the pass-count
// error model directly measurable.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nlel/rng.hpp"

namespace nlel::verify {

enum class IndependenceMode { independent, union_bound };

struct VerifierConfig {
  int passes = 1;
  double strictness = 0.5;  // in [0,1]
  IndependenceMode mode = IndependenceMode::independent;
};

struct PassRecord {
  bool accepted = false;
  bool backend_failed = false;
  std::string rationale;
};

struct VerifyResult {
  bool accepted = false;
  std::vector<PassRecord> per_pass;
};

class VerifierBackend {
 public:
  virtual ~VerifierBackend() = default;
  // One pass over a candidate. `truth_correct` is ground truth where the
  // caller has it (synthetic worlds); real backends may ignore it.
  virtual PassRecord check(std::string_view candidate_text, bool truth_correct,
                           double strictness, uint64_t pass_seed) = 0;
};

// Synthetic verifier with configurable error rates. Strictness maps linearly
// onto the false-accept rate: epsilon(strictness) = epsilon0 * (1 - strictness).
class SyntheticVerifier : public VerifierBackend {
 public:
  explicit SyntheticVerifier(double epsilon0 = 0.2, double false_reject = 0.0)
      : epsilon0_(epsilon0), false_reject_(false_reject) {}

  double false_accept_rate(double strictness) const {
    return epsilon0_ * (1.0 - strictness);
  }

  PassRecord check(std::string_view, bool truth_correct, double strictness,
                   uint64_t pass_seed) override {
    rng::Stream rs(pass_seed);
    PassRecord rec;
    if (truth_correct) {
      rec.accepted = !rs.coin(false_reject_);
      rec.rationale = rec.accepted ? "ok" : "spurious reject";
    } else {
      rec.accepted = rs.coin(false_accept_rate(strictness));
      rec.rationale = rec.accepted ? "missed defect" : "defect found";
    }
    return rec;
  }

 private:
  double epsilon0_;
  double false_reject_;
};

// Always-accepting backend for configurations with verification disabled.
class AcceptAllVerifier : public VerifierBackend {
 public:
  PassRecord check(std::string_view, bool, double, uint64_t) override {
    return {true, false, "unchecked"};
  }
};

// Runs the configured number of passes; acceptance is conjunctive, zero
// passes accept vacuously. In independent mode each pass draws its own seed;
// in union_bound mode all passes share one draw, the worst case for
// correlated verifiers. A backend failure counts as a reject and is flagged.
inline VerifyResult run_passes(std::string_view candidate_text, bool truth_correct,
                               const VerifierConfig& config,
                               VerifierBackend& backend, uint64_t seed) {
  VerifyResult result;
  result.accepted = true;
  for (int pass = 0; pass < config.passes; ++pass) {
    uint64_t pass_seed =
        config.mode == IndependenceMode::independent
            ? rng::derive(seed, {static_cast<uint64_t>(pass)})
            : rng::derive(seed, {0});
    PassRecord rec;
    try {
      rec = backend.check(candidate_text, truth_correct, config.strictness, pass_seed);
    } catch (const std::exception& e) {
      rec.accepted = false;
      rec.backend_failed = true;
      rec.rationale = e.what();
    }
    result.per_pass.push_back(rec);
    if (!rec.accepted) {
      result.accepted = false;
      break;
    }
  }
  return result;
}

}  // namespace nlel::verify
