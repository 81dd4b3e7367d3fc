#pragma once

// Executable property checks for the engine's analytical claims, run against
// the synthetic environment where every constant is known by construction.
// Each check returns a pass flag plus the measured margins so the CLI can
// print one line per claim; the acceptance suite asserts on the same
// results.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nlel/runner.hpp"

namespace nlel::theory {

struct TheoryCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(const char* format, ...) {
  char buf[256];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

}  // namespace detail

// ============================================================================
// Selection monotonicity
// ============================================================================

// Random candidate pools and random supersets; every top-k order statistic
// over the superset must dominate the pool's.
inline TheoryCheck check_anytime_monotonicity(int trials = 10000, uint64_t seed = 21) {
  auto start = std::chrono::steady_clock::now();
  rng::Stream rs(seed);
  int violations = 0;
  for (int trial = 0; trial < trials; ++trial) {
    double beta = rs.uniform(0.0, 1.0);
    size_t base_n = 1 + rs.below(12);
    std::vector<search::ScoredCandidate> pool;
    for (size_t i = 0; i < base_n; ++i)
      pool.push_back({i, rs.uniform(-1.0, 1.0), rs.uniform(0.0, 0.5)});
    std::vector<search::ScoredCandidate> superset = pool;
    size_t extra = 1 + rs.below(6);
    for (size_t i = 0; i < extra; ++i)
      superset.push_back({base_n + i, rs.uniform(-1.0, 1.0), rs.uniform(0.0, 0.5)});
    size_t k = 1 + rs.below(4);

    auto base_top = search::select_topk(pool, k, beta);
    auto super_top = search::select_topk(superset, k, beta);
    for (size_t j = 0; j < base_top.size() && j < super_top.size(); ++j) {
      double sb = search::score(base_top[j].mu, base_top[j].sigma, beta);
      double ss = search::score(super_top[j].mu, super_top[j].sigma, beta);
      if (ss < sb - 1e-12) ++violations;
    }
  }
  double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  TheoryCheck check;
  check.name = "anytime_monotonicity";
  check.pass = violations == 0 && elapsed < 10.0;
  check.detail = detail::fmt("%d trials, %d violations, %.2fs", trials, violations,
                             elapsed);
  return check;
}

// ============================================================================
// Trust-region score swing
// ============================================================================

// Emissions sampled within twice the radius of the defaults: there the
// projection displaces a vector by at most r, so the score swing is bounded
// by L*r. A companion sweep over the whole box checks the unconditional
// guarantee against the safe defaults. Coarse integer fields stay at their
// defaults in the sampler; the continuous geometry is what the bound
// measures, and the max_tokens grid step (~0.001 normalized) is the only
// integer slack in play, far below the documented allowance.
inline TheoryCheck check_trust_region(int trials = 10000, uint64_t seed = 22,
                                      double radius = 0.15) {
  env::EnvSpec spec;
  spec.lipschitz = 2.0;
  env::SyntheticEnv environment{spec};
  const ControlSchema& schema = environment.schema();
  const ControlVector defaults = environment.defaults();
  rng::Stream rs(seed);

  const std::vector<std::string> continuous = {
      fields::temperature, fields::top_p, fields::repetition_penalty,
      fields::beta, fields::verify_strictness};

  int swing_violations = 0, center_violations = 0;
  double max_swing = 0.0, max_center_swing = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    env::EnvState st = environment.make_state(rs.next_u64());

    // Near emission: all coordinates within 2r of the defaults.
    ControlVector near = defaults;
    near.provenance = Provenance::emitted;
    for (const auto& name : continuous) {
      const FieldSpec* f = schema.find(name);
      double x0 = (std::get<double>(defaults.values.at(name)) - f->lower) /
                  (f->upper - f->lower);
      double x = std::clamp(x0 + rs.uniform(-2 * radius, 2 * radius), 0.0, 1.0);
      near.values[name] = f->lower + x * (f->upper - f->lower);
    }
    {
      const FieldSpec* f = schema.find(fields::max_tokens);
      int64_t d0 = std::get<int64_t>(defaults.values.at(f->name));
      double span = f->upper - f->lower;
      int64_t lo = std::max<int64_t>(static_cast<int64_t>(f->lower),
                                     d0 - static_cast<int64_t>(2 * radius * span));
      int64_t hi = std::min<int64_t>(static_cast<int64_t>(f->upper),
                                     d0 + static_cast<int64_t>(2 * radius * span));
      near.values[fields::max_tokens] =
          lo + static_cast<int64_t>(rs.below(static_cast<uint64_t>(hi - lo + 1)));
    }
    {
      // Simplex inside the per-member box: off-corpus mass stays below r.
      Simplex w;
      double rest = 0.0;
      const FieldSpec* f = schema.find(fields::retrieval_weights);
      for (const auto& m : f->members) w[m] = 0.0;
      double budget = radius;
      for (const auto& m : f->members) {
        if (m == kNoneCorpus) continue;
        double x = rs.uniform(0.0, budget / 2);
        w[m] = x;
        rest += x;
      }
      w[kNoneCorpus] = 1.0 - rest;
      near.values[fields::retrieval_weights] = w;
    }

    auto projection = project_trust_region(schema, near, defaults, radius);
    double swing = std::abs(environment.true_score(st, "x", projection.vector) -
                            environment.true_score(st, "x", near));
    max_swing = std::max(max_swing, swing);
    if (swing > spec.lipschitz * radius + 1e-9) ++swing_violations;

    // Arbitrary emission anywhere in the box: swing against the defaults.
    ControlVector wild = defaults;
    wild.provenance = Provenance::emitted;
    for (const auto& name : continuous) {
      const FieldSpec* f = schema.find(name);
      wild.values[name] = rs.uniform(f->lower, f->upper);
    }
    wild.values[fields::branch_quota] = static_cast<int64_t>(1 + rs.below(8));
    wild.values[fields::gen_count] = static_cast<int64_t>(1 + rs.below(8));
    wild.values[fields::verify_passes] = static_cast<int64_t>(rs.below(5));
    auto wild_projection = project_trust_region(schema, wild, defaults, radius);
    double center_swing =
        std::abs(environment.true_score(st, "x", wild_projection.vector) -
                 environment.true_score(st, "x", defaults));
    max_center_swing = std::max(max_center_swing, center_swing);
    if (center_swing > spec.lipschitz * radius + 1e-9) ++center_violations;
  }

  TheoryCheck check;
  check.name = "trust_region_bound";
  check.pass = swing_violations == 0 && center_violations == 0;
  check.detail = detail::fmt(
      "max swing %.4f (bound %.2f), max default-swing %.4f, violations %d/%d",
      max_swing, spec.lipschitz * radius, max_center_swing, swing_violations,
      center_violations);
  return check;
}

// ============================================================================
// Verification error model
// ============================================================================

inline TheoryCheck check_verification_errors(int samples = 100000, uint64_t seed = 23) {
  verify::SyntheticVerifier backend(0.2, 0.0);
  const double epsilon = backend.false_accept_rate(0.5);

  std::ostringstream detail;
  bool pass = true;
  for (int t : {1, 2, 3}) {
    verify::VerifierConfig cfg{t, 0.5, verify::IndependenceMode::independent};
    int accepted = 0;
    for (int i = 0; i < samples; ++i) {
      auto r = verify::run_passes("bad", false, cfg, backend,
                                  rng::derive(seed, {static_cast<uint64_t>(t),
                                                     static_cast<uint64_t>(i)}));
      accepted += r.accepted ? 1 : 0;
    }
    double measured = static_cast<double>(accepted) / samples;
    double predicted = std::pow(epsilon, t);
    double sigma = std::sqrt(predicted * (1 - predicted) / samples);
    bool ok = std::abs(measured - predicted) <= 3 * sigma;
    pass = pass && ok;
    detail << "t=" << t << " measured " << measured << " predicted " << predicted
           << (ok ? " ok; " : " FAIL; ");
  }

  // Fully correlated passes: the measured rate must respect t * epsilon.
  for (int t : {2, 3}) {
    verify::VerifierConfig cfg{t, 0.5, verify::IndependenceMode::union_bound};
    int accepted = 0;
    int n = samples / 2;
    for (int i = 0; i < n; ++i) {
      auto r = verify::run_passes("bad", false, cfg, backend,
                                  rng::derive(seed, {99, static_cast<uint64_t>(t),
                                                     static_cast<uint64_t>(i)}));
      accepted += r.accepted ? 1 : 0;
    }
    double measured = static_cast<double>(accepted) / n;
    bool ok = measured <= t * epsilon;
    pass = pass && ok;
    detail << "correlated t=" << t << " rate " << measured << " <= " << t * epsilon
           << (ok ? " ok; " : " FAIL; ");
  }

  return {"verification_error_model", pass, detail.str()};
}

// ============================================================================
// Structured diversity
// ============================================================================

inline TheoryCheck check_structured_diversity(int allocations = 20,
                                              int trials = 100000,
                                              uint64_t seed = 24) {
  env::SyntheticEnv environment{env::EnvSpec{}};
  const std::vector<std::string> labels = {"algebra", "backward", "counterexample"};
  rng::Stream alloc_rs(seed);

  bool pass = true;
  double worst_gap_sigmas = 0.0;
  for (int a = 0; a < allocations; ++a) {
    std::map<std::string, int> allocation;
    int total = 0;
    for (const auto& l : labels) {
      int n = static_cast<int>(alloc_rs.below(4));
      if (n > 0) allocation[l] = n;
      total += n;
    }
    if (total == 0) allocation[labels[a % 3]] = total = 1;

    auto tp = environment.tail_probability(allocation);
    if (tp.exact < tp.lower_bound - 1e-12) pass = false;

    rng::Stream mc(rng::derive(seed, {static_cast<uint64_t>(a)}));
    int crossed = 0;
    for (int trial = 0; trial < trials; ++trial) {
      bool any = false;
      for (const auto& [label, n] : allocation)
        for (int i = 0; i < n; ++i)
          any = any || environment.sample_label_score(label, mc) >= environment.tau();
      crossed += any ? 1 : 0;
    }
    double freq = static_cast<double>(crossed) / trials;
    double sigma = std::sqrt(std::max(tp.exact * (1 - tp.exact), 1e-12) / trials);
    double gap = std::abs(freq - tp.exact) / sigma;
    worst_gap_sigmas = std::max(worst_gap_sigmas, gap);
    if (gap > 3.0) pass = false;
  }
  return {"structured_diversity", pass,
          detail::fmt("%d allocations, worst |freq-exact| = %.2f sigma",
                      allocations, worst_gap_sigmas)};
}

// ============================================================================
// Distortion -> shortfall
// ============================================================================

inline TheoryCheck check_quantized_shortfall(int states = 50, double resolution = 0.01,
                                             uint64_t seed = 25) {
  env::EnvSpec spec;
  env::SyntheticEnv environment{spec};
  const ControlSchema& schema = environment.schema();
  const double radius = 0.15;

  std::ostringstream detail;
  bool pass = true;
  for (int bits : {1, 2, 3}) {
    std::map<std::string, int> bits_map;
    for (const auto& f : spec.optimum_fields) bits_map[f] = bits;
    double step = 1.0 / static_cast<double>((int64_t{1} << bits) - 1);
    double bound = spec.lipschitz * step / 2 + spec.lipschitz * resolution;

    double shortfall_sum = 0.0;
    for (int s = 0; s < states; ++s) {
      env::EnvState st = environment.make_state(rng::derive(seed, {static_cast<uint64_t>(s)}));
      auto oracle = environment.brute_force_best_control(st, radius, resolution);
      auto quantized = quantize(schema, oracle.pi_best, bits_map);
      if (distance(schema, quantized.vector, oracle.pi_best) > quantized.step / 2 + 1e-9)
        pass = false;
      double shortfall = environment.true_score(st, "", oracle.pi_best) -
                         environment.true_score(st, "", quantized.vector);
      shortfall_sum += shortfall;
    }
    double mean_shortfall = shortfall_sum / states;
    bool ok = mean_shortfall <= bound + 1e-9;
    pass = pass && ok;
    detail << "bits=" << bits << " shortfall " << mean_shortfall << " <= " << bound
           << (ok ? " ok; " : " FAIL; ");
  }
  return {"quantized_shortfall", pass, detail.str()};
}

// ============================================================================
// Reductions
// ============================================================================

// Constant labeller + constant tuner through the full pipeline must equal a
// tuner that plays the same constants through the prompt/parse/validate
// path, byte for byte, trace for trace.
inline TheoryCheck check_reductions(int n_seeds = 5, int n_instances = 20) {
  ControlSchema schema = canonical_v1();
  env::SyntheticEnv environment{env::EnvSpec{}};
  verify::SyntheticVerifier verifier;

  int mismatches = 0, compared = 0;
  bool chains_ok = true;
  for (const ControlVector& fixed :
       {runner::chain_controls(schema), schema_defaults(schema)}) {
    bool is_chain = int_at(fixed, fields::branch_quota) == 1;
    std::string wire = to_wire(schema, fixed).dump();
    for (uint64_t seed = 1; seed <= static_cast<uint64_t>(n_seeds); ++seed) {
      for (int instance = 0; instance < n_instances; ++instance) {
        search::EngineConfig ecfg;
        ecfg.budget.depth_cap = 3;
        ecfg.budget.token_limit = 1 << 20;
        ecfg.seed = rng::derive(seed, {static_cast<uint64_t>(instance)});

        auto run_side = [&](policy::Tuner& tuner) {
          search::EnvSource source(
              environment, rng::derive(seed, {static_cast<uint64_t>(instance),
                                              rng::fnv1a64("reduction")}));
          policy::ConstantLabeller labeller;
          search::SearchEngine engine(schema, ecfg, source, labeller, tuner,
                                      verifier);
          return engine.run(runner::instance_root_text(seed, instance));
        };

        policy::ConstantTuner direct(schema, fixed, ecfg.trust_radius);
        adapter::MockBackend scripted(1);
        scripted.set_script({wire});
        policy::JsonParameterEmitter jpe(schema, policy::JPEConfig{}, scripted,
                                         ecfg.trust_radius);

        search::RunResult a = run_side(direct);
        search::RunResult b = run_side(jpe);
        std::string ta = trace::render_jsonl(schema, a.events);
        std::string tb = trace::render_jsonl(schema, b.events);
        compared += 1;
        if (ta != tb) mismatches += 1;
        if (is_chain)
          for (const auto& ev : a.events)
            chains_ok = chains_ok && ev.labels.size() == 1 &&
                        ev.candidates.size() <= 1 && ev.survivors.size() <= 1;
      }
    }
  }
  return {"reductions", mismatches == 0 && chains_ok,
          detail::fmt("%d trace pairs, %d byte mismatches, chain structure %s",
                      compared, mismatches, chains_ok ? "ok" : "broken")};
}

// ============================================================================
// Compute accounting
// ============================================================================

inline TheoryCheck check_compute_accounting(uint64_t seed_base = 26) {
  ControlSchema schema = canonical_v1();
  const double radius = 0.15;
  int64_t quota_cap = search::max_int_within_radius(schema, fields::branch_quota, radius);
  int64_t bundle_cap = search::max_int_within_radius(schema, fields::gen_count, radius);

  bool pass = true;
  std::ostringstream detail;
  int runs = 0;
  for (auto policy : {runner::PolicyKind::constant_cot, runner::PolicyKind::constant_tot,
                      runner::PolicyKind::nlel_jpe}) {
    for (uint64_t seed = 1; seed <= 3; ++seed) {
      runner::RunConfig cfg;
      cfg.policy = policy;
      cfg.trust_radius = radius;
      cfg.budget.depth_cap = 3;
      cfg.budget.token_limit = 1 << 20;
      cfg.budget.expansion_cap = 1 << 20;

      env::SyntheticEnv environment(cfg.env_spec, schema);
      std::vector<ledger::LedgerRow> rows;
      runner::PolicyBundle bundle =
          runner::make_policy(policy, schema, cfg, seed, &rows);
      search::EngineConfig ecfg;
      ecfg.trust_radius = radius;
      ecfg.budget = cfg.budget;
      ecfg.seed = rng::derive(seed_base, {seed});
      search::EnvSource source(environment, rng::derive(seed, {seed_base}));
      verify::SyntheticVerifier verifier;
      search::SearchEngine engine(schema, ecfg, source, *bundle.labeller,
                                  *bundle.tuner, verifier);
      search::RunResult result = engine.run("accounting probe");
      runs += 1;

      std::vector<int64_t> quotas(static_cast<size_t>(cfg.budget.depth_cap), quota_cap);
      std::vector<int64_t> bundles(static_cast<size_t>(cfg.budget.depth_cap), bundle_cap);
      int64_t bound = search::expansion_bound(quotas, bundles);
      if (result.candidates_generated > bound) pass = false;

      auto envelope = search::total_compute_envelope(result.candidates_generated,
                                                     cfg.budget.c_min, cfg.budget.c_max);
      if (result.total_cost_units < envelope.first ||
          result.total_cost_units > envelope.second)
        pass = false;

      int64_t token_sum = 0;
      for (const auto& ev : result.events) token_sum += ev.tokens;
      if (token_sum != result.tokens_used) pass = false;
    }
  }
  detail << runs << " runs, quota cap " << quota_cap << ", bundle cap " << bundle_cap
         << (pass ? ", all inside bounds" : ", BOUND VIOLATION");
  return {"compute_accounting", pass, detail.str()};
}

// ============================================================================
// Carve-out decision
// ============================================================================

inline TheoryCheck check_carveout(int states = 20000, uint64_t seed = 27) {
  const double rho = 0.2, gamma = 0.5, alpha = 0.9, eta = 0.05;
  const double radius = 0.15, lipschitz = 4.0;
  const double call_cost = 0.01, fixed_cost = 0.005;
  const double false_positive_swing = 0.5 * radius;  // realized harm below M

  env::SyntheticEnv environment =
      env::SyntheticEnv::planted_carveout(rho, gamma, seed, radius, lipschitz);
  const ControlSchema& schema = environment.schema();
  const ControlVector defaults = environment.defaults();

  ledger::CarveoutEstimate estimate;
  estimate.alpha = alpha;
  estimate.eta = eta;
  estimate.rho = rho;
  estimate.gamma = gamma;
  estimate.harm_bound = ledger::estimate_harm_bound(lipschitz, radius, 0.0, 0.0);
  estimate.call_cost_mean = call_cost;
  estimate.fixed_cost = fixed_cost;
  auto decision = ledger::carveout_advantage(estimate);

  // Simulated deployment: the gate fires with the planted rates; on a true
  // positive the carve-out control hits the state optimum, on a false
  // positive it wanders half the radius away from the defaults.
  ControlVector wander = defaults;
  {
    const FieldSpec* f = schema.find(fields::temperature);
    double x0 = (std::get<double>(defaults.values.at(f->name)) - f->lower) /
                (f->upper - f->lower);
    wander.values[fields::temperature] =
        f->lower + (x0 + false_positive_swing) * (f->upper - f->lower);
    wander.provenance = Provenance::emitted;
  }

  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < states; ++s) {
    env::EnvState st = environment.make_state(static_cast<uint64_t>(s));
    rng::Stream gate(rng::derive(seed, {static_cast<uint64_t>(s), rng::fnv1a64("gate")}));
    bool fired = gate.coin(st.in_carveout ? alpha : eta);
    double delta = -fixed_cost;
    if (fired) {
      const ControlVector& deployed = st.in_carveout ? st.pi_star : wander;
      delta += environment.true_score(st, "", deployed) -
               environment.true_score(st, "", defaults) - call_cost;
    }
    sum += delta;
    sum_sq += delta * delta;
  }
  double mean = sum / states;
  double var = std::max(0.0, sum_sq / states - mean * mean);
  double stderr_mean = std::sqrt(var / states);

  bool sim_ok = mean >= decision.delta_j_lower_bound - 3 * stderr_mean;

  // rho = 0: the bound goes negative and grid search collapses onto the
  // defaults (trust-region dominance).
  env::SyntheticEnv flat = env::SyntheticEnv::planted_carveout(0.0, gamma, seed + 1,
                                                               radius, lipschitz);
  ledger::CarveoutEstimate zero = estimate;
  zero.rho = 0.0;
  auto zero_decision = ledger::carveout_advantage(zero);
  bool collapse_ok = !zero_decision.deploy;
  for (int s = 0; s < 10; ++s) {
    env::EnvState st = flat.make_state(static_cast<uint64_t>(s));
    auto best = flat.brute_force_best_control(st, radius, 0.05);
    collapse_ok = collapse_ok && best.pi_best.values == flat.defaults().values;
  }

  return {"carveout_decision", sim_ok && decision.deploy && collapse_ok,
          detail::fmt("sim dJ %.4f >= bound %.4f (3se %.4f); rho=0 deploy=%s, "
                      "grid returns defaults %s",
                      mean, decision.delta_j_lower_bound, 3 * stderr_mean,
                      zero_decision.deploy ? "true" : "false",
                      collapse_ok ? "ok" : "FAIL")};
}

// ============================================================================
// Annealing
// ============================================================================

inline TheoryCheck check_annealing(uint64_t seed = 28) {
  ControlSchema schema = canonical_v1();
  env::SyntheticEnv environment{env::EnvSpec{}};
  verify::SyntheticVerifier verifier;

  bool pass = true;
  for (double gamma_a : {0.7, 1.0}) {
    search::EngineConfig ecfg;
    ecfg.gamma_a = gamma_a;
    ecfg.budget.depth_cap = 4;
    ecfg.budget.token_limit = 1 << 20;
    ecfg.seed = seed;
    search::EnvSource source(environment, seed);
    policy::ConstantLabeller labeller;
    policy::ConstantTuner tuner(schema, schema_defaults(schema), ecfg.trust_radius);
    search::SearchEngine engine(schema, ecfg, source, labeller, tuner, verifier);
    search::RunResult result = engine.run("annealing probe");

    std::map<uint64_t, double> beta_by_parent;
    std::map<uint64_t, uint64_t> parent_of;
    for (const auto& ev : result.events) beta_by_parent[ev.parent_id] = ev.beta_used;
    for (const auto& e : result.edges) parent_of[e.child_id] = e.parent_id;

    // Walk every node's path to the root; betas must not increase downward.
    for (const auto& n : result.nodes) {
      uint64_t cursor = n.id;
      double child_beta = -1.0;
      while (true) {
        auto it = beta_by_parent.find(cursor);
        if (it != beta_by_parent.end()) {
          if (child_beta >= 0.0 && it->second < child_beta - 1e-15) pass = false;
          child_beta = it->second;
        }
        auto up = parent_of.find(cursor);
        if (up == parent_of.end()) break;
        cursor = up->second;
      }
    }
    if (gamma_a == 1.0)
      for (const auto& ev : result.events)
        if (ev.beta_used != ecfg.beta0) pass = false;
  }
  return {"beta_annealing", pass,
          std::string("per-path non-increase and flat schedule with annealing off: ") +
              (pass ? "ok" : "FAIL")};
}

// ============================================================================
// Emitter robustness
// ============================================================================

inline std::string fuzz_payload(const ControlSchema& schema, int index,
                                rng::Stream& rs) {
  ojson wire = to_wire(schema, schema_defaults(schema));
  switch (index % 10) {
    case 0: {  // printable junk
      std::string s;
      size_t n = 1 + rs.below(64);
      for (size_t i = 0; i < n; ++i)
        s += static_cast<char>(32 + rs.below(95));
      return s;
    }
    case 1:
      return "I would raise the temperature a little and verify twice.";
    case 2:
      wire["injected_field"] = 42;
      return wire.dump();
    case 3:
      wire[fields::temperature] = 99.0 + rs.uniform01();
      wire[fields::max_tokens] = -5;
      return wire.dump();
    case 4:
      wire[fields::temperature] = "hot";
      wire[fields::gen_count] = true;
      return wire.dump();
    case 5:
      return wire.dump() + " " + wire.dump();
    case 6: {
      std::string s = wire.dump();
      return s.substr(0, s.size() / 2);
    }
    case 7:
      return "[1, 2, 3]";
    case 8: {  // valid but extreme in-bounds emission
      ControlVector extreme = schema_defaults(schema);
      for (const auto& f : schema.fields) {
        if (f.kind == FieldKind::continuous)
          extreme.values[f.name] = rs.coin(0.5) ? f.lower : f.upper;
        else if (f.kind == FieldKind::integer)
          extreme.values[f.name] = static_cast<int64_t>(
              rs.coin(0.5) ? f.lower : f.upper);
      }
      return to_wire(schema, extreme).dump();
    }
    default:
      return R"({"controls": {"nested": {"temperature": 0.5}}})";
  }
}

inline TheoryCheck check_jpe_fuzz(int cases = 1000, uint64_t seed = 29) {
  ControlSchema schema = canonical_v1();
  ControlVector defaults = schema_defaults(schema);
  const double radius = 0.15;
  rng::Stream rs(seed);

  context::BudgetCounters budgets{10, 1000, 0, 0, 0};
  context::ContextSnapshot ctx = context::summarize({}, {}, {}, budgets, 1);

  int crashes = 0, region_violations = 0, fallback_errors = 0, valid_payloads = 0;
  for (int i = 0; i < cases; ++i) {
    std::string payload = fuzz_payload(schema, i, rs);
    adapter::MockBackend backend(seed);
    backend.set_script({payload});
    policy::JsonParameterEmitter jpe(schema, policy::JPEConfig{}, backend, radius);
    try {
      auto r = jpe.emit_control("fuzz parent", policy::default_label(), ctx);
      if (!revalidate(schema, r.applied).ok() ||
          distance(schema, r.applied, defaults) > radius + 1e-9)
        ++region_violations;
      bool payload_valid = !r.audit.used_fallback;
      if (payload_valid) {
        ++valid_payloads;
      } else if (r.applied.values != defaults.values) {
        ++fallback_errors;  // fallback must be the defaults, exactly
      }
    } catch (...) {
      ++crashes;
    }
  }
  bool pass = crashes == 0 && region_violations == 0 && fallback_errors == 0;
  return {"jpe_fuzz", pass,
          detail::fmt("%d payloads (%d valid), crashes %d, region violations %d, "
                      "bad fallbacks %d",
                      cases, valid_payloads, crashes, region_violations,
                      fallback_errors)};
}

// ============================================================================
// Determinism and replay
// ============================================================================

inline TheoryCheck check_determinism_replay(const std::string& scratch_dir) {
  namespace fs = std::filesystem;
  runner::RunConfig cfg;
  cfg.policy = runner::PolicyKind::nlel_jpe;
  cfg.instances = 4;
  cfg.seeds = {1, 2};
  cfg.budget.depth_cap = 2;

  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  fs::path dir_a = fs::path(scratch_dir) / "det_a";
  fs::path dir_b = fs::path(scratch_dir) / "det_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  cfg.output_dir = dir_a.string();
  auto art_a = runner::run(cfg);
  cfg.output_dir = dir_b.string();
  runner::run(cfg);

  bool traces_equal = true;
  for (const auto& rel : art_a.trace_files)
    traces_equal = traces_equal && read(dir_a / rel) == read(dir_b / rel);
  bool reports_equal = read(dir_a / "report.json") == read(dir_b / "report.json");

  auto replayed = runner::replay(dir_a.string());
  bool replay_ok = replayed.matches_stored;

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  return {"determinism_replay", traces_equal && reports_equal && replay_ok,
          detail::fmt("traces %s, reports %s, replay %s",
                      traces_equal ? "identical" : "DIFFER",
                      reports_equal ? "identical" : "DIFFER",
                      replay_ok ? "matches" : "DIFFERS")};
}

// ============================================================================
// Suite driver
// ============================================================================

inline std::vector<TheoryCheck> run_all(const std::string& scratch_dir,
                                        bool quick = false) {
  int scale = quick ? 10 : 1;
  std::vector<TheoryCheck> checks;
  checks.push_back(check_anytime_monotonicity(10000 / scale));
  checks.push_back(check_trust_region(10000 / scale));
  checks.push_back(check_verification_errors(100000 / scale));
  checks.push_back(check_structured_diversity(20, 100000 / scale));
  checks.push_back(check_quantized_shortfall(quick ? 10 : 50));
  checks.push_back(check_reductions(quick ? 2 : 5, quick ? 5 : 20));
  checks.push_back(check_compute_accounting());
  checks.push_back(check_carveout(20000 / scale));
  checks.push_back(check_annealing());
  checks.push_back(check_jpe_fuzz(1000 / scale));
  checks.push_back(check_determinism_replay(scratch_dir));
  return checks;
}

}  // namespace nlel::theory
