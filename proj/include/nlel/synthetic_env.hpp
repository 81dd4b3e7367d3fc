#pragma once

// Deterministic pseudo-LM world with known ground truth.
//
// The true score response is a cone: S_true(x, pi) = apex(x, label) -
// L * d(pi, pi_star(x)) under the schema-normalized l-inf metric, so the
// Lipschitz constant is exact by construction rather than estimated.
// Candidate observations add bounded mean-zero noise drawn from per-call
// splittable seeds, which keeps bundles identical across replays and makes
// score differences under different controls exactly the cone difference.
//
// Label text selects an archetype by substring pattern; unknown labels fall
// back to a neutral archetype instead of erroring. Archetypes also carry a
// tail rate: the probability that a fresh draw crosses the environment
// threshold, realized exactly by construction for the diversity analysis.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlel/control_schema.hpp"
#include "nlel/rng.hpp"

namespace nlel::env {

// ============================================================================
// Specification
// ============================================================================

struct Archetype {
  double tail_rate = 0.1;   // P(draw crosses tau) for this label family
  double mu_mean = 0.5;     // cone apex level
  double mu_spread = 0.2;   // width of the observation noise slab
  double sigma_mean = 0.1;  // scale of reported uncertainty
};

struct CostCoeffs {
  double bias = 8.0;
  double per_max_token = 0.05;
  double per_verify_pass = 2.0;
  double per_gen_count = 1.0;
  double per_retrieval_mass = 5.0;
};

struct EnvSpec {
  // Apex levels sit far enough above tau that informative labels can cross
  // it despite the Lipschitz penalty for imperfect controls; the fallback
  // archetype cannot.
  std::map<std::string, Archetype> label_archetypes = {
      {"algebra", {0.25, 0.92, 0.20, 0.08}},
      {"backward", {0.15, 0.85, 0.25, 0.12}},
      {"counterexample", {0.10, 0.78, 0.30, 0.18}},
      {"neutral", {0.05, 0.45, 0.30, 0.15}},
  };
  std::string fallback_archetype = "neutral";
  double lipschitz = 2.0;
  double tau = 0.7;
  uint64_t seed = 1;
  double c_min = 10.0;
  double c_max = 50.0;
  CostCoeffs cost;

  // Which continuous fields the per-state optimum wanders over, and how far.
  std::vector<std::string> optimum_fields = {fields::temperature, fields::top_p,
                                             fields::beta};
  double optimum_spread = 0.12;
  double state_jitter = 0.10;  // apex variation across states

  // Carve-out planting: fraction rho of states hide an advantage of exactly
  // gamma within the given radius of the defaults; the rest sit at the
  // defaults, where any deviation only loses.
  bool planted = false;
  double carveout_rho = 0.0;
  double carveout_gamma = 0.0;
  double carveout_radius = 0.15;
};

struct EnvState {
  uint64_t key = 0;
  ControlVector pi_star;
  double apex_jitter = 0.0;
  bool in_carveout = false;
};

struct Candidate {
  std::string text;
  double mu = 0.0;
  double sigma = 0.0;
  bool truth_correct = false;
};

struct TailProbability {
  double exact = 0.0;
  double lower_bound = 0.0;
};

struct BruteForceResult {
  ControlVector pi_best;
  double s_best = 0.0;
  uint64_t grid_points = 0;
};

// ============================================================================
// Environment
// ============================================================================

class SyntheticEnv {
 public:
  explicit SyntheticEnv(EnvSpec spec, ControlSchema schema = canonical_v1())
      : spec_(std::move(spec)), schema_(std::move(schema)),
        defaults_(schema_defaults(schema_)) {
    require_control_contract(schema_);
    if (spec_.label_archetypes.find(spec_.fallback_archetype) ==
        spec_.label_archetypes.end())
      throw std::invalid_argument("fallback archetype missing from the map");
    if (spec_.c_min > spec_.c_max)
      throw std::invalid_argument("c_min must be <= c_max");
    for (const auto& [name, a] : spec_.label_archetypes)
      if (a.tail_rate < 0.0 || a.tail_rate > 1.0)
        throw std::invalid_argument(name + ": tail rate outside [0,1]");
  }

  const EnvSpec& spec() const { return spec_; }
  const ControlSchema& schema() const { return schema_; }
  const ControlVector& defaults() const { return defaults_; }
  double tau() const { return spec_.tau; }
  double lipschitz() const { return spec_.lipschitz; }

  // Planted world with a known carve-out slice. The Lipschitz constant is
  // raised so a within-radius deviation can actually realize gamma.
  static SyntheticEnv planted_carveout(double rho, double gamma, uint64_t seed,
                                       double radius = 0.15, double lipschitz = 4.0) {
    if (rho < 0.0 || rho > 1.0 || gamma < 0.0)
      throw std::invalid_argument("invalid carve-out plant");
    if (gamma > lipschitz * radius)
      throw std::invalid_argument("gamma unreachable within the radius");
    EnvSpec spec;
    spec.seed = seed;
    spec.lipschitz = lipschitz;
    spec.planted = true;
    spec.carveout_rho = rho;
    spec.carveout_gamma = gamma;
    spec.carveout_radius = radius;
    return SyntheticEnv(std::move(spec));
  }

  const Archetype& archetype_for(std::string_view label_text) const {
    std::string lowered(label_text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& [pattern, arch] : spec_.label_archetypes)
      if (pattern != spec_.fallback_archetype &&
          lowered.find(pattern) != std::string::npos)
        return arch;
    return spec_.label_archetypes.at(spec_.fallback_archetype);
  }

  // --------------------------------------------------------------------
  // States
  // --------------------------------------------------------------------

  EnvState make_state(uint64_t key) const {
    rng::Stream rs(rng::derive(spec_.seed, {key, rng::fnv1a64("state")}));
    EnvState st;
    st.key = key;
    st.apex_jitter = rs.uniform(-spec_.state_jitter, spec_.state_jitter);
    st.pi_star = defaults_;

    if (spec_.planted) {
      st.in_carveout = spec_.carveout_rho > 0.0 && rs.coin(spec_.carveout_rho);
      if (st.in_carveout) {
        // Optimum placed at normalized distance exactly gamma / L from the
        // defaults, on one wandering coordinate, toward whichever side has
        // room so the distance is never clipped.
        double dist = spec_.carveout_gamma / spec_.lipschitz;
        const std::string& name =
            spec_.optimum_fields[rs.below(spec_.optimum_fields.size())];
        const FieldSpec* f = schema_.find(name);
        double x0 = (std::get<double>(defaults_.values.at(name)) - f->lower) /
                    (f->upper - f->lower);
        bool up = rs.coin(0.5);
        if (x0 + dist > 1.0) up = false;
        if (x0 - dist < 0.0) up = true;
        double x = up ? x0 + dist : x0 - dist;
        st.pi_star.values[name] = f->lower + x * (f->upper - f->lower);
      }
      st.pi_star.provenance = Provenance::emitted;
      return st;
    }

    for (const auto& name : spec_.optimum_fields) {
      const FieldSpec* f = schema_.find(name);
      if (!f || f->kind != FieldKind::continuous)
        throw std::invalid_argument("optimum field must be continuous: " + name);
      double x0 = (std::get<double>(defaults_.values.at(name)) - f->lower) /
                  (f->upper - f->lower);
      double x = std::clamp(x0 + rs.uniform(-spec_.optimum_spread, spec_.optimum_spread),
                            0.0, 1.0);
      st.pi_star.values[name] = f->lower + x * (f->upper - f->lower);
    }
    st.pi_star.provenance = Provenance::emitted;
    return st;
  }

  // Noiseless score response: the cone around the per-state optimum.
  double true_score(const EnvState& st, std::string_view label_text,
                    const ControlVector& pi) const {
    const Archetype& arch = archetype_for(label_text);
    return arch.mu_mean + st.apex_jitter -
           spec_.lipschitz * distance(schema_, pi, st.pi_star);
  }

  // Exact supremum of the within-radius score gain over the defaults.
  double advantage_within(const EnvState& st, double radius) const {
    double d0 = distance(schema_, defaults_, st.pi_star);
    return spec_.lipschitz * std::min(d0, radius);
  }

  // --------------------------------------------------------------------
  // Bundles
  // --------------------------------------------------------------------

  struct LabelRef {
    std::string_view text;
  };

  std::vector<Candidate> gen_bundle(std::string_view label_text,
                                    const ControlVector& pi, int count,
                                    uint64_t state_seed) const {
    if (count < 1) throw std::invalid_argument("bundle size must be >= 1");
    EnvState st = make_state(state_seed);
    const Archetype& arch = archetype_for(label_text);
    double base = true_score(st, label_text, pi);
    uint64_t label_digest = rng::fnv1a64(label_text);

    std::vector<Candidate> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      rng::Stream rs(rng::derive(spec_.seed,
                                 {state_seed, label_digest,
                                  static_cast<uint64_t>(i), rng::fnv1a64("cand")}));
      Candidate c;
      c.mu = base + arch.mu_spread * (rs.uniform01() - 0.5);
      c.sigma = arch.sigma_mean * (0.5 + rs.uniform01());
      c.truth_correct = c.mu >= spec_.tau;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "s%016llx/%c%d-%04llx",
                    static_cast<unsigned long long>(state_seed),
                    label_text.empty() ? 'x' : label_text.front(), i,
                    static_cast<unsigned long long>(rs.next_u64() & 0xffff));
      c.text = buf;
      out.push_back(std::move(c));
    }
    return out;
  }

  // Per-candidate generation cost, linear in the actuated fields and clamped
  // into [c_min, c_max].
  double candidate_cost(const ControlVector& pi) const {
    const CostCoeffs& w = spec_.cost;
    double raw = w.bias +
                 w.per_max_token * static_cast<double>(int_at(pi, fields::max_tokens)) +
                 w.per_verify_pass * static_cast<double>(int_at(pi, fields::verify_passes)) +
                 w.per_gen_count * static_cast<double>(int_at(pi, fields::gen_count)) +
                 w.per_retrieval_mass * active_retrieval_mass(pi);
    return std::clamp(raw, spec_.c_min, spec_.c_max);
  }

  // --------------------------------------------------------------------
  // Structured diversity
  // --------------------------------------------------------------------

  // A fresh draw whose threshold-crossing probability is exactly the
  // archetype's tail rate.
  double sample_label_score(std::string_view label_text, rng::Stream& rs) const {
    const Archetype& arch = archetype_for(label_text);
    double width = arch.mu_spread > 0.0 ? arch.mu_spread : 1.0;
    double u = rs.uniform01();
    return spec_.tau + width * (arch.tail_rate - u);
  }

  // Exact crossing probability for an allocation of draws across labels,
  // with the mean-rate lower bound it always dominates.
  TailProbability tail_probability(const std::map<std::string, int>& allocation) const {
    int64_t total = 0;
    double product = 1.0, mean_rate = 0.0;
    for (const auto& [label, n] : allocation) {
      if (n < 0) throw std::invalid_argument("negative allocation");
      const Archetype& arch = archetype_for(label);
      product *= std::pow(1.0 - arch.tail_rate, n);
      mean_rate += arch.tail_rate * n;
      total += n;
    }
    if (total < 1) throw std::invalid_argument("allocation must place at least one draw");
    mean_rate /= static_cast<double>(total);
    TailProbability tp;
    tp.exact = 1.0 - product;
    tp.lower_bound = 1.0 - std::pow(1.0 - mean_rate, static_cast<double>(total));
    if (tp.exact < tp.lower_bound - 1e-12)
      throw std::logic_error("tail product fell below its lower bound");
    return tp;
  }

  // --------------------------------------------------------------------
  // Brute-force oracle
  // --------------------------------------------------------------------

  // Exhaustive grid search for the best control within the trust region.
  // Continuous fields walk a symmetric grid through the defaults (so the
  // defaults themselves are always a grid point); integer fields named in
  // `search_fields` enumerate every in-ball value. Refuses oversized grids.
  BruteForceResult brute_force_best_control(
      const EnvState& st, double radius, double resolution,
      const std::vector<std::string>& search_fields) const {
    if (resolution <= 0.0) throw std::invalid_argument("resolution must be positive");

    struct Axis {
      std::string name;
      std::vector<FieldValue> values;
    };
    std::vector<Axis> axes;
    uint64_t points = 1;
    for (const auto& name : search_fields) {
      const FieldSpec* f = schema_.find(name);
      if (!f) throw std::invalid_argument("unknown search field: " + name);
      Axis axis{name, {}};
      if (f->kind == FieldKind::continuous) {
        double x0 = (std::get<double>(defaults_.values.at(name)) - f->lower) /
                    (f->upper - f->lower);
        int steps = static_cast<int>(std::floor(radius / resolution + 1e-12));
        for (int j = -steps; j <= steps; ++j) {
          double x = x0 + j * resolution;
          if (x < -1e-12 || x > 1.0 + 1e-12) continue;
          x = std::clamp(x, 0.0, 1.0);
          axis.values.push_back(f->lower + x * (f->upper - f->lower));
        }
      } else if (f->kind == FieldKind::integer) {
        double span = f->upper - f->lower;
        int64_t d0 = std::get<int64_t>(defaults_.values.at(name));
        for (int64_t v = static_cast<int64_t>(f->lower);
             v <= static_cast<int64_t>(f->upper); ++v) {
          double x = (static_cast<double>(v) - f->lower) / span;
          double x0 = (static_cast<double>(d0) - f->lower) / span;
          if (std::abs(x - x0) <= radius + 1e-12) axis.values.push_back(v);
        }
      } else {
        throw std::invalid_argument("grid search covers scalar fields only: " + name);
      }
      if (axis.values.empty()) axis.values.push_back(defaults_.values.at(name));
      points *= axis.values.size();
      axes.push_back(std::move(axis));
    }
    if (points > 10'000'000ull)
      throw std::invalid_argument("grid too large: " + std::to_string(points) +
                                  " points (limit 10^7)");

    BruteForceResult best;
    best.grid_points = points;
    best.pi_best = defaults_;
    best.s_best = true_score(st, "", defaults_);

    ControlVector probe = defaults_;
    std::vector<size_t> idx(axes.size(), 0);
    bool done = axes.empty();
    while (!done) {
      for (size_t a = 0; a < axes.size(); ++a)
        probe.values[axes[a].name] = axes[a].values[idx[a]];
      double s = true_score(st, "", probe);
      if (s > best.s_best + 1e-15) {
        best.s_best = s;
        best.pi_best = probe;
      }
      size_t a = 0;
      while (a < axes.size() && ++idx[a] == axes[a].values.size()) {
        idx[a] = 0;
        ++a;
      }
      done = a == axes.size();
    }
    return best;
  }

  BruteForceResult brute_force_best_control(const EnvState& st, double radius,
                                            double resolution) const {
    return brute_force_best_control(st, radius, resolution, spec_.optimum_fields);
  }

 private:
  EnvSpec spec_;
  ControlSchema schema_;
  ControlVector defaults_;
};

// ============================================================================
// Spec (de)serialization for config files
// ============================================================================

inline EnvSpec env_spec_from_json(const nlohmann::json& j) {
  EnvSpec spec;
  if (j.contains("archetypes")) {
    spec.label_archetypes.clear();
    for (const auto& [name, a] : j.at("archetypes").items()) {
      Archetype arch;
      arch.tail_rate = a.value("tail_rate", 0.1);
      arch.mu_mean = a.value("mu_mean", 0.5);
      arch.mu_spread = a.value("mu_spread", 0.2);
      arch.sigma_mean = a.value("sigma_mean", 0.1);
      spec.label_archetypes[name] = arch;
    }
  }
  spec.fallback_archetype = j.value("fallback", spec.fallback_archetype);
  spec.lipschitz = j.value("lipschitz", spec.lipschitz);
  spec.tau = j.value("tau", spec.tau);
  spec.seed = j.value("seed", spec.seed);
  spec.c_min = j.value("c_min", spec.c_min);
  spec.c_max = j.value("c_max", spec.c_max);
  spec.optimum_spread = j.value("optimum_spread", spec.optimum_spread);
  spec.state_jitter = j.value("state_jitter", spec.state_jitter);
  spec.planted = j.value("planted", spec.planted);
  spec.carveout_rho = j.value("carveout_rho", spec.carveout_rho);
  spec.carveout_gamma = j.value("carveout_gamma", spec.carveout_gamma);
  spec.carveout_radius = j.value("carveout_radius", spec.carveout_radius);
  if (j.contains("cost")) {
    const auto& c = j.at("cost");
    spec.cost.bias = c.value("bias", spec.cost.bias);
    spec.cost.per_max_token = c.value("per_max_token", spec.cost.per_max_token);
    spec.cost.per_verify_pass = c.value("per_verify_pass", spec.cost.per_verify_pass);
    spec.cost.per_gen_count = c.value("per_gen_count", spec.cost.per_gen_count);
    spec.cost.per_retrieval_mass =
        c.value("per_retrieval_mass", spec.cost.per_retrieval_mass);
  }
  return spec;
}

inline nlohmann::ordered_json env_spec_to_json(const EnvSpec& spec) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json arch = nlohmann::ordered_json::object();
  for (const auto& [name, a] : spec.label_archetypes)
    arch[name] = {{"tail_rate", a.tail_rate},
                  {"mu_mean", a.mu_mean},
                  {"mu_spread", a.mu_spread},
                  {"sigma_mean", a.sigma_mean}};
  j["archetypes"] = arch;
  j["fallback"] = spec.fallback_archetype;
  j["lipschitz"] = spec.lipschitz;
  j["tau"] = spec.tau;
  j["seed"] = spec.seed;
  j["c_min"] = spec.c_min;
  j["c_max"] = spec.c_max;
  j["optimum_spread"] = spec.optimum_spread;
  j["state_jitter"] = spec.state_jitter;
  j["planted"] = spec.planted;
  j["carveout_rho"] = spec.carveout_rho;
  j["carveout_gamma"] = spec.carveout_gamma;
  j["carveout_radius"] = spec.carveout_radius;
  j["cost"] = {{"bias", spec.cost.bias},
               {"per_max_token", spec.cost.per_max_token},
               {"per_verify_pass", spec.cost.per_verify_pass},
               {"per_gen_count", spec.cost.per_gen_count},
               {"per_retrieval_mass", spec.cost.per_retrieval_mass}};
  return j;
}

}  // namespace nlel::env
