#pragma once

// Control-vector schema: field specifications with bounds and defaults,
// strict validation of emitted vectors, the schema-normalized l-inf metric,
// trust-region projection around the defaults, and uniform quantization.
//
// Everything here is a pure function over immutable values. The geometry is
// the load-bearing part: all distances are measured coordinate-wise after
// mapping every field onto [0,1], and the projection guarantees that an
// applied vector never leaves the radius-r box around the defaults.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace nlel {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ============================================================================
// Field specifications
// ============================================================================

enum class FieldKind { continuous, integer, boolean, simplex_weights, enumeration };

inline const char* to_string(FieldKind k) {
  switch (k) {
    case FieldKind::continuous: return "continuous";
    case FieldKind::integer: return "integer";
    case FieldKind::boolean: return "boolean";
    case FieldKind::simplex_weights: return "simplex_weights";
    case FieldKind::enumeration: return "enum";
  }
  return "?";
}

inline FieldKind field_kind_from_string(std::string_view s) {
  if (s == "continuous") return FieldKind::continuous;
  if (s == "integer") return FieldKind::integer;
  if (s == "boolean") return FieldKind::boolean;
  if (s == "simplex_weights") return FieldKind::simplex_weights;
  if (s == "enum") return FieldKind::enumeration;
  throw std::invalid_argument("unknown field kind: " + std::string(s));
}

// Simplex weights keep map ordering so serialization is deterministic.
using Simplex = std::map<std::string, double>;
using FieldValue = std::variant<double, int64_t, bool, std::string, Simplex>;

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::continuous;
  double lower = 0.0;  // continuous/integer only
  double upper = 1.0;
  FieldValue default_value{};
  std::optional<int> quant_bits;          // levels = 2^bits over [lower,upper]
  std::vector<std::string> members;       // simplex corpora / enum values
};

struct ControlSchema {
  std::vector<FieldSpec> fields;
  std::string version;

  const FieldSpec* find(std::string_view name) const {
    for (const auto& f : fields)
      if (f.name == name) return &f;
    return nullptr;
  }
};

// Canonical field names the engine relies on.
namespace fields {
inline constexpr const char* temperature = "temperature";
inline constexpr const char* top_p = "top_p";
inline constexpr const char* max_tokens = "max_tokens";
inline constexpr const char* repetition_penalty = "repetition_penalty";
inline constexpr const char* branch_quota = "branch_quota";
inline constexpr const char* beta = "beta";
inline constexpr const char* gen_count = "gen_count";
inline constexpr const char* retrieval_weights = "retrieval_weights";
inline constexpr const char* verify_passes = "verify_passes";
inline constexpr const char* verify_strictness = "verify_strictness";
}  // namespace fields

inline constexpr const char* kNoneCorpus = "none";
inline constexpr double kSimplexSumTolerance = 1e-9;

// ============================================================================
// Control vectors
// ============================================================================

enum class Provenance { defaults, emitted, projected, clamped_budget };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::defaults: return "default";
    case Provenance::emitted: return "emitted";
    case Provenance::projected: return "projected";
    case Provenance::clamped_budget: return "clamped_budget";
  }
  return "?";
}

struct ControlVector {
  std::map<std::string, FieldValue> values;
  Provenance provenance = Provenance::defaults;
  std::string schema_version;

  bool operator==(const ControlVector& other) const {
    return values == other.values && provenance == other.provenance &&
           schema_version == other.schema_version;
  }
};

inline double number_at(const ControlVector& cv, std::string_view name) {
  const auto& v = cv.values.at(std::string(name));
  if (std::holds_alternative<double>(v)) return std::get<double>(v);
  if (std::holds_alternative<int64_t>(v))
    return static_cast<double>(std::get<int64_t>(v));
  throw std::invalid_argument("field is not numeric: " + std::string(name));
}

inline int64_t int_at(const ControlVector& cv, std::string_view name) {
  return std::get<int64_t>(cv.values.at(std::string(name)));
}

inline bool bool_at(const ControlVector& cv, std::string_view name) {
  return std::get<bool>(cv.values.at(std::string(name)));
}

inline const Simplex& simplex_at(const ControlVector& cv, std::string_view name) {
  return std::get<Simplex>(cv.values.at(std::string(name)));
}

inline const std::string& enum_at(const ControlVector& cv, std::string_view name) {
  return std::get<std::string>(cv.values.at(std::string(name)));
}

// Mass placed on corpora other than the reserved "none" entry.
inline double active_retrieval_mass(const ControlVector& cv) {
  double mass = 0.0;
  for (const auto& [corpus, w] : simplex_at(cv, fields::retrieval_weights))
    if (corpus != kNoneCorpus) mass += w;
  return mass;
}

// ============================================================================
// Schema construction
// ============================================================================

namespace detail {

inline void check_field_spec(const FieldSpec& f) {
  if (f.name.empty()) throw std::invalid_argument("field with empty name");
  switch (f.kind) {
    case FieldKind::continuous: {
      if (!(f.lower < f.upper))
        throw std::invalid_argument(f.name + ": lower must be < upper");
      double d = std::get<double>(f.default_value);
      if (d < f.lower || d > f.upper)
        throw std::invalid_argument(f.name + ": default out of bounds");
      break;
    }
    case FieldKind::integer: {
      if (!(f.lower < f.upper))
        throw std::invalid_argument(f.name + ": lower must be < upper");
      int64_t d = std::get<int64_t>(f.default_value);
      if (d < static_cast<int64_t>(f.lower) || d > static_cast<int64_t>(f.upper))
        throw std::invalid_argument(f.name + ": default out of bounds");
      break;
    }
    case FieldKind::boolean:
      std::get<bool>(f.default_value);
      break;
    case FieldKind::simplex_weights: {
      if (f.members.empty())
        throw std::invalid_argument(f.name + ": simplex needs members");
      const auto& d = std::get<Simplex>(f.default_value);
      double sum = 0.0;
      for (const auto& [k, v] : d) {
        if (std::find(f.members.begin(), f.members.end(), k) == f.members.end())
          throw std::invalid_argument(f.name + ": default names unknown member " + k);
        if (v < 0.0) throw std::invalid_argument(f.name + ": negative default weight");
        sum += v;
      }
      if (std::abs(sum - 1.0) > kSimplexSumTolerance)
        throw std::invalid_argument(f.name + ": default weights must sum to 1");
      break;
    }
    case FieldKind::enumeration: {
      if (f.members.empty())
        throw std::invalid_argument(f.name + ": enum needs members");
      const auto& d = std::get<std::string>(f.default_value);
      if (std::find(f.members.begin(), f.members.end(), d) == f.members.end())
        throw std::invalid_argument(f.name + ": default not an enum member");
      break;
    }
  }
  if (f.quant_bits && *f.quant_bits < 1)
    throw std::invalid_argument(f.name + ": quant_bits must be >= 1");
}

}  // namespace detail

inline ControlSchema make_schema(std::vector<FieldSpec> specs, std::string version) {
  for (size_t i = 0; i < specs.size(); ++i) {
    detail::check_field_spec(specs[i]);
    for (size_t j = i + 1; j < specs.size(); ++j)
      if (specs[i].name == specs[j].name)
        throw std::invalid_argument("duplicate field name: " + specs[i].name);
  }
  return ControlSchema{std::move(specs), std::move(version)};
}

// The operational contract: fields the engine itself actuates.
inline void require_control_contract(const ControlSchema& schema) {
  for (const char* name :
       {fields::temperature, fields::top_p, fields::max_tokens,
        fields::repetition_penalty, fields::branch_quota, fields::beta,
        fields::gen_count, fields::retrieval_weights, fields::verify_passes,
        fields::verify_strictness}) {
    if (!schema.find(name))
      throw std::invalid_argument(std::string("schema missing required field: ") + name);
  }
}

inline ControlVector schema_defaults(const ControlSchema& schema) {
  ControlVector cv;
  cv.provenance = Provenance::defaults;
  cv.schema_version = schema.version;
  for (const auto& f : schema.fields) {
    if (f.kind == FieldKind::simplex_weights) {
      // Materialize all members so vectors are always coordinate-complete.
      Simplex full;
      const auto& d = std::get<Simplex>(f.default_value);
      for (const auto& m : f.members) {
        auto it = d.find(m);
        full[m] = it == d.end() ? 0.0 : it->second;
      }
      cv.values[f.name] = full;
    } else {
      cv.values[f.name] = f.default_value;
    }
  }
  return cv;
}

// Ships with the engine: decoding, search, generation, retrieval and
// verification knobs with small grids around conservative defaults.
inline ControlSchema canonical_v1(
    std::vector<std::string> corpora = {kNoneCorpus, "math-lemmas", "general"}) {
  if (std::find(corpora.begin(), corpora.end(), kNoneCorpus) == corpora.end())
    corpora.insert(corpora.begin(), kNoneCorpus);
  Simplex default_weights;
  for (const auto& c : corpora) default_weights[c] = c == kNoneCorpus ? 1.0 : 0.0;

  std::vector<FieldSpec> f;
  f.push_back({fields::temperature, FieldKind::continuous, 0.0, 2.0, 0.7, {}, {}});
  f.push_back({fields::top_p, FieldKind::continuous, 0.05, 1.0, 0.95, {}, {}});
  f.push_back({fields::max_tokens, FieldKind::integer, 16, 1024, int64_t{256}, {}, {}});
  f.push_back({fields::repetition_penalty, FieldKind::continuous, 1.0, 2.0, 1.0, {}, {}});
  f.push_back({fields::branch_quota, FieldKind::integer, 1, 8, int64_t{2}, {}, {}});
  f.push_back({fields::beta, FieldKind::continuous, 0.0, 1.0, 0.3, {}, {}});
  f.push_back({fields::gen_count, FieldKind::integer, 1, 8, int64_t{2}, {}, {}});
  f.push_back({fields::retrieval_weights, FieldKind::simplex_weights, 0, 1,
               default_weights, {}, corpora});
  f.push_back({fields::verify_passes, FieldKind::integer, 0, 4, int64_t{1}, {}, {}});
  f.push_back({fields::verify_strictness, FieldKind::continuous, 0.0, 1.0, 0.5, {}, {}});
  return make_schema(std::move(f), "control-v1");
}

// ============================================================================
// Validation
// ============================================================================

enum class IssueCode {
  missing_field,
  type_mismatch,
  out_of_bounds,
  simplex_sum,
  unknown_field,
  unknown_member,
};

inline const char* to_string(IssueCode c) {
  switch (c) {
    case IssueCode::missing_field: return "missing_field";
    case IssueCode::type_mismatch: return "type_mismatch";
    case IssueCode::out_of_bounds: return "out_of_bounds";
    case IssueCode::simplex_sum: return "simplex_sum";
    case IssueCode::unknown_field: return "unknown_field";
    case IssueCode::unknown_member: return "unknown_member";
  }
  return "?";
}

struct ValidationIssue {
  std::string field;
  IssueCode code;
  std::string message;
};

struct ValidationResult {
  std::optional<ControlVector> vector;
  std::vector<ValidationIssue> issues;

  bool ok() const { return vector.has_value(); }
  bool has(IssueCode code, std::string_view field = {}) const {
    for (const auto& i : issues)
      if (i.code == code && (field.empty() || i.field == field)) return true;
    return false;
  }
  std::string describe() const {
    std::string out;
    for (const auto& i : issues) {
      if (!out.empty()) out += "; ";
      out += i.field + ": " + i.message;
    }
    return out;
  }
};

namespace detail {

inline bool integral_number(const json& j, int64_t& out) {
  if (j.is_number_integer()) {
    out = j.get<int64_t>();
    return true;
  }
  if (j.is_number_float()) {
    double d = j.get<double>();
    if (d == std::nearbyint(d)) {
      out = static_cast<int64_t>(d);
      return true;
    }
  }
  return false;
}

}  // namespace detail

// Strict validation of a parsed key-value structure against the schema.
// All violations are collected and returned as values; unknown extra fields
// are violations too, so the accepted control surface is exactly the schema.
inline ValidationResult validate(const ControlSchema& schema, const json& raw) {
  ValidationResult result;
  if (!raw.is_object()) {
    result.issues.push_back({"", IssueCode::type_mismatch, "payload is not an object"});
    return result;
  }

  ControlVector cv;
  cv.provenance = Provenance::emitted;
  cv.schema_version = schema.version;

  for (const auto& f : schema.fields) {
    auto it = raw.find(f.name);
    if (it == raw.end()) {
      result.issues.push_back({f.name, IssueCode::missing_field, "field missing"});
      continue;
    }
    const json& v = *it;
    switch (f.kind) {
      case FieldKind::continuous: {
        if (!v.is_number()) {
          result.issues.push_back({f.name, IssueCode::type_mismatch, "expected number"});
          break;
        }
        double d = v.get<double>();
        if (!std::isfinite(d) || d < f.lower || d > f.upper) {
          result.issues.push_back(
              {f.name, IssueCode::out_of_bounds,
               "value " + std::to_string(d) + " outside [" +
                   std::to_string(f.lower) + "," + std::to_string(f.upper) + "]"});
          break;
        }
        cv.values[f.name] = d;
        break;
      }
      case FieldKind::integer: {
        int64_t n = 0;
        if (!detail::integral_number(v, n)) {
          result.issues.push_back({f.name, IssueCode::type_mismatch, "expected integer"});
          break;
        }
        if (n < static_cast<int64_t>(f.lower) || n > static_cast<int64_t>(f.upper)) {
          result.issues.push_back({f.name, IssueCode::out_of_bounds,
                                   "value " + std::to_string(n) + " outside bounds"});
          break;
        }
        cv.values[f.name] = n;
        break;
      }
      case FieldKind::boolean: {
        if (!v.is_boolean()) {
          result.issues.push_back({f.name, IssueCode::type_mismatch, "expected boolean"});
          break;
        }
        cv.values[f.name] = v.get<bool>();
        break;
      }
      case FieldKind::simplex_weights: {
        if (!v.is_object()) {
          result.issues.push_back({f.name, IssueCode::type_mismatch, "expected weight map"});
          break;
        }
        Simplex w;
        for (const auto& m : f.members) w[m] = 0.0;
        bool bad = false;
        double sum = 0.0;
        for (const auto& [key, jv] : v.items()) {
          if (std::find(f.members.begin(), f.members.end(), key) == f.members.end()) {
            result.issues.push_back(
                {f.name, IssueCode::unknown_member, "unknown corpus: " + key});
            bad = true;
            continue;
          }
          if (!jv.is_number()) {
            result.issues.push_back({f.name, IssueCode::type_mismatch,
                                     "weight for " + key + " is not a number"});
            bad = true;
            continue;
          }
          double d = jv.get<double>();
          if (!std::isfinite(d) || d < -kSimplexSumTolerance) {
            result.issues.push_back({f.name, IssueCode::out_of_bounds,
                                     "negative weight for " + key});
            bad = true;
            continue;
          }
          w[key] = std::max(0.0, d);
          sum += std::max(0.0, d);
        }
        if (!bad && std::abs(sum - 1.0) > kSimplexSumTolerance) {
          result.issues.push_back({f.name, IssueCode::simplex_sum,
                                   "weights sum to " + std::to_string(sum)});
          bad = true;
        }
        if (!bad) cv.values[f.name] = w;
        break;
      }
      case FieldKind::enumeration: {
        if (!v.is_string()) {
          result.issues.push_back({f.name, IssueCode::type_mismatch, "expected string"});
          break;
        }
        std::string s = v.get<std::string>();
        if (std::find(f.members.begin(), f.members.end(), s) == f.members.end()) {
          result.issues.push_back({f.name, IssueCode::unknown_member,
                                   "not an enum member: " + s});
          break;
        }
        cv.values[f.name] = s;
        break;
      }
    }
  }

  for (const auto& [key, _] : raw.items())
    if (!schema.find(key))
      result.issues.push_back({key, IssueCode::unknown_field, "not in schema"});

  if (result.issues.empty()) result.vector = std::move(cv);
  return result;
}

// Re-check an in-memory vector (used by invariants and after projection).
inline ValidationResult revalidate(const ControlSchema& schema, const ControlVector& cv);

// ============================================================================
// Wire format: a single flat JSON object in schema field order
// ============================================================================

inline ojson to_wire(const ControlSchema& schema, const ControlVector& cv) {
  ojson out = ojson::object();
  for (const auto& f : schema.fields) {
    const FieldValue& v = cv.values.at(f.name);
    switch (f.kind) {
      case FieldKind::continuous: out[f.name] = std::get<double>(v); break;
      case FieldKind::integer: out[f.name] = std::get<int64_t>(v); break;
      case FieldKind::boolean: out[f.name] = std::get<bool>(v); break;
      case FieldKind::enumeration: out[f.name] = std::get<std::string>(v); break;
      case FieldKind::simplex_weights: {
        ojson w = ojson::object();
        const auto& s = std::get<Simplex>(v);
        for (const auto& m : f.members) w[m] = s.at(m);
        out[f.name] = w;
        break;
      }
    }
  }
  return out;
}

inline ValidationResult revalidate(const ControlSchema& schema, const ControlVector& cv) {
  ValidationResult r = validate(schema, json::parse(to_wire(schema, cv).dump()));
  if (r.vector) {
    r.vector->provenance = cv.provenance;
    r.vector->schema_version = cv.schema_version;
  }
  return r;
}

// ============================================================================
// Normalized geometry
// ============================================================================

namespace detail {

inline double norm_coord(const FieldSpec& f, const FieldValue& v) {
  switch (f.kind) {
    case FieldKind::continuous:
      return (std::get<double>(v) - f.lower) / (f.upper - f.lower);
    case FieldKind::integer:
      return (static_cast<double>(std::get<int64_t>(v)) - f.lower) /
             (f.upper - f.lower);
    case FieldKind::boolean:
      return std::get<bool>(v) ? 1.0 : 0.0;
    case FieldKind::enumeration: {
      const auto& s = std::get<std::string>(v);
      size_t idx = static_cast<size_t>(
          std::find(f.members.begin(), f.members.end(), s) - f.members.begin());
      return f.members.size() <= 1
                 ? 0.0
                 : static_cast<double>(idx) / static_cast<double>(f.members.size() - 1);
    }
    case FieldKind::simplex_weights:
      throw std::logic_error("simplex handled per-member");
  }
  return 0.0;
}

}  // namespace detail

// Unit-box coordinates: one per scalar field, one per simplex member.
inline std::vector<double> normalize(const ControlSchema& schema,
                                     const ControlVector& cv) {
  std::vector<double> coords;
  for (const auto& f : schema.fields) {
    const FieldValue& v = cv.values.at(f.name);
    if (f.kind == FieldKind::simplex_weights) {
      const auto& s = std::get<Simplex>(v);
      for (const auto& m : f.members) coords.push_back(s.at(m));
    } else {
      coords.push_back(detail::norm_coord(f, v));
    }
  }
  return coords;
}

inline std::vector<std::string> coordinate_names(const ControlSchema& schema) {
  std::vector<std::string> names;
  for (const auto& f : schema.fields) {
    if (f.kind == FieldKind::simplex_weights)
      for (const auto& m : f.members) names.push_back(f.name + "." + m);
    else
      names.push_back(f.name);
  }
  return names;
}

// Schema-normalized l-inf distance; requires both vectors from this schema.
inline double distance(const ControlSchema& schema, const ControlVector& a,
                       const ControlVector& b) {
  if (a.schema_version != schema.version || b.schema_version != schema.version)
    throw std::invalid_argument("schema version mismatch in distance()");
  std::vector<double> ca = normalize(schema, a), cb = normalize(schema, b);
  double d = 0.0;
  for (size_t i = 0; i < ca.size(); ++i) d = std::max(d, std::abs(ca[i] - cb[i]));
  return d;
}

// ============================================================================
// Trust-region projection
// ============================================================================

struct ProjectionResult {
  ControlVector vector;
  bool moved = false;
  double distance_to_center = 0.0;  // post-projection, normalized
  double slack = 0.0;               // excess beyond r actually realized
};

// Projects pi into the radius-r l-inf box around center (the schema defaults).
// Continuous coordinates clamp; integer/boolean/enum coordinates clamp then
// round toward the center, which keeps them strictly inside the box; simplex
// weights clamp per member and redistribute the mass deficit proportionally
// to the remaining per-member headroom, so the result stays inside the box
// and sums to one. Fixed points are returned unchanged, provenance intact.
inline ProjectionResult project_trust_region(const ControlSchema& schema,
                                             const ControlVector& pi,
                                             const ControlVector& center,
                                             double radius) {
  if (radius < 0.0 || radius > 1.0)
    throw std::invalid_argument("trust radius must be in [0,1]");
  if (pi.schema_version != schema.version ||
      center.schema_version != schema.version)
    throw std::invalid_argument("schema version mismatch in projection");

  ProjectionResult out;
  out.vector = pi;

  for (const auto& f : schema.fields) {
    const FieldValue& v = pi.values.at(f.name);
    const FieldValue& v0 = center.values.at(f.name);

    if (f.kind == FieldKind::simplex_weights) {
      const auto& w = std::get<Simplex>(v);
      const auto& w0 = std::get<Simplex>(v0);
      Simplex clamped;
      bool touched = false;
      for (const auto& m : f.members) {
        double lo = std::max(0.0, w0.at(m) - radius);
        double hi = std::min(1.0, w0.at(m) + radius);
        double c = std::clamp(w.at(m), lo, hi);
        if (c != w.at(m)) touched = true;
        clamped[m] = c;
      }
      if (!touched) continue;  // a valid simplex inside the box needs no rebalancing
      double sum = 0.0;
      for (const auto& m : f.members) sum += clamped[m];
      double deficit = 1.0 - sum;
      if (deficit > 0.0) {
        double headroom = 0.0;
        for (const auto& m : f.members)
          headroom += std::min(1.0, w0.at(m) + radius) - clamped[m];
        for (const auto& m : f.members)
          clamped[m] += deficit * (std::min(1.0, w0.at(m) + radius) - clamped[m]) / headroom;
      } else if (deficit < 0.0) {
        double give = 0.0;
        for (const auto& m : f.members)
          give += clamped[m] - std::max(0.0, w0.at(m) - radius);
        for (const auto& m : f.members)
          clamped[m] += deficit * (clamped[m] - std::max(0.0, w0.at(m) - radius)) / give;
      }
      out.vector.values[f.name] = clamped;
      out.moved = true;
      continue;
    }

    double x = detail::norm_coord(f, v);
    double x0 = detail::norm_coord(f, v0);
    double lo = std::max(0.0, x0 - radius);
    double hi = std::min(1.0, x0 + radius);
    if (x >= lo && x <= hi) continue;  // fixed point, keep original value bits
    double xc = std::clamp(x, lo, hi);

    switch (f.kind) {
      case FieldKind::continuous: {
        // Degenerate radius must reproduce the center exactly, not a
        // denormalization roundtrip of it.
        double value = xc == x0 ? std::get<double>(v0)
                                : f.lower + xc * (f.upper - f.lower);
        out.vector.values[f.name] = value;
        break;
      }
      case FieldKind::integer: {
        double real = f.lower + xc * (f.upper - f.lower);
        int64_t center_v = std::get<int64_t>(v0);
        int64_t rounded =
            real > static_cast<double>(center_v)
                ? static_cast<int64_t>(std::floor(real))
                : static_cast<int64_t>(std::ceil(real));
        rounded = std::clamp(rounded, static_cast<int64_t>(f.lower),
                             static_cast<int64_t>(f.upper));
        out.vector.values[f.name] = rounded;
        break;
      }
      case FieldKind::boolean:
        out.vector.values[f.name] = std::get<bool>(v0);
        break;
      case FieldKind::enumeration: {
        size_t card = f.members.size();
        double idx_real = xc * static_cast<double>(card - 1);
        const auto& s0 = std::get<std::string>(v0);
        size_t idx0 = static_cast<size_t>(
            std::find(f.members.begin(), f.members.end(), s0) - f.members.begin());
        size_t idx = idx_real > static_cast<double>(idx0)
                         ? static_cast<size_t>(std::floor(idx_real))
                         : static_cast<size_t>(std::ceil(idx_real));
        out.vector.values[f.name] = f.members[std::min(idx, card - 1)];
        break;
      }
      case FieldKind::simplex_weights:
        break;  // unreachable
    }
    out.moved = true;
  }

  if (out.moved) out.vector.provenance = Provenance::projected;
  out.distance_to_center = distance(schema, out.vector, center);
  // Anything below 1e-12 is floating-point dust from the simplex rebalance.
  out.slack = out.distance_to_center > radius + 1e-12
                  ? out.distance_to_center - radius
                  : 0.0;
  return out;
}

// ============================================================================
// Quantization
// ============================================================================

struct QuantizeResult {
  ControlVector vector;
  double step = 0.0;  // realized sup-norm step: max over fields of 1/(2^bits - 1)
};

// Snaps each named continuous field to the nearest of 2^bits uniform levels
// over its range; exact midpoints break toward the schema default.
inline QuantizeResult quantize(const ControlSchema& schema, const ControlVector& pi,
                               const std::map<std::string, int>& per_field_bits) {
  QuantizeResult out;
  out.vector = pi;
  const ControlVector center = schema_defaults(schema);

  for (const auto& [name, bits] : per_field_bits) {
    const FieldSpec* f = schema.find(name);
    if (!f) throw std::invalid_argument("quantize: unknown field " + name);
    if (f->kind != FieldKind::continuous)
      throw std::invalid_argument("quantize: field is not continuous: " + name);
    if (bits < 1) throw std::invalid_argument("quantize: bits must be >= 1");

    int64_t levels = int64_t{1} << bits;
    double h = 1.0 / static_cast<double>(levels - 1);
    out.step = std::max(out.step, h);

    double x = detail::norm_coord(*f, pi.values.at(name));
    double x0 = detail::norm_coord(*f, center.values.at(name));
    double k = x / h;
    double klo = std::floor(k), khi = std::ceil(k);
    double xq;
    if (klo == khi) {
      xq = klo * h;
    } else {
      double dlo = x - klo * h, dhi = khi * h - x;
      if (std::abs(dlo - dhi) <= 1e-12)
        xq = (x0 <= x) ? klo * h : khi * h;  // tie: toward the default
      else
        xq = dlo < dhi ? klo * h : khi * h;
    }
    if (std::abs(xq - x) <= 1e-12) continue;  // on a level already
    out.vector.values[name] = f->lower + xq * (f->upper - f->lower);
  }
  return out;
}

// ============================================================================
// Schema documents
// ============================================================================

inline ojson schema_to_json(const ControlSchema& schema) {
  ojson doc = ojson::object();
  doc["version"] = schema.version;
  ojson arr = ojson::array();
  for (const auto& f : schema.fields) {
    ojson j = ojson::object();
    j["name"] = f.name;
    j["kind"] = to_string(f.kind);
    switch (f.kind) {
      case FieldKind::continuous:
        j["lower"] = f.lower;
        j["upper"] = f.upper;
        j["default"] = std::get<double>(f.default_value);
        break;
      case FieldKind::integer:
        j["lower"] = static_cast<int64_t>(f.lower);
        j["upper"] = static_cast<int64_t>(f.upper);
        j["default"] = std::get<int64_t>(f.default_value);
        break;
      case FieldKind::boolean:
        j["default"] = std::get<bool>(f.default_value);
        break;
      case FieldKind::enumeration:
        j["members"] = f.members;
        j["default"] = std::get<std::string>(f.default_value);
        break;
      case FieldKind::simplex_weights: {
        j["members"] = f.members;
        ojson w = ojson::object();
        const auto& d = std::get<Simplex>(f.default_value);
        for (const auto& m : f.members) {
          auto it = d.find(m);
          w[m] = it == d.end() ? 0.0 : it->second;
        }
        j["default"] = w;
        break;
      }
    }
    if (f.quant_bits) j["bits"] = *f.quant_bits;
    arr.push_back(j);
  }
  doc["fields"] = arr;
  return doc;
}

inline ControlSchema schema_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("fields") || !doc["fields"].is_array())
    throw std::invalid_argument("schema document needs a fields array");
  std::vector<FieldSpec> specs;
  for (const auto& j : doc["fields"]) {
    FieldSpec f;
    f.name = j.at("name").get<std::string>();
    f.kind = field_kind_from_string(j.at("kind").get<std::string>());
    switch (f.kind) {
      case FieldKind::continuous:
        f.lower = j.at("lower").get<double>();
        f.upper = j.at("upper").get<double>();
        f.default_value = j.at("default").get<double>();
        break;
      case FieldKind::integer:
        f.lower = j.at("lower").get<double>();
        f.upper = j.at("upper").get<double>();
        f.default_value = j.at("default").get<int64_t>();
        break;
      case FieldKind::boolean:
        f.default_value = j.at("default").get<bool>();
        break;
      case FieldKind::enumeration:
        f.members = j.at("members").get<std::vector<std::string>>();
        f.default_value = j.at("default").get<std::string>();
        break;
      case FieldKind::simplex_weights: {
        f.members = j.at("members").get<std::vector<std::string>>();
        Simplex w;
        for (const auto& [k, v] : j.at("default").items()) w[k] = v.get<double>();
        f.default_value = w;
        break;
      }
    }
    if (j.contains("bits")) f.quant_bits = j["bits"].get<int>();
    specs.push_back(std::move(f));
  }
  return make_schema(std::move(specs),
                     doc.contains("version") ? doc["version"].get<std::string>() : "");
}

// Concise plain-text rendering used inside tuner prompts.
inline std::string render_schema_text(const ControlSchema& schema) {
  std::string out = "control schema " + schema.version + "\n";
  for (const auto& f : schema.fields) {
    out += "  " + f.name + " (" + to_string(f.kind) + ")";
    switch (f.kind) {
      case FieldKind::continuous: {
        char buf[96];
        std::snprintf(buf, sizeof(buf), " range [%g, %g] default %g", f.lower,
                      f.upper, std::get<double>(f.default_value));
        out += buf;
        break;
      }
      case FieldKind::integer: {
        char buf[96];
        std::snprintf(buf, sizeof(buf), " range [%lld, %lld] default %lld",
                      static_cast<long long>(f.lower),
                      static_cast<long long>(f.upper),
                      static_cast<long long>(std::get<int64_t>(f.default_value)));
        out += buf;
        break;
      }
      case FieldKind::boolean:
        out += std::get<bool>(f.default_value) ? " default true" : " default false";
        break;
      case FieldKind::enumeration:
      case FieldKind::simplex_weights: {
        out += " over {";
        for (size_t i = 0; i < f.members.size(); ++i) {
          if (i) out += ", ";
          out += f.members[i];
        }
        out += "}";
        break;
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace nlel
