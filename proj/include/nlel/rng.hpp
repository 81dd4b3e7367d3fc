#pragma once

// Deterministic, splittable random number generation.
//
// Every stochastic draw in the engine flows through one of these streams,
// keyed by an explicit derivation path (run seed -> node -> label -> draw).
// Streams derived from the same path are identical across runs and across
// call orderings, which is what makes traces reproducible byte-for-byte.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace nlel::rng {

inline constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// splitmix64 step (Vigna). Small state, passes BigCrush, trivially portable.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += kGolden);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + kGolden + (a << 6) + (a >> 2));
  return splitmix64(s);
}

inline uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Hash-chains a base seed through a path of stream identifiers.
inline uint64_t derive(uint64_t base, std::initializer_list<uint64_t> path) {
  uint64_t h = base;
  for (uint64_t p : path) h = mix(h, p);
  return h;
}

inline uint64_t derive(uint64_t base, std::string_view tag) {
  return mix(base, fnv1a64(tag));
}

class Stream {
 public:
  explicit Stream(uint64_t seed) : state_(splitmix64(seed)) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1). 53-bit mantissa, no transcendental calls.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Rejection-free modulo is fine here: n is
  // always tiny relative to 2^64 so the bias is unobservable.
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  bool coin(double p) { return uniform01() < p; }

  // Independent child stream; stable under any interleaving of calls on
  // sibling streams.
  Stream split(uint64_t stream_id) const {
    return Stream(mix(state_, stream_id));
  }

 private:
  uint64_t state_;
};

// Stable 16-hex-char digest for text (parent digests, config digests).
inline std::string short_digest(std::string_view text) {
  static const char* hex = "0123456789abcdef";
  uint64_t h = fnv1a64(text);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace nlel::rng
