#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace segxray {

// Counter-based generator: every draw is a pure function of (seed, counter),
// so identical state reproduces identical sequences on any platform and
// draws can be indexed randomly (no sequential state to replay).
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x9E3779B97F4A7C15ULL));
}

struct RngStream {
  uint64_t seed = 0;
  uint64_t counter = 0;

  uint64_t value_at(uint64_t i) const { return mix64(seed, i); }
  uint64_t next_u64() { return value_at(counter++); }

  // uniform in [0, 1), 53 mantissa bits
  double next_f64() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi], inclusive
  int next_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_f64(); }

  // Box-Muller; avoids std::normal_distribution, whose sequence is
  // implementation-defined.
  double next_normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = next_f64();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent child stream; children of distinct ids do not collide.
  RngStream substream(uint64_t id) const { return RngStream{mix64(seed ^ 0xA5A5A5A5A5A5A5A5ULL, id), 0}; }
};

// Stateless helpers for mask-style draws indexed by element.
inline double uniform01_at(uint64_t key, uint64_t i) {
  return static_cast<double>(mix64(key, i) >> 11) * 0x1.0p-53;
}

inline double normal_at(uint64_t key, uint64_t i) {
  double u1 = (static_cast<double>(mix64(key, 2 * i) >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(mix64(key, 2 * i + 1) >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace segxray
