#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace flare {

/// splitmix64 finalizer; used to derive well-separated child seeds so that
/// training, evaluation, augmentation and init all consume independent streams.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_stream(uint64_t master_seed, uint64_t stream_id) {
  return mix64(mix64(master_seed) ^ mix64(stream_id * 0x9e3779b97f4a7c15ULL + 1));
}

/// mt19937_64 with hand-rolled uniform/normal draws. std::*_distribution is
/// implementation-defined and may cache state; these are fixed formulas so a
/// seed reproduces the exact same byte stream on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  uint64_t bits() { return gen_(); }

  /// Uniform draw in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive, by rejection so every value is
  /// equally likely.
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return lo + static_cast<int>(x % span);
  }

  /// Standard normal via Box-Muller. Consumes two uniforms per draw and keeps
  /// no cached second value, so interleaving with other draws stays stateless.
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace flare
