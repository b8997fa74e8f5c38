#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace d2h {

// Deterministic random stream. std::mt19937_64 output is fixed by the
// standard; the distribution transforms below are hand-rolled because the
// std:: distribution algorithms are implementation-defined and the artifact
// promises byte-identical results across machines.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  /// Derive an independent stream from (seed, a, b), e.g. per tuple and role.
  static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t x = seed;
    x = mix(x ^ (0x9e3779b97f4a7c15ULL + a));
    x = mix(x ^ (0xbf58476d1ce4e5b9ULL + b));
    return Rng(x);
  }

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n), n >= 1. Modulo bias is irrelevant at these ranges
  /// but rejection keeps it exact.
  uint64_t uniform_int(uint64_t n) {
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do { x = eng_(); } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller. Both values of the pair are consumed
  /// per call (second discarded) so the stream advances deterministically.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Poisson draw. Inverse-transform for small means; for mean > 1000 a
  /// rounded normal approximation is used (threshold fixed for determinism).
  double poisson(double mean) {
    if (mean <= 0.0) return 0.0;
    if (mean > 1000.0) {
      double v = std::round(normal(mean, std::sqrt(mean)));
      return v < 0.0 ? 0.0 : v;
    }
    double l = std::exp(-mean), p = l, u = uniform();
    double k = 0.0, cum = p;
    while (u > cum && k < 10.0 * mean + 100.0) {
      k += 1.0;
      p *= mean / k;
      cum += p;
    }
    return k;
  }

 private:
  static uint64_t mix(uint64_t x) {
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27; x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }
  std::mt19937_64 eng_;
};

}  // namespace d2h
