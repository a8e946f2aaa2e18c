// Deterministic random source. All sampling goes through this wrapper so that
// results depend only on the seed, not on libstdc++'s distribution internals.
#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "disent/errors.hpp"

namespace disent {

// splitmix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ b); }

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix64(mix_seed(a, b) ^ c);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ValidationError("Rng::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
    std::uint64_t r;
    do {
      r = eng_();
    } while (r >= limit);
    return r % n;
  }

  // Standard normal via Box-Muller. Stateless (no cached spare) so that the
  // draw sequence is a pure function of the engine state.
  double normal() {
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename Real>
  void fill_normal(Real* dst, std::size_t n, double stddev = 1.0) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = Real(stddev * normal());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // Uniformly random derangement of {0..n-1}: shuffle, retry on any fixed
  // point. Requires n >= 2 (no derangement of a single element exists).
  std::vector<int> derangement(int n) {
    if (n < 2) throw ValidationError("derangement: need at least 2 elements");
    std::vector<int> perm(n);
    while (true) {
      for (int i = 0; i < n; ++i) perm[i] = i;
      shuffle(perm);
      bool ok = true;
      for (int i = 0; i < n; ++i)
        if (perm[i] == i) {
          ok = false;
          break;
        }
      if (ok) return perm;
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace disent
