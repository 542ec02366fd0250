#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "optlab/errors.hpp"

namespace optlab {

// SplitMix64. Self-contained so that every stream in the project is
// bit-reproducible across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1), safe for log().
  double next_open01() {
    double u;
    do {
      u = next_double();
    } while (u <= 0.0);
    return u;
  }

  // Unbiased uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    if (n == 0) throw ContractError("Rng::next_below: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller (cosine branch only).
  double next_normal() {
    double u1 = next_open01();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // +1 or -1 with equal probability.
  double next_rademacher() { return (next_u64() & 1ULL) ? 1.0 : -1.0; }

  // Gamma(alpha, 1) by Marsaglia-Tsang, with the boost trick for alpha < 1.
  double next_gamma(double alpha) {
    if (alpha <= 0.0) throw ContractError("Rng::next_gamma: alpha must be positive");
    if (alpha < 1.0) {
      double u = next_open01();
      return next_gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = next_normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = next_open01();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // log of a Gamma(alpha, 1) draw. For tiny alpha the draw itself underflows
  // to zero, so Dirichlet rows are normalized from log draws instead.
  double next_log_gamma(double alpha) {
    if (alpha <= 0.0) throw ContractError("Rng::next_log_gamma: alpha must be positive");
    if (alpha < 1.0) return next_log_gamma(alpha + 1.0) + std::log(next_open01()) / alpha;
    return std::log(next_gamma(alpha));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream seed from a base seed and a salt (e.g. a
  // step or epoch index), so resumed runs reproduce the original stream.
  static uint64_t mix(uint64_t seed, uint64_t salt) {
    Rng r(seed ^ (salt * 0xD6E8FEB86659FD93ULL + 0xA5A5A5A5A5A5A5A5ULL));
    return r.next_u64();
  }

 private:
  uint64_t state_;
};

// FNV-1a, used for content hashes and config digests.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace optlab
