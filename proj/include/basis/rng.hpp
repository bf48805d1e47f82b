#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace basis {

/// Derives an independent child seed from a base seed and a tag.
///
/// This is the only stream-derivation primitive in the project: every
/// parallel or repeated computation takes seeds of the form
/// derive_seed(master, index) so that results never depend on scheduling
/// or on how many draws earlier work consumed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // SplitMix64 finalizer applied to the combined word.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag1,
                                 std::uint64_t tag2) {
  return derive_seed(derive_seed(base, tag1), tag2);
}

/// Deterministic SplitMix64 stream.
///
/// All randomized operations in the library take an explicit Rng so that
/// equal seeds give bit-identical results on every platform. Distribution
/// sampling (categorical, normal, gamma, beta) is implemented here rather
/// than with <random> distributions, whose output is not portable across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t next_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("next_index: n must be positive");
    using u128 = unsigned __int128;
    return static_cast<std::size_t>(
        (static_cast<u128>(next_u64()) * static_cast<u128>(n)) >> 64);
  }

  /// Standard normal via Box-Muller (two uniforms per call, no cached spare).
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
  double next_gamma(double shape) {
    if (!(shape > 0.0))
      throw std::invalid_argument("next_gamma: shape must be positive");
    if (shape < 1.0) {
      // Boost to shape+1 and scale back.
      const double u = next_double();
      return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = next_normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = next_double();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  /// Beta(a, b) as X/(X+Y) with independent gammas.
  double next_beta(double a, double b) {
    const double x = next_gamma(a);
    const double y = next_gamma(b);
    return x / (x + y);
  }

  /// First `take` entries of a seeded Fisher-Yates shuffle of [0, n):
  /// a uniform sample of `take` distinct indices, in selection order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t take) {
    if (take > n)
      throw std::invalid_argument(
          "sample_without_replacement: take exceeds n");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + next_index(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    return idx;
  }

 private:
  std::uint64_t state_;
};

}  // namespace basis
