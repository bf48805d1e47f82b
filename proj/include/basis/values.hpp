#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "basis/env.hpp"
#include "basis/parallel.hpp"
#include "basis/rng.hpp"

namespace basis {

/// Largest exponent fed to std::exp directly; beyond it the reciprocal
/// form of the tilt is used instead (exp(710) would overflow a double).
inline constexpr double kMaxSafeExponent = 700.0;

/// Strictly increasing grid of positive tilt strengths.
class BetaGrid {
 public:
  explicit BetaGrid(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("BetaGrid: empty grid");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!(values_[i] > 0.0))
        throw std::invalid_argument("BetaGrid: values must be positive");
      if (i > 0 && !(values_[i] > values_[i - 1]))
        throw std::invalid_argument("BetaGrid: values must be strictly increasing");
    }
  }

  /// The standard 230-point grid: 200 steps of width 0.01 covering
  /// [0.01, 2.00], then 30 steps of width 0.1 covering [2.1, 5.0].
  static BetaGrid default_grid() {
    std::vector<double> v;
    v.reserve(230);
    for (int i = 1; i <= 200; ++i) v.push_back(static_cast<double>(i) / 100.0);
    for (int i = 21; i <= 50; ++i) v.push_back(static_cast<double>(i) / 10.0);
    return BetaGrid(std::move(v));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_.at(i); }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
};

/// Expected reward of the KL-tilted reference policy for a binary-reward
/// prompt with reference success probability p_hat:
///
///   p_hat e^{1/beta} / (1 - p_hat + p_hat e^{1/beta})
///
/// Monotone nondecreasing in p_hat, nonincreasing in beta, with fixed
/// points at p_hat in {0, 1}. When 1/beta exceeds the safe exponent
/// range the algebraically equivalent reciprocal form
/// 1 / (1 + ((1-p_hat)/p_hat) e^{-1/beta}) is used; *overflow_guarded
/// reports which branch ran.
inline double soft_value(double p_hat, double beta,
                         bool* overflow_guarded = nullptr) {
  if (!(beta > 0.0)) throw std::invalid_argument("soft_value: beta must be positive");
  if (!(p_hat >= 0.0) || !(p_hat <= 1.0))
    throw std::invalid_argument("soft_value: p_hat must lie in [0, 1]");
  if (overflow_guarded) *overflow_guarded = false;
  if (p_hat <= 0.0) return 0.0;
  if (p_hat >= 1.0) return 1.0;

  const double inv_beta = 1.0 / beta;
  double v;
  if (inv_beta <= kMaxSafeExponent) {
    const double e = std::exp(inv_beta);
    v = p_hat * e / (1.0 - p_hat + p_hat * e);
  } else {
    if (overflow_guarded) *overflow_guarded = true;
    v = 1.0 / (1.0 + ((1.0 - p_hat) / p_hat) * std::exp(-inv_beta));
  }
  return std::clamp(v, 0.0, 1.0);
}

/// Self-normalized plug-in estimate of the tilted value on an arbitrary
/// empirical reward sample:  sum r e^{r/beta} / sum e^{r/beta},
/// computed with max-shift stabilization of the exponent.
inline double soft_value_general(std::span<const double> rewards, double beta) {
  if (rewards.empty())
    throw std::invalid_argument("soft_value_general: empty reward sample");
  if (!(beta > 0.0))
    throw std::invalid_argument("soft_value_general: beta must be positive");
  const double m = *std::max_element(rewards.begin(), rewards.end());
  double num = 0.0;
  double den = 0.0;
  for (double r : rewards) {
    const double w = std::exp((r - m) / beta);
    num += r * w;
    den += w;
  }
  return num / den;
}

struct ValueEntry {
  int prompt_id = 0;
  int n = 0;          // reference sample count
  double p_hat = 0.0; // empirical mean reward under the reference policy
};

/// Cached reference-policy reward statistics for a population, plus the
/// tilt grid used to evaluate them. Entries are stored densely by
/// prompt_id. Tilted values are evaluated lazily from p_hat rather than
/// materialized per grid point.
class ValueTable {
 public:
  ValueTable(std::vector<ValueEntry> entries, BetaGrid grid,
             std::uint64_t reference_seed)
      : entries_(std::move(entries)),
        grid_(std::move(grid)),
        reference_seed_(reference_seed) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const ValueEntry& e = entries_[i];
      if (e.prompt_id != static_cast<int>(i))
        throw std::invalid_argument("ValueTable: entries must be dense in prompt_id");
      if (e.n < 1) throw std::invalid_argument("ValueTable: n must be >= 1");
      if (!(e.p_hat >= 0.0) || !(e.p_hat <= 1.0))
        throw std::invalid_argument("ValueTable: p_hat must lie in [0, 1]");
    }
  }

  const std::vector<ValueEntry>& entries() const { return entries_; }
  const BetaGrid& grid() const { return grid_; }
  std::uint64_t reference_seed() const { return reference_seed_; }

  bool contains(int prompt_id) const {
    return prompt_id >= 0 && static_cast<std::size_t>(prompt_id) < entries_.size();
  }

  double p_hat(int prompt_id) const {
    if (!contains(prompt_id))
      throw std::out_of_range("ValueTable: unknown prompt_id");
    return entries_[static_cast<std::size_t>(prompt_id)].p_hat;
  }

 private:
  std::vector<ValueEntry> entries_;
  BetaGrid grid_;
  std::uint64_t reference_seed_;
};

/// Samples n_per_prompt rollouts per prompt from the population's current
/// (reference) logits and records the empirical mean rewards.
///
/// Prompt i draws from the stream derive_seed(seed, i), so the table does
/// not depend on evaluation order or thread count.
inline ValueTable build_table(const PromptPopulation& pop, int n_per_prompt,
                              BetaGrid grid, std::uint64_t seed) {
  if (n_per_prompt < 1)
    throw std::invalid_argument("build_table: n_per_prompt must be >= 1");
  std::vector<ValueEntry> entries(pop.size());
  parallel::for_each_index(pop.size(), [&](std::size_t i) {
    const PromptState& p = pop.prompts[i];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p.prompt_id)));
    double total = 0.0;
    for (int s = 0; s < n_per_prompt; ++s) total += sample_rollout(p, rng).reward;
    entries[i] = ValueEntry{p.prompt_id, n_per_prompt,
                            total / static_cast<double>(n_per_prompt)};
  });
  return ValueTable(std::move(entries), std::move(grid), seed);
}

/// Tilted value of one cached prompt at one grid point.
inline double eval_table(const ValueTable& table, int prompt_id,
                         std::size_t beta_index) {
  if (beta_index >= table.grid().size())
    throw std::out_of_range("eval_table: beta_index out of range");
  return soft_value(table.p_hat(prompt_id), table.grid()[beta_index]);
}

}  // namespace basis
