#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "basis/values.hpp"

namespace basis {

enum class Family { zero, grpo, rloo, reinforcepp, basis };
enum class BasisVariant { unb, vop, rvg };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::zero: return "zero";
    case Family::grpo: return "grpo";
    case Family::rloo: return "rloo";
    case Family::reinforcepp: return "reinforcepp";
    case Family::basis: return "basis";
  }
  throw std::logic_error("unreachable");
}

inline std::string variant_name(BasisVariant v) {
  switch (v) {
    case BasisVariant::unb: return "unb";
    case BasisVariant::vop: return "vop";
    case BasisVariant::rvg: return "rvg";
  }
  throw std::logic_error("unreachable");
}

inline Family parse_family(const std::string& s) {
  if (s == "zero") return Family::zero;
  if (s == "grpo") return Family::grpo;
  if (s == "rloo") return Family::rloo;
  if (s == "reinforcepp") return Family::reinforcepp;
  if (s == "basis") return Family::basis;
  throw std::invalid_argument("unknown estimator family: '" + s + "'");
}

inline BasisVariant parse_variant(const std::string& s) {
  if (s == "unb") return BasisVariant::unb;
  if (s == "vop") return BasisVariant::vop;
  if (s == "rvg") return BasisVariant::rvg;
  throw std::invalid_argument("unknown basis variant: '" + s + "'");
}

/// Which baseline family to run and its parameters.
struct EstimatorSpec {
  Family family = Family::zero;
  BasisVariant variant = BasisVariant::unb;  // meaningful for basis only
  int group_size = 1;                        // rollouts per prompt
  double epsilon = 1e-6;                     // active-set threshold

  void validate() const {
    if (group_size < 1)
      throw std::invalid_argument("EstimatorSpec: group_size must be >= 1");
    if (family == Family::rloo && group_size < 2)
      throw std::invalid_argument("EstimatorSpec: rloo requires G >= 2");
    if (family == Family::basis && group_size != 1)
      throw std::invalid_argument("EstimatorSpec: basis requires G = 1");
    if (!(epsilon > 0.0) || !(epsilon < 0.5))
      throw std::invalid_argument("EstimatorSpec: epsilon must lie in (0, 0.5)");
  }

  std::string label() const {
    std::string s = family_name(family);
    if (family == Family::basis) s += "-" + variant_name(variant);
    s += "-G" + std::to_string(group_size);
    return s;
  }
};

/// Rewards for one training batch: B prompts with G rollouts each,
/// row-major. Prompt ids must be unique (they index the value table and
/// fix the canonical accumulation order of the batchwise estimators).
class RewardBatch {
 public:
  RewardBatch(std::vector<int> prompt_ids, std::vector<double> rewards,
              int group_size)
      : prompt_ids_(std::move(prompt_ids)),
        rewards_(std::move(rewards)),
        group_size_(group_size) {
    if (prompt_ids_.size() < 2)
      throw std::invalid_argument("RewardBatch: need at least 2 prompts");
    if (group_size_ < 1)
      throw std::invalid_argument("RewardBatch: group_size must be >= 1");
    if (rewards_.size() != prompt_ids_.size() * static_cast<std::size_t>(group_size_))
      throw std::invalid_argument("RewardBatch: rewards size mismatch");
    std::vector<int> sorted = prompt_ids_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("RewardBatch: duplicate prompt_ids");
    for (double r : rewards_)
      if (!std::isfinite(r))
        throw std::invalid_argument("RewardBatch: rewards must be finite");
  }

  int batch_size() const { return static_cast<int>(prompt_ids_.size()); }
  int group_size() const { return group_size_; }
  const std::vector<int>& prompt_ids() const { return prompt_ids_; }
  const std::vector<double>& rewards() const { return rewards_; }

  double at(int i, int g) const {
    return rewards_[static_cast<std::size_t>(i) * static_cast<std::size_t>(group_size_) +
                    static_cast<std::size_t>(g)];
  }

  std::span<const double> row(int i) const {
    return std::span<const double>(rewards_)
        .subspan(static_cast<std::size_t>(i) * static_cast<std::size_t>(group_size_),
                 static_cast<std::size_t>(group_size_));
  }

  bool is_binary() const {
    return std::all_of(rewards_.begin(), rewards_.end(),
                       [](double r) { return r == 0.0 || r == 1.0; });
  }

  /// Row indices in ascending prompt_id order. Batchwise estimators
  /// accumulate peer sums in this order so their output does not depend
  /// on how the batch rows happen to be arranged.
  std::vector<std::size_t> rows_by_prompt_id() const {
    std::vector<std::size_t> order(prompt_ids_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return prompt_ids_[a] < prompt_ids_[b];
    });
    return order;
  }

 private:
  std::vector<int> prompt_ids_;
  std::vector<double> rewards_;
  int group_size_;
};

/// A RewardBatch whose rewards are verified to be 0/1 at construction.
/// The basis estimators plug in the Bernoulli variance V(1-V) and are
/// only defined for such batches.
class BinaryRewardBatch {
 public:
  explicit BinaryRewardBatch(RewardBatch batch) : batch_(std::move(batch)) {
    if (!batch_.is_binary())
      throw std::invalid_argument(
          "BinaryRewardBatch: rewards must all be 0 or 1");
  }
  const RewardBatch& batch() const { return batch_; }

 private:
  RewardBatch batch_;
};

/// Baselines and advantages for one batch, row-major like the rewards.
struct AdvantageBatch {
  int batch_size = 0;
  int group_size = 0;
  std::vector<double> baselines;
  std::vector<double> advantages;   // rewards - baselines, elementwise
  std::vector<char> active;         // per prompt; all 1 for group families
  std::optional<double> selected_beta;
  std::optional<std::vector<double>> weight_row_sums;

  double baseline_at(int i, int g) const {
    return baselines[static_cast<std::size_t>(i) * static_cast<std::size_t>(group_size) +
                     static_cast<std::size_t>(g)];
  }
  double advantage_at(int i, int g) const {
    return advantages[static_cast<std::size_t>(i) * static_cast<std::size_t>(group_size) +
                      static_cast<std::size_t>(g)];
  }
};

namespace detail {

inline AdvantageBatch make_result(const RewardBatch& batch,
                                  std::vector<double> baselines) {
  AdvantageBatch out;
  out.batch_size = batch.batch_size();
  out.group_size = batch.group_size();
  out.baselines = std::move(baselines);
  out.advantages.resize(out.baselines.size());
  for (std::size_t k = 0; k < out.baselines.size(); ++k)
    out.advantages[k] = batch.rewards()[k] - out.baselines[k];
  out.active.assign(static_cast<std::size_t>(batch.batch_size()), 1);
  return out;
}

}  // namespace detail

/// Vanilla REINFORCE: no baseline, advantages equal rewards.
inline AdvantageBatch baseline_zero(const RewardBatch& batch) {
  return detail::make_result(
      batch, std::vector<double>(batch.rewards().size(), 0.0));
}

/// Within-prompt group mean baseline.
inline AdvantageBatch baseline_grpo(const RewardBatch& batch) {
  const int g_count = batch.group_size();
  std::vector<double> baselines(batch.rewards().size());
  for (int i = 0; i < batch.batch_size(); ++i) {
    double sum = 0.0;
    for (int g = 0; g < g_count; ++g) sum += batch.at(i, g);
    const double mean = sum / static_cast<double>(g_count);
    for (int g = 0; g < g_count; ++g)
      baselines[static_cast<std::size_t>(i) * g_count + g] = mean;
  }
  return detail::make_result(batch, std::move(baselines));
}

/// Leave-one-out group mean baseline; requires G >= 2.
inline AdvantageBatch baseline_rloo(const RewardBatch& batch) {
  const int g_count = batch.group_size();
  if (g_count < 2)
    throw std::invalid_argument("baseline_rloo: requires G >= 2");
  std::vector<double> baselines(batch.rewards().size());
  for (int i = 0; i < batch.batch_size(); ++i) {
    for (int g = 0; g < g_count; ++g) {
      double sum = 0.0;
      for (int h = 0; h < g_count; ++h)
        if (h != g) sum += batch.at(i, h);
      baselines[static_cast<std::size_t>(i) * g_count + g] =
          sum / static_cast<double>(g_count - 1);
    }
  }
  return detail::make_result(batch, std::move(baselines));
}

/// Global batch-mean baseline shared by every entry.
inline AdvantageBatch baseline_reinforcepp(const RewardBatch& batch) {
  double sum = 0.0;
  for (double r : batch.rewards()) sum += r;
  const double mean = sum / static_cast<double>(batch.rewards().size());
  return detail::make_result(
      batch, std::vector<double>(batch.rewards().size(), mean));
}

/// Active-set membership: strictly inside (epsilon, 1 - epsilon).
inline std::vector<char> active_set(std::span<const double> values,
                                    double epsilon) {
  if (!(epsilon > 0.0) || !(epsilon < 0.5))
    throw std::invalid_argument("active_set: epsilon must lie in (0, 0.5)");
  std::vector<char> flags(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    flags[i] = (values[i] > epsilon && values[i] < 1.0 - epsilon) ? 1 : 0;
  return flags;
}

namespace detail {

inline void check_weight_inputs(std::span<const double> values,
                                std::size_t target) {
  if (values.size() < 2)
    throw std::invalid_argument("basis weights: need at least 2 active prompts");
  if (target >= values.size())
    throw std::invalid_argument("basis weights: target out of range");
  for (double v : values)
    if (!(v > 0.0) || !(v < 1.0))
      throw std::invalid_argument(
          "basis weights: values must lie strictly inside (0, 1)");
}

}  // namespace detail

/// Minimum-variance unbiased leave-one-out weights for the target prompt:
///
///   w_tj = (V_t V_j / sigma_j^2) / sum_{k != t} V_k^2 / sigma_k^2,
///   sigma_j^2 = V_j (1 - V_j).
///
/// Computed through the grouped ratios V_j/sigma_j^2 = 1/(1-V_j) and
/// V_j^2/sigma_j^2 = V_j/(1-V_j). The returned vector is aligned with
/// `values` and has weight 0 at the target; it satisfies
/// sum_j w_tj V_j = V_t.
inline std::vector<double> basis_weights_unb(std::span<const double> values,
                                             std::size_t target) {
  detail::check_weight_inputs(values, target);
  double denom = 0.0;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (j != target) denom += values[j] / (1.0 - values[j]);
  std::vector<double> w(values.size(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j)
    if (j != target) w[j] = values[target] / (1.0 - values[j]) / denom;
  return w;
}

/// Unconstrained MSE-optimal shrinkage weights: same numerators as the
/// unbiased rule with an extra +1 in the denominator, shrinking the
/// borrowed baseline toward zero.
inline std::vector<double> basis_weights_vop(std::span<const double> values,
                                             std::size_t target) {
  detail::check_weight_inputs(values, target);
  double denom = 1.0;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (j != target) denom += values[j] / (1.0 - values[j]);
  std::vector<double> w(values.size(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j)
    if (j != target) w[j] = values[target] / (1.0 - values[j]) / denom;
  return w;
}

/// Ratio-average value-guided baseline: normalizes each peer reward by its
/// value, averages the ratios, and rescales to the target's value:
///
///   V_t / (m - 1) * sum_{j != t} r_j / V_j,   m = number of active prompts.
inline double basis_baseline_rvg(std::span<const double> values,
                                 std::span<const double> rewards,
                                 std::size_t target) {
  detail::check_weight_inputs(values, target);
  if (rewards.size() != values.size())
    throw std::invalid_argument("basis_baseline_rvg: size mismatch");
  double ratio_sum = 0.0;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (j != target) ratio_sum += rewards[j] / values[j];
  return values[target] * ratio_sum / static_cast<double>(values.size() - 1);
}

namespace detail {

/// Refined baselines for every row of a G=1 batch, given the per-row
/// initial values. Inactive rows and every row when fewer than 2 rows are
/// active get the zero fallback. Peer sums run over rows in ascending
/// prompt_id (id_order), never over inactive rows.
inline void refined_baselines(std::span<const double> values,
                              std::span<const double> rewards,
                              std::span<const char> active,
                              std::span<const std::size_t> id_order,
                              BasisVariant variant,
                              std::vector<double>& baselines,
                              std::vector<double>* row_sums) {
  const std::size_t n = values.size();
  baselines.assign(n, 0.0);
  if (row_sums) row_sums->assign(n, 0.0);
  std::size_t n_active = 0;
  for (char a : active) n_active += a ? 1 : 0;
  if (n_active < 2) return;

  for (std::size_t t = 0; t < n; ++t) {
    if (!active[t]) continue;
    double reward_term = 0.0;  // sum over peers of r_j / (1 - V_j)  (unb/vop)
    double value_term = 0.0;   // sum over peers of V_j / (1 - V_j)  (unb/vop)
    double unit_term = 0.0;    // sum over peers of 1 / (1 - V_j)    (row sums)
    double ratio_term = 0.0;   // sum over peers of r_j / V_j        (rvg)
    double inv_term = 0.0;     // sum over peers of 1 / V_j          (rvg rows)
    for (std::size_t j : id_order) {
      if (j == t || !active[j]) continue;
      if (variant == BasisVariant::rvg) {
        ratio_term += rewards[j] / values[j];
        inv_term += 1.0 / values[j];
      } else {
        reward_term += rewards[j] / (1.0 - values[j]);
        value_term += values[j] / (1.0 - values[j]);
        unit_term += 1.0 / (1.0 - values[j]);
      }
    }
    switch (variant) {
      case BasisVariant::unb:
        baselines[t] = values[t] * reward_term / value_term;
        if (row_sums) (*row_sums)[t] = values[t] * unit_term / value_term;
        break;
      case BasisVariant::vop:
        baselines[t] = values[t] * reward_term / (1.0 + value_term);
        if (row_sums) (*row_sums)[t] = values[t] * unit_term / (1.0 + value_term);
        break;
      case BasisVariant::rvg: {
        const double peers = static_cast<double>(n_active - 1);
        baselines[t] = values[t] * ratio_term / peers;
        if (row_sums) (*row_sums)[t] = values[t] * inv_term / peers;
        break;
      }
    }
  }
}

}  // namespace detail

/// Batchwise single-rollout advantages at a fixed tilt strength.
///
/// Initial values are the tilted table values soft_value(p_hat_i, beta);
/// prompts outside the active set (and every prompt when fewer than two
/// are active) fall back to the zero baseline.
inline AdvantageBatch basis_advantages(const BinaryRewardBatch& binary,
                                       const ValueTable& table, double beta,
                                       BasisVariant variant, double epsilon) {
  const RewardBatch& batch = binary.batch();
  if (batch.group_size() != 1)
    throw std::invalid_argument("basis_advantages: requires G = 1");

  const std::size_t n = static_cast<std::size_t>(batch.batch_size());
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i)
    values[i] = soft_value(table.p_hat(batch.prompt_ids()[i]), beta);

  const std::vector<char> active = active_set(values, epsilon);
  const std::vector<std::size_t> order = batch.rows_by_prompt_id();
  std::vector<double> baselines;
  std::vector<double> row_sums;
  detail::refined_baselines(values, batch.rewards(), active, order, variant,
                            baselines, &row_sums);

  AdvantageBatch out = detail::make_result(batch, std::move(baselines));
  out.active = active;
  out.weight_row_sums = std::move(row_sums);
  return out;
}

/// Group-family dispatcher. The basis family needs a value table and tilt
/// calibration; see basis_step in calibration.hpp.
inline AdvantageBatch compute_baseline(const EstimatorSpec& spec,
                                       const RewardBatch& batch) {
  spec.validate();
  switch (spec.family) {
    case Family::zero: return baseline_zero(batch);
    case Family::grpo: return baseline_grpo(batch);
    case Family::rloo: return baseline_rloo(batch);
    case Family::reinforcepp: return baseline_reinforcepp(batch);
    case Family::basis:
      throw std::invalid_argument(
          "compute_baseline: basis needs a value table; use basis_step");
  }
  throw std::logic_error("unreachable");
}

}  // namespace basis
