#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "basis/estimators.hpp"
#include "basis/parallel.hpp"
#include "basis/values.hpp"

namespace basis {

/// Outcome of the per-step tilt search. Grid points where fewer than two
/// prompts are active carry a NaN objective. The argmin runs over the
/// grid points whose active set is largest: means of squared residuals
/// taken over different active sets are not comparable, and tilts that
/// saturate part of the batch out of the active set would otherwise win
/// on selection noise alone. If no point has at least two active prompts
/// the result is the uncalibrated sentinel and the step falls back to
/// zero baselines throughout.
struct CalibrationResult {
  bool calibrated = false;
  std::size_t beta_index = 0;
  double beta = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> objective;   // per grid point; NaN where excluded
  std::vector<int> active_counts;  // per grid point
};

/// Selects the tilt strength whose refined baselines best predict the
/// observed batch rewards: the grid argmin of the mean squared residual
/// (r_i - refined_i)^2 over that grid point's active set. Ties break
/// toward the smallest tilt.
inline CalibrationResult select_beta(const BinaryRewardBatch& binary,
                                     const ValueTable& table,
                                     BasisVariant variant, double epsilon) {
  const RewardBatch& batch = binary.batch();
  if (batch.group_size() != 1)
    throw std::invalid_argument("select_beta: requires G = 1");

  const std::size_t rows = static_cast<std::size_t>(batch.batch_size());
  std::vector<double> p_hats(rows);
  for (std::size_t i = 0; i < rows; ++i)
    p_hats[i] = table.p_hat(batch.prompt_ids()[i]);
  const std::vector<std::size_t> order = batch.rows_by_prompt_id();

  const BetaGrid& grid = table.grid();
  CalibrationResult result;
  result.objective.assign(grid.size(),
                          std::numeric_limits<double>::quiet_NaN());
  result.active_counts.assign(grid.size(), 0);

  parallel::for_each_index(grid.size(), [&](std::size_t gi) {
    const double beta = grid[gi];
    std::vector<double> values(rows);
    for (std::size_t i = 0; i < rows; ++i)
      values[i] = soft_value(p_hats[i], beta);
    const std::vector<char> active = active_set(values, epsilon);
    int count = 0;
    for (char a : active) count += a ? 1 : 0;
    result.active_counts[gi] = count;
    if (count < 2) return;

    std::vector<double> baselines;
    detail::refined_baselines(values, batch.rewards(), active, order, variant,
                              baselines, nullptr);
    double sum = 0.0;
    for (std::size_t t : order) {
      if (!active[t]) continue;
      const double residual = batch.rewards()[t] - baselines[t];
      sum += residual * residual;
    }
    result.objective[gi] = sum / static_cast<double>(count);
  });

  const int max_active =
      *std::max_element(result.active_counts.begin(), result.active_counts.end());
  if (max_active < 2) return result;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    if (result.active_counts[gi] != max_active) continue;
    if (!result.calibrated || result.objective[gi] <
                                  result.objective[result.beta_index]) {
      result.calibrated = true;
      result.beta_index = gi;
    }
  }
  result.beta = grid[result.beta_index];
  return result;
}

/// One full batchwise advantage step: calibrate the tilt, then compute
/// the refined advantages at the selected value. The output equals the
/// literal composition of select_beta and basis_advantages; the sentinel
/// path degenerates to zero baselines with no selected tilt and no
/// active prompts.
inline AdvantageBatch basis_step(const BinaryRewardBatch& binary,
                                 const ValueTable& table, BasisVariant variant,
                                 double epsilon) {
  const CalibrationResult calibration =
      select_beta(binary, table, variant, epsilon);
  if (!calibration.calibrated) {
    AdvantageBatch out = baseline_zero(binary.batch());
    out.active.assign(out.active.size(), 0);
    out.selected_beta.reset();
    return out;
  }
  AdvantageBatch out =
      basis_advantages(binary, table, calibration.beta, variant, epsilon);
  out.selected_beta = calibration.beta;
  return out;
}

}  // namespace basis
