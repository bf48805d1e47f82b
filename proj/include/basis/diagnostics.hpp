#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "basis/calibration.hpp"
#include "basis/env.hpp"
#include "basis/estimators.hpp"
#include "basis/parallel.hpp"
#include "basis/values.hpp"

namespace basis {

/// Stream layout shared by every diagnostics protocol. Repeat r of a run
/// seeded with `seed` draws its batch membership from
/// Rng(derive_seed(seed, r, kBatchStream)), its rewards from
/// Rng(derive_seed(seed, r, kRewardStream)) (prompt-major then
/// group-index), and, in Monte-Carlo oracle mode, its oracle rollouts
/// from Rng(derive_seed(seed, r, kOracleStream)). Repeats are therefore
/// independent of execution order and thread count, and a serial
/// recomputation reproduces them bit-exactly.
inline constexpr std::uint64_t kBatchStream = 1;
inline constexpr std::uint64_t kRewardStream = 2;
inline constexpr std::uint64_t kOracleStream = 3;

struct DiagnosticsConfig {
  int batch_size = 64;
  int repeats = 10;
  std::vector<int> group_sizes = {1, 2, 4, 8};
  int heterogeneity_bins = 5;
  int heterogeneity_batches = 500;
  std::vector<double> difficulty_bin_edges = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::uint64_t seed = 0;
  std::vector<EstimatorSpec> estimators;
  // 0 scores against exact values; > 0 estimates each oracle value from
  // that many extra rollouts, disjoint from the estimator rewards.
  int mc_oracle_rollouts = 0;

  void validate() const {
    if (batch_size < 2)
      throw std::invalid_argument("DiagnosticsConfig: batch_size must be >= 2");
    if (repeats < 1)
      throw std::invalid_argument("DiagnosticsConfig: repeats must be >= 1");
    if (heterogeneity_bins < 1 || heterogeneity_batches < 1)
      throw std::invalid_argument("DiagnosticsConfig: bad heterogeneity setup");
    if (difficulty_bin_edges.size() < 2)
      throw std::invalid_argument("DiagnosticsConfig: need at least one bin");
    for (std::size_t i = 1; i < difficulty_bin_edges.size(); ++i)
      if (!(difficulty_bin_edges[i] > difficulty_bin_edges[i - 1]))
        throw std::invalid_argument(
            "DiagnosticsConfig: bin edges must be strictly increasing");
    if (mc_oracle_rollouts < 0)
      throw std::invalid_argument("DiagnosticsConfig: bad oracle rollouts");
    if (estimators.empty())
      throw std::invalid_argument("DiagnosticsConfig: no estimators given");
    for (const EstimatorSpec& spec : estimators) spec.validate();
  }

  int max_group_size() const {
    int g = 1;
    for (const EstimatorSpec& spec : estimators)
      g = std::max(g, spec.group_size);
    return g;
  }
};

/// The standard estimator roster for a group-size sweep: the group mean
/// at every size, leave-one-out where it is defined, and the two
/// single-rollout batchwise rules.
inline std::vector<EstimatorSpec> default_estimators(
    const std::vector<int>& group_sizes, double epsilon = 1e-6) {
  std::vector<EstimatorSpec> specs;
  const auto add = [&](Family family, int g, BasisVariant variant) {
    EstimatorSpec spec;
    spec.family = family;
    spec.variant = variant;
    spec.group_size = g;
    spec.epsilon = epsilon;
    spec.validate();
    specs.push_back(spec);
  };
  for (int g : group_sizes) add(Family::grpo, g, BasisVariant::unb);
  for (int g : group_sizes)
    if (g >= 2) add(Family::rloo, g, BasisVariant::unb);
  add(Family::reinforcepp, 1, BasisVariant::unb);
  add(Family::basis, 1, BasisVariant::unb);
  return specs;
}

struct ReportRow {
  std::string estimator;  // family name
  std::string variant;    // basis variant, empty otherwise
  int group_size = 1;
  double bin_lo = 0.0;
  double bin_hi = 1.0;
  double mse = 0.0;
  double collapse_freq = 0.0;  // fraction of baselines exactly 0 or 1
  long n = 0;                  // observations behind the row
};

struct DiagnosticsReport {
  std::string protocol;
  std::uint64_t seed = 0;
  int batch_size = 0;
  int repeats = 0;
  std::vector<ReportRow> rows;
};

namespace detail {

struct PromptOutcome {
  double sq_err = 0.0;         // mean over the G baselines of (b - V)^2
  double collapse = 0.0;       // fraction of the G baselines exactly 0 or 1
};

/// Evaluates one estimator on one sampled batch: the first spec.group_size
/// reward columns feed the baseline rule, and each prompt's baseline(s)
/// are scored against its exact current value.
inline std::vector<PromptOutcome> evaluate_estimator(
    const EstimatorSpec& spec, const std::vector<int>& prompt_ids,
    const std::vector<double>& true_values,
    const std::vector<double>& rewards_full, int max_group,
    const ValueTable* table) {
  const int b_count = static_cast<int>(prompt_ids.size());
  const int g_count = spec.group_size;
  std::vector<double> rewards(static_cast<std::size_t>(b_count) * g_count);
  for (int i = 0; i < b_count; ++i)
    for (int g = 0; g < g_count; ++g)
      rewards[static_cast<std::size_t>(i) * g_count + g] =
          rewards_full[static_cast<std::size_t>(i) * max_group + g];
  RewardBatch batch(prompt_ids, std::move(rewards), g_count);

  AdvantageBatch result;
  if (spec.family == Family::basis) {
    if (!table)
      throw std::invalid_argument("basis estimator needs a value table");
    result = basis_step(BinaryRewardBatch(std::move(batch)), *table,
                        spec.variant, spec.epsilon);
  } else {
    result = compute_baseline(spec, batch);
  }

  std::vector<PromptOutcome> outcomes(static_cast<std::size_t>(b_count));
  for (int i = 0; i < b_count; ++i) {
    double sq = 0.0;
    double collapsed = 0.0;
    for (int g = 0; g < g_count; ++g) {
      const double b = result.baseline_at(i, g);
      const double d = b - true_values[static_cast<std::size_t>(i)];
      sq += d * d;
      if (b == 0.0 || b == 1.0) collapsed += 1.0;
    }
    outcomes[static_cast<std::size_t>(i)] =
        PromptOutcome{sq / g_count, collapsed / g_count};
  }
  return outcomes;
}

struct SampledBatch {
  std::vector<int> prompt_ids;
  std::vector<double> true_values;
  std::vector<double> rewards;  // batch_size x max_group, row-major
};

inline SampledBatch draw_batch(const PromptPopulation& pop, int batch_size,
                               int max_group, std::uint64_t seed,
                               std::uint64_t repeat, int mc_oracle_rollouts) {
  if (static_cast<std::size_t>(batch_size) > pop.size())
    throw std::invalid_argument("diagnostics: batch_size exceeds population");
  Rng batch_rng(derive_seed(seed, repeat, kBatchStream));
  Rng reward_rng(derive_seed(seed, repeat, kRewardStream));
  Rng oracle_rng(derive_seed(seed, repeat, kOracleStream));
  const std::vector<std::size_t> picks =
      batch_rng.sample_without_replacement(pop.size(),
                                           static_cast<std::size_t>(batch_size));
  SampledBatch out;
  out.prompt_ids.reserve(picks.size());
  out.true_values.reserve(picks.size());
  out.rewards.reserve(picks.size() * static_cast<std::size_t>(max_group));
  for (std::size_t row = 0; row < picks.size(); ++row) {
    const PromptState& p = pop.prompts[picks[row]];
    out.prompt_ids.push_back(p.prompt_id);
    if (mc_oracle_rollouts > 0) {
      double total = 0.0;
      for (int s = 0; s < mc_oracle_rollouts; ++s)
        total += sample_rollout(p, oracle_rng).reward;
      out.true_values.push_back(total / mc_oracle_rollouts);
    } else {
      out.true_values.push_back(true_value(p));
    }
    for (int g = 0; g < max_group; ++g)
      out.rewards.push_back(sample_rollout(p, reward_rng).reward);
  }
  return out;
}

}  // namespace detail

struct GroupSweepResult {
  DiagnosticsReport report;
  // Indexed [estimator][repeat]; batch means feeding the aggregates.
  std::vector<std::vector<double>> per_repeat_mse;
  std::vector<std::vector<double>> per_repeat_collapse;
};

/// Paired group-size sweep. Every repeat draws one
/// batch and up to max-G rewards per prompt; each estimator sees the
/// first G of them. MSE is averaged over prompts, then over repeats.
inline GroupSweepResult mse_sweep(const PromptPopulation& pop,
                                  const ValueTable& table,
                                  const DiagnosticsConfig& config) {
  config.validate();
  const int max_group = config.max_group_size();
  const std::size_t n_est = config.estimators.size();
  const std::size_t n_rep = static_cast<std::size_t>(config.repeats);

  std::vector<std::vector<double>> mse(n_est, std::vector<double>(n_rep));
  std::vector<std::vector<double>> collapse(n_est, std::vector<double>(n_rep));

  parallel::for_each_index(n_rep, [&](std::size_t r) {
    const detail::SampledBatch sampled = detail::draw_batch(
        pop, config.batch_size, max_group, config.seed, r,
        config.mc_oracle_rollouts);
    for (std::size_t e = 0; e < n_est; ++e) {
      const std::vector<detail::PromptOutcome> outcomes =
          detail::evaluate_estimator(config.estimators[e], sampled.prompt_ids,
                                     sampled.true_values, sampled.rewards,
                                     max_group, &table);
      double sq = 0.0;
      double col = 0.0;
      for (const detail::PromptOutcome& o : outcomes) {
        sq += o.sq_err;
        col += o.collapse;
      }
      mse[e][r] = sq / static_cast<double>(outcomes.size());
      collapse[e][r] = col / static_cast<double>(outcomes.size());
    }
  });

  GroupSweepResult result;
  result.report.protocol = "group-sweep";
  result.report.seed = config.seed;
  result.report.batch_size = config.batch_size;
  result.report.repeats = config.repeats;
  for (std::size_t e = 0; e < n_est; ++e) {
    const EstimatorSpec& spec = config.estimators[e];
    double mse_total = 0.0;
    double col_total = 0.0;
    for (std::size_t r = 0; r < n_rep; ++r) {
      mse_total += mse[e][r];
      col_total += collapse[e][r];
    }
    ReportRow row;
    row.estimator = family_name(spec.family);
    row.variant = spec.family == Family::basis ? variant_name(spec.variant) : "";
    row.group_size = spec.group_size;
    row.mse = mse_total / static_cast<double>(n_rep);
    row.collapse_freq = col_total / static_cast<double>(n_rep);
    row.n = static_cast<long>(n_rep) * config.batch_size;
    result.report.rows.push_back(std::move(row));
  }
  result.per_repeat_mse = std::move(mse);
  result.per_repeat_collapse = std::move(collapse);
  return result;
}

struct HeterogeneitySweepResult {
  DiagnosticsReport report;
  std::vector<double> batch_scores;                 // per batch
  std::vector<std::vector<double>> batch_mse;       // [estimator][batch]
  std::vector<double> bin_edges;                    // size bins + 1
};

/// Per-batch MSE binned by the batch's value spread.
/// The score of a batch is the population standard deviation of its exact
/// prompt values; bins are built post hoc from the observed score range.
inline HeterogeneitySweepResult heterogeneity_sweep(
    const PromptPopulation& pop, const ValueTable& table,
    const DiagnosticsConfig& config) {
  config.validate();
  const int max_group = config.max_group_size();
  const std::size_t n_est = config.estimators.size();
  const std::size_t n_batches =
      static_cast<std::size_t>(config.heterogeneity_batches);

  std::vector<double> scores(n_batches);
  std::vector<std::vector<double>> mse(n_est, std::vector<double>(n_batches));
  std::vector<std::vector<double>> collapse(n_est,
                                            std::vector<double>(n_batches));

  parallel::for_each_index(n_batches, [&](std::size_t b) {
    const detail::SampledBatch sampled = detail::draw_batch(
        pop, config.batch_size, max_group, config.seed, b,
        config.mc_oracle_rollouts);
    double mean = 0.0;
    double mean_sq = 0.0;
    for (double v : sampled.true_values) {
      mean += v;
      mean_sq += v * v;
    }
    mean /= static_cast<double>(sampled.true_values.size());
    mean_sq /= static_cast<double>(sampled.true_values.size());
    scores[b] = std::sqrt(std::max(0.0, mean_sq - mean * mean));

    for (std::size_t e = 0; e < n_est; ++e) {
      const std::vector<detail::PromptOutcome> outcomes =
          detail::evaluate_estimator(config.estimators[e], sampled.prompt_ids,
                                     sampled.true_values, sampled.rewards,
                                     max_group, &table);
      double sq = 0.0;
      double col = 0.0;
      for (const detail::PromptOutcome& o : outcomes) {
        sq += o.sq_err;
        col += o.collapse;
      }
      mse[e][b] = sq / static_cast<double>(outcomes.size());
      collapse[e][b] = col / static_cast<double>(outcomes.size());
    }
  });

  const double lo = *std::min_element(scores.begin(), scores.end());
  const double hi = *std::max_element(scores.begin(), scores.end());
  const bool degenerate = !(hi - lo > 0.0);
  const int bins = degenerate ? 1 : config.heterogeneity_bins;
  std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
  for (int k = 0; k <= bins; ++k)
    edges[static_cast<std::size_t>(k)] =
        lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
  const auto bin_of = [&](double s) {
    if (degenerate) return 0;
    const int k = static_cast<int>(static_cast<double>(bins) * (s - lo) / (hi - lo));
    return std::clamp(k, 0, bins - 1);
  };

  HeterogeneitySweepResult result;
  result.report.protocol = "heterogeneity";
  result.report.seed = config.seed;
  result.report.batch_size = config.batch_size;
  result.report.repeats = config.heterogeneity_batches;
  for (std::size_t e = 0; e < n_est; ++e) {
    const EstimatorSpec& spec = config.estimators[e];
    std::vector<double> bin_mse(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bin_col(static_cast<std::size_t>(bins), 0.0);
    std::vector<long> bin_n(static_cast<std::size_t>(bins), 0);
    for (std::size_t b = 0; b < n_batches; ++b) {
      const int k = bin_of(scores[b]);
      bin_mse[static_cast<std::size_t>(k)] += mse[e][b];
      bin_col[static_cast<std::size_t>(k)] += collapse[e][b];
      bin_n[static_cast<std::size_t>(k)] += 1;
    }
    for (int k = 0; k < bins; ++k) {
      const long n = bin_n[static_cast<std::size_t>(k)];
      if (n == 0) continue;
      ReportRow row;
      row.estimator = family_name(spec.family);
      row.variant =
          spec.family == Family::basis ? variant_name(spec.variant) : "";
      row.group_size = spec.group_size;
      row.bin_lo = edges[static_cast<std::size_t>(k)];
      row.bin_hi = edges[static_cast<std::size_t>(k) + 1];
      row.mse = bin_mse[static_cast<std::size_t>(k)] / static_cast<double>(n);
      row.collapse_freq =
          bin_col[static_cast<std::size_t>(k)] / static_cast<double>(n);
      row.n = n;
      result.report.rows.push_back(std::move(row));
    }
  }
  result.batch_scores = std::move(scores);
  result.batch_mse = std::move(mse);
  result.bin_edges = std::move(edges);
  return result;
}

struct DifficultySweepResult {
  DiagnosticsReport report;
};

/// Difficulty stratification: batches are sampled without difficulty
/// conditioning and baselines computed on the full batch; stratification
/// by exact prompt value happens only afterwards. Reports per-bin MSE and
/// the per-bin frequency of baselines that are exactly 0 or 1.
inline DifficultySweepResult difficulty_sweep(const PromptPopulation& pop,
                                              const ValueTable& table,
                                              const DiagnosticsConfig& config) {
  config.validate();
  const int max_group = config.max_group_size();
  const std::size_t n_est = config.estimators.size();
  const std::size_t n_rep = static_cast<std::size_t>(config.repeats);
  const std::vector<double>& edges = config.difficulty_bin_edges;
  const std::size_t bins = edges.size() - 1;

  const auto bin_of = [&](double v) -> std::ptrdiff_t {
    if (v < edges.front() || v > edges.back()) return -1;
    for (std::size_t k = 0; k + 1 < bins; ++k)
      if (v < edges[k + 1]) return static_cast<std::ptrdiff_t>(k);
    return static_cast<std::ptrdiff_t>(bins - 1);  // last bin closed above
  };

  struct RepeatStat {
    std::vector<double> mse;    // [estimator * bins + bin]
    std::vector<double> col;
    std::vector<long> count;
  };
  std::vector<RepeatStat> per_repeat(n_rep);

  parallel::for_each_index(n_rep, [&](std::size_t r) {
    const detail::SampledBatch sampled = detail::draw_batch(
        pop, config.batch_size, max_group, config.seed, r,
        config.mc_oracle_rollouts);
    RepeatStat stat;
    stat.mse.assign(n_est * bins, 0.0);
    stat.col.assign(n_est * bins, 0.0);
    stat.count.assign(n_est * bins, 0);
    for (std::size_t e = 0; e < n_est; ++e) {
      const std::vector<detail::PromptOutcome> outcomes =
          detail::evaluate_estimator(config.estimators[e], sampled.prompt_ids,
                                     sampled.true_values, sampled.rewards,
                                     max_group, &table);
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const std::ptrdiff_t k = bin_of(sampled.true_values[i]);
        if (k < 0) continue;
        const std::size_t cell = e * bins + static_cast<std::size_t>(k);
        stat.mse[cell] += outcomes[i].sq_err;
        stat.col[cell] += outcomes[i].collapse;
        stat.count[cell] += 1;
      }
    }
    per_repeat[r] = std::move(stat);
  });

  DifficultySweepResult result;
  result.report.protocol = "difficulty";
  result.report.seed = config.seed;
  result.report.batch_size = config.batch_size;
  result.report.repeats = config.repeats;
  for (std::size_t e = 0; e < n_est; ++e) {
    const EstimatorSpec& spec = config.estimators[e];
    for (std::size_t k = 0; k < bins; ++k) {
      // Average within each repeat's bin group first, then across the
      // repeats that populated the bin.
      double mse_sum = 0.0;
      double col_sum = 0.0;
      long repeats_with_data = 0;
      long total = 0;
      for (std::size_t r = 0; r < n_rep; ++r) {
        const std::size_t cell = e * bins + k;
        const long c = per_repeat[r].count[cell];
        if (c == 0) continue;
        mse_sum += per_repeat[r].mse[cell] / static_cast<double>(c);
        col_sum += per_repeat[r].col[cell] / static_cast<double>(c);
        repeats_with_data += 1;
        total += c;
      }
      if (repeats_with_data == 0) continue;
      ReportRow row;
      row.estimator = family_name(spec.family);
      row.variant =
          spec.family == Family::basis ? variant_name(spec.variant) : "";
      row.group_size = spec.group_size;
      row.bin_lo = edges[k];
      row.bin_hi = edges[k + 1];
      row.mse = mse_sum / static_cast<double>(repeats_with_data);
      row.collapse_freq = col_sum / static_cast<double>(repeats_with_data);
      row.n = total;
      result.report.rows.push_back(std::move(row));
    }
  }
  return result;
}

struct BetaCurveConfig {
  int batch_size = 512;
  int batches = 50;
  double drift_beta = 0.0;  // <= 0 means no drift (current == reference)
  BasisVariant variant = BasisVariant::unb;
  double epsilon = 1e-6;
  std::uint64_t seed = 0;
};

struct BetaCurve {
  std::vector<double> beta;
  std::vector<double> initial_mse;  // tilted table value vs current value
  std::vector<double> refined_mse;  // batchwise refined value vs current value
  std::vector<long> active_n;       // active observations behind each point
};

/// MSE of the initial and the batchwise refined value
/// estimators across the whole tilt grid, against the current policy's
/// values. "Checkpoint drift" tilts the current values away from the
/// reference by drift_beta; rewards are drawn from the drifted values.
/// Both estimators are scored on each grid point's active set.
inline BetaCurve compare_initial_vs_refined(const PromptPopulation& pop,
                                            const ValueTable& table,
                                            const BetaCurveConfig& config) {
  if (config.batch_size < 2 || config.batches < 1)
    throw std::invalid_argument("compare_initial_vs_refined: bad config");
  const BetaGrid& grid = table.grid();
  const std::size_t n_grid = grid.size();
  const std::size_t n_batches = static_cast<std::size_t>(config.batches);

  struct BatchAccum {
    std::vector<double> initial_sq;
    std::vector<double> refined_sq;
    std::vector<long> active;
  };
  std::vector<BatchAccum> accums(n_batches);

  parallel::for_each_index(n_batches, [&](std::size_t b) {
    Rng batch_rng(derive_seed(config.seed, b, kBatchStream));
    Rng reward_rng(derive_seed(config.seed, b, kRewardStream));
    const std::vector<std::size_t> picks = batch_rng.sample_without_replacement(
        pop.size(), static_cast<std::size_t>(config.batch_size));

    const std::size_t rows = picks.size();
    std::vector<int> prompt_ids(rows);
    std::vector<double> current(rows);
    std::vector<double> rewards(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      const PromptState& p = pop.prompts[picks[i]];
      prompt_ids[i] = p.prompt_id;
      const double reference = true_value(p);
      current[i] = config.drift_beta > 0.0
                       ? soft_value(reference, config.drift_beta)
                       : reference;
      rewards[i] = reward_rng.next_double() < current[i] ? 1.0 : 0.0;
    }
    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return prompt_ids[x] < prompt_ids[y];
    });

    BatchAccum acc;
    acc.initial_sq.assign(n_grid, 0.0);
    acc.refined_sq.assign(n_grid, 0.0);
    acc.active.assign(n_grid, 0);
    std::vector<double> values(rows);
    std::vector<double> baselines;
    for (std::size_t gi = 0; gi < n_grid; ++gi) {
      for (std::size_t i = 0; i < rows; ++i)
        values[i] = soft_value(table.p_hat(prompt_ids[i]), grid[gi]);
      const std::vector<char> active = active_set(values, config.epsilon);
      long count = 0;
      for (char a : active) count += a ? 1 : 0;
      if (count < 2) continue;
      detail::refined_baselines(values, rewards, active, order, config.variant,
                                baselines, nullptr);
      for (std::size_t i : order) {
        if (!active[i]) continue;
        const double di = values[i] - current[i];
        const double dr = baselines[i] - current[i];
        acc.initial_sq[gi] += di * di;
        acc.refined_sq[gi] += dr * dr;
      }
      acc.active[gi] = count;
    }
    accums[b] = std::move(acc);
  });

  BetaCurve curve;
  curve.beta = grid.values();
  curve.initial_mse.assign(n_grid, std::numeric_limits<double>::quiet_NaN());
  curve.refined_mse.assign(n_grid, std::numeric_limits<double>::quiet_NaN());
  curve.active_n.assign(n_grid, 0);
  for (std::size_t gi = 0; gi < n_grid; ++gi) {
    double init = 0.0;
    double refined = 0.0;
    long n = 0;
    for (const BatchAccum& acc : accums) {
      init += acc.initial_sq[gi];
      refined += acc.refined_sq[gi];
      n += acc.active[gi];
    }
    if (n == 0) continue;
    curve.initial_mse[gi] = init / static_cast<double>(n);
    curve.refined_mse[gi] = refined / static_cast<double>(n);
    curve.active_n[gi] = n;
  }
  return curve;
}

}  // namespace basis
