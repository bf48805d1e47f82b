#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "basis/diagnostics.hpp"
#include "basis/env.hpp"
#include "basis/parallel.hpp"
#include "basis/values.hpp"
#include "support/naive.hpp"

using namespace basis;

namespace {

PromptPopulation fixed_value_population(const std::vector<double>& values,
                                        int k = 2) {
  PromptPopulation pop;
  for (std::size_t i = 0; i < values.size(); ++i) {
    PromptState p;
    p.prompt_id = static_cast<int>(i);
    p.logits.assign(static_cast<std::size_t>(k), 0.0);
    p.logits[0] = logit_for_value(values[i], k);
    p.correct_index = 0;
    pop.prompts.push_back(std::move(p));
  }
  return pop;
}

PromptPopulation deterministic_population(int count) {
  PromptPopulation pop;
  for (int i = 0; i < count; ++i) {
    PromptState p;
    p.prompt_id = i;
    p.logits = {i % 2 == 0 ? 1e9 : -1e9, 0.0};
    p.correct_index = 0;
    pop.prompts.push_back(std::move(p));
  }
  return pop;
}

EstimatorSpec spec_of(Family family, int g,
                      BasisVariant variant = BasisVariant::unb) {
  EstimatorSpec s;
  s.family = family;
  s.variant = variant;
  s.group_size = g;
  return s;
}

const ReportRow& find_row(const DiagnosticsReport& report,
                          const std::string& estimator, int g,
                          double bin_lo = 0.0) {
  for (const ReportRow& row : report.rows)
    if (row.estimator == estimator && row.group_size == g &&
        std::abs(row.bin_lo - bin_lo) < 1e-12)
      return row;
  REQUIRE(false);
  throw std::logic_error("row not found");
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("group sweep matches a from-scratch serial recomputation") {
  const PromptPopulation pop =
      make_population(6, ValueDistribution::make_uniform(0.2, 0.8), 3, 41);
  const ValueTable table = build_table(pop, 64, BetaGrid::default_grid(), 5);

  DiagnosticsConfig config;
  config.batch_size = 4;
  config.repeats = 3;
  config.seed = 1234;
  config.estimators = {spec_of(Family::zero, 1), spec_of(Family::grpo, 2),
                       spec_of(Family::rloo, 2),
                       spec_of(Family::reinforcepp, 1),
                       spec_of(Family::basis, 1)};
  const GroupSweepResult result = mse_sweep(pop, table, config);

  // Replay the documented stream layout with plain loops.
  const int max_group = 2;
  std::vector<std::vector<double>> expected_mse(config.estimators.size());
  for (std::size_t r = 0; r < 3; ++r) {
    Rng batch_rng(derive_seed(config.seed, r, kBatchStream));
    Rng reward_rng(derive_seed(config.seed, r, kRewardStream));
    const std::vector<std::size_t> picks =
        batch_rng.sample_without_replacement(pop.size(), 4);
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<double> p_hats;
    for (std::size_t row : picks) {
      const PromptState& p = pop.prompts[row];
      values.push_back(true_value(p));
      p_hats.push_back(table.p_hat(p.prompt_id));
      for (int g = 0; g < max_group; ++g)
        rewards.push_back(sample_rollout(p, reward_rng).reward);
    }
    for (std::size_t e = 0; e < config.estimators.size(); ++e) {
      const EstimatorSpec& spec = config.estimators[e];
      const std::size_t g = static_cast<std::size_t>(spec.group_size);
      std::vector<double> sub(4 * g);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t s = 0; s < g; ++s)
          sub[i * g + s] = rewards[i * max_group + s];
      std::vector<double> baselines;
      if (spec.family == Family::basis) {
        baselines = naive::basis_pipeline(p_hats, sub, table.grid(),
                                          spec.epsilon, spec.variant)
                        .baselines;
      } else {
        baselines = naive::group_family_baselines(spec.family, sub, 4, g);
      }
      double total = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        double prompt_sq = 0.0;
        for (std::size_t s = 0; s < g; ++s) {
          const double d = baselines[i * g + s] - values[i];
          prompt_sq += d * d;
        }
        total += prompt_sq / static_cast<double>(g);
      }
      expected_mse[e].push_back(total / 4.0);
    }
  }
  for (std::size_t e = 0; e < config.estimators.size(); ++e) {
    double agg = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(result.per_repeat_mse[e][r] ==
            doctest::Approx(expected_mse[e][r]).epsilon(1e-12));
      agg += expected_mse[e][r];
    }
    CHECK(result.report.rows[e].mse == doctest::Approx(agg / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("reports are identical across thread counts") {
  const PromptPopulation pop =
      make_population(32, ValueDistribution::make_uniform(0.1, 0.9), 4, 7);
  const ValueTable table = build_table(pop, 128, BetaGrid::default_grid(), 8);
  DiagnosticsConfig config;
  config.batch_size = 8;
  config.repeats = 6;
  config.seed = 99;
  config.estimators = {spec_of(Family::grpo, 4), spec_of(Family::basis, 1)};

  parallel::set_thread_count(1);
  const GroupSweepResult serial = mse_sweep(pop, table, config);
  parallel::set_thread_count(4);
  const GroupSweepResult threaded = mse_sweep(pop, table, config);
  parallel::set_thread_count(0);

  REQUIRE(serial.report.rows.size() == threaded.report.rows.size());
  for (std::size_t i = 0; i < serial.report.rows.size(); ++i) {
    CHECK(serial.report.rows[i].mse == threaded.report.rows[i].mse);
    CHECK(serial.report.rows[i].collapse_freq ==
          threaded.report.rows[i].collapse_freq);
  }
}

TEST_CASE("grpo with deterministic prompts has zero MSE") {
  const PromptPopulation pop = deterministic_population(8);
  const ValueTable table = build_table(pop, 8, BetaGrid::default_grid(), 3);
  DiagnosticsConfig config;
  config.batch_size = 4;
  config.repeats = 5;
  config.seed = 11;
  config.estimators = {spec_of(Family::grpo, 4)};
  const GroupSweepResult result = mse_sweep(pop, table, config);
  CHECK(result.report.rows[0].mse == 0.0);
}

TEST_CASE("single-rollout grpo on half-valued prompts has MSE 0.25") {
  const PromptPopulation pop = fixed_value_population(std::vector<double>(16, 0.5));
  const ValueTable table = build_table(pop, 8, BetaGrid::default_grid(), 3);
  DiagnosticsConfig config;
  config.batch_size = 8;
  config.repeats = 10;
  config.seed = 21;
  config.estimators = {spec_of(Family::grpo, 1)};
  const GroupSweepResult result = mse_sweep(pop, table, config);
  // (r - 0.5)^2 is exactly 0.25 for binary r.
  CHECK(result.report.rows[0].mse == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("rloo trails grpo at every shared group size") {
  const PromptPopulation pop =
      make_population(64, ValueDistribution::make_uniform(0.2, 0.8), 4, 17);
  const ValueTable table = build_table(pop, 64, BetaGrid::default_grid(), 18);
  DiagnosticsConfig config;
  config.batch_size = 32;
  config.repeats = 200;
  config.seed = 5;
  config.estimators = {spec_of(Family::grpo, 2), spec_of(Family::rloo, 2),
                       spec_of(Family::grpo, 4), spec_of(Family::rloo, 4),
                       spec_of(Family::grpo, 8), spec_of(Family::rloo, 8)};
  const GroupSweepResult result = mse_sweep(pop, table, config);
  for (int pair = 0; pair < 3; ++pair) {
    const double grpo_mse = result.report.rows[static_cast<std::size_t>(2 * pair)].mse;
    const double rloo_mse =
        result.report.rows[static_cast<std::size_t>(2 * pair + 1)].mse;
    CHECK(rloo_mse >= grpo_mse);
  }
}

TEST_CASE("point-mass populations give a single zero-score bin") {
  const PromptPopulation pop = fixed_value_population(std::vector<double>(12, 0.4));
  const ValueTable table = build_table(pop, 32, BetaGrid::default_grid(), 2);
  DiagnosticsConfig config;
  config.batch_size = 6;
  config.heterogeneity_batches = 20;
  config.seed = 31;
  config.estimators = {spec_of(Family::reinforcepp, 1)};
  const HeterogeneitySweepResult result = heterogeneity_sweep(pop, table, config);
  CHECK(result.report.rows.size() == 1);
  CHECK(result.report.rows[0].bin_lo == result.report.rows[0].bin_hi);
  CHECK(result.report.rows[0].n == 20);
  for (double s : result.batch_scores) CHECK(s < 1e-7);
}

TEST_CASE("heterogeneity hurts the global batch baseline but not basis") {
  const PromptPopulation pop = make_population(
      512, ValueDistribution::make_two_cluster(0.1, 0.9, 0.5), 4, 71);
  const ValueTable table = build_table(pop, 1024, BetaGrid::default_grid(), 72);
  DiagnosticsConfig config;
  config.batch_size = 64;
  config.heterogeneity_batches = 300;
  config.seed = 73;
  config.estimators = {spec_of(Family::reinforcepp, 1),
                       spec_of(Family::basis, 1)};
  const HeterogeneitySweepResult result = heterogeneity_sweep(pop, table, config);

  std::vector<double> rpp_bins;
  std::vector<double> basis_bins;
  for (const ReportRow& row : result.report.rows) {
    if (row.estimator == "reinforcepp") rpp_bins.push_back(row.mse);
    if (row.estimator == "basis") basis_bins.push_back(row.mse);
  }
  REQUIRE(rpp_bins.size() >= 3);
  // Nondecreasing trend for the global baseline.
  for (std::size_t k = 1; k < rpp_bins.size(); ++k)
    CHECK(rpp_bins[k] >= rpp_bins[k - 1] - 1e-6);
  const double rpp_spread =
      *std::max_element(rpp_bins.begin(), rpp_bins.end()) -
      *std::min_element(rpp_bins.begin(), rpp_bins.end());
  const double basis_spread =
      *std::max_element(basis_bins.begin(), basis_bins.end()) -
      *std::min_element(basis_bins.begin(), basis_bins.end());
  CHECK(basis_spread < rpp_spread);

  // Bin counts reconcile with the number of batches.
  long total = 0;
  for (const ReportRow& row : result.report.rows)
    if (row.estimator == "reinforcepp") total += row.n;
  CHECK(total == 300);
}

TEST_CASE("zero baseline collapses everywhere by definition") {
  const PromptPopulation pop =
      make_population(64, ValueDistribution::make_uniform(0.05, 0.95), 4, 81);
  const ValueTable table = build_table(pop, 256, BetaGrid::default_grid(), 82);
  DiagnosticsConfig config;
  config.batch_size = 32;
  config.repeats = 10;
  config.seed = 83;
  config.estimators = {spec_of(Family::zero, 1)};
  const DifficultySweepResult result = difficulty_sweep(pop, table, config);
  REQUIRE(!result.report.rows.empty());
  for (const ReportRow& row : result.report.rows)
    CHECK(row.collapse_freq == 1.0);
}

TEST_CASE("difficulty bins expose the group-mean failure modes") {
  const PromptPopulation pop =
      make_population(512, ValueDistribution::make_uniform(0.05, 0.95), 4, 91);
  const ValueTable table = build_table(pop, 1024, BetaGrid::default_grid(), 92);
  DiagnosticsConfig config;
  config.batch_size = 64;
  config.repeats = 150;
  config.seed = 93;
  config.estimators = {spec_of(Family::grpo, 8), spec_of(Family::basis, 1)};
  const DifficultySweepResult result = difficulty_sweep(pop, table, config);

  std::vector<double> grpo_mse(5, 0.0);
  std::vector<double> grpo_col(5, 0.0);
  std::vector<double> basis_col(5, 0.0);
  long grpo_total = 0;
  for (const ReportRow& row : result.report.rows) {
    const std::size_t bin = static_cast<std::size_t>(std::lround(row.bin_lo / 0.2));
    if (row.estimator == "grpo") {
      grpo_mse[bin] = row.mse;
      grpo_col[bin] = row.collapse_freq;
      grpo_total += row.n;
    } else {
      basis_col[bin] = row.collapse_freq;
    }
  }
  CHECK(grpo_total == 150L * 64L);

  // Middle bin is worst for the group mean; outer bins collapse most.
  for (std::size_t k = 0; k < 5; ++k)
    if (k != 2) CHECK(grpo_mse[2] > grpo_mse[k]);
  CHECK(grpo_col[0] > grpo_col[2]);
  CHECK(grpo_col[4] > grpo_col[2]);
  for (double c : basis_col) CHECK(c < 0.01);
}

TEST_CASE("monte-carlo oracle mode approaches the exact oracle") {
  const PromptPopulation pop =
      make_population(32, ValueDistribution::make_uniform(0.2, 0.8), 4, 61);
  const ValueTable table = build_table(pop, 128, BetaGrid::default_grid(), 62);
  DiagnosticsConfig config;
  config.batch_size = 16;
  config.repeats = 30;
  config.seed = 63;
  config.estimators = {spec_of(Family::grpo, 4)};
  const GroupSweepResult exact = mse_sweep(pop, table, config);
  config.mc_oracle_rollouts = 20000;
  const GroupSweepResult mc = mse_sweep(pop, table, config);
  // Same reward draws, noisy oracle: aggregates agree up to the Monte
  // Carlo error of the oracle itself.
  CHECK(mc.report.rows[0].mse ==
        doctest::Approx(exact.report.rows[0].mse).epsilon(0.1));
  CHECK(mc.report.rows[0].mse != exact.report.rows[0].mse);
}

TEST_CASE("default estimator roster covers the sweep") {
  const std::vector<EstimatorSpec> specs = default_estimators({1, 2, 4, 8});
  REQUIRE(specs.size() == 9);  // grpo x4, rloo x3, reinforcepp, basis
  CHECK(specs[0].family == Family::grpo);
  CHECK(specs[4].family == Family::rloo);
  CHECK(specs[4].group_size == 2);
  CHECK(specs[7].family == Family::reinforcepp);
  CHECK(specs[8].family == Family::basis);
  CHECK(specs[8].group_size == 1);
}

TEST_CASE("beta curve under zero drift favors the weakest tilt") {
  const PromptPopulation pop =
      make_population(1024, ValueDistribution::make_uniform(0.05, 0.95), 4, 101);
  const ValueTable table = build_table(pop, 4096, BetaGrid::default_grid(), 102);
  BetaCurveConfig config;
  config.batch_size = 512;
  config.batches = 25;
  config.drift_beta = 0.0;
  config.seed = 103;
  const BetaCurve curve = compare_initial_vs_refined(pop, table, config);

  REQUIRE(curve.beta.size() == 230);
  double initial_min = std::numeric_limits<double>::infinity();
  double initial_max = 0.0;
  double refined_min = std::numeric_limits<double>::infinity();
  double refined_max = 0.0;
  std::size_t initial_arg = 0;
  for (std::size_t gi = 0; gi < curve.beta.size(); ++gi) {
    if (curve.active_n[gi] == 0) continue;
    if (curve.initial_mse[gi] < initial_min) {
      initial_min = curve.initial_mse[gi];
      initial_arg = gi;
    }
    initial_max = std::max(initial_max, curve.initial_mse[gi]);
    refined_min = std::min(refined_min, curve.refined_mse[gi]);
    refined_max = std::max(refined_max, curve.refined_mse[gi]);
  }

  // With no drift the initial estimator improves monotonically toward the
  // top of the grid; its argmin sits at the last grid point and its value
  // there matches the curve minimum by construction.
  CHECK(initial_arg == curve.beta.size() - 1);
  CHECK(curve.initial_mse[229] == doctest::Approx(initial_min).epsilon(1e-12));

  // The batchwise refinement washes out the residual tilt that the finite
  // grid cannot remove, so its best point beats the initial curve's best.
  CHECK(refined_min <= initial_min);

  // And the refined curve is far less sensitive to the tilt setting.
  CHECK(refined_max / refined_min < initial_max / initial_min);
}

}  // TEST_SUITE
