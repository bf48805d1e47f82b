#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "basis/calibration.hpp"
#include "basis/env.hpp"
#include "basis/estimators.hpp"
#include "basis/values.hpp"

namespace basis {

/// Gradient of log softmax(logits)[action] with respect to the logits:
/// one-hot(action) minus the softmax probabilities.
inline std::vector<double> policy_score(const PromptState& p, int action) {
  std::vector<double> score = answer_probabilities(p);
  for (double& q : score) q = -q;
  score[static_cast<std::size_t>(action)] += 1.0;
  return score;
}

/// REINFORCE update for the sampled (prompt, action, advantage) triples.
///
/// `samples` is the flattened batch, row-major with `group_size` entries
/// per prompt, aligned with `advantages`. Each sampled prompt moves by
/// learning_rate times the mean over its G samples of advantage times
/// policy score, with all scores evaluated at the pre-update logits.
/// Prompts not in the batch are untouched.
inline void policy_gradient_step(PromptPopulation& pop,
                                 std::span<const RewardSample> samples,
                                 std::span<const double> advantages,
                                 int group_size, double learning_rate) {
  if (group_size < 1)
    throw std::invalid_argument("policy_gradient_step: group_size must be >= 1");
  if (samples.size() != advantages.size() ||
      samples.size() % static_cast<std::size_t>(group_size) != 0)
    throw std::invalid_argument("policy_gradient_step: size mismatch");
  const std::size_t n_prompts = samples.size() / static_cast<std::size_t>(group_size);
  for (std::size_t i = 0; i < n_prompts; ++i) {
    const int prompt_id = samples[i * group_size].prompt_id;
    if (prompt_id < 0 || static_cast<std::size_t>(prompt_id) >= pop.size())
      throw std::out_of_range("policy_gradient_step: unknown prompt_id");
    PromptState& p = pop.prompts[static_cast<std::size_t>(prompt_id)];
    std::vector<double> delta(p.logits.size(), 0.0);
    for (int g = 0; g < group_size; ++g) {
      const RewardSample& s = samples[i * group_size + static_cast<std::size_t>(g)];
      if (s.prompt_id != prompt_id)
        throw std::invalid_argument("policy_gradient_step: misaligned samples");
      const std::vector<double> score = policy_score(p, s.action);
      const double a = advantages[i * group_size + static_cast<std::size_t>(g)];
      for (std::size_t k = 0; k < delta.size(); ++k) delta[k] += a * score[k];
    }
    const double scale = learning_rate / static_cast<double>(group_size);
    for (std::size_t k = 0; k < delta.size(); ++k)
      p.logits[k] += scale * delta[k];
  }
}

inline double mean_true_value(const PromptPopulation& pop) {
  double sum = 0.0;
  for (const PromptState& p : pop.prompts) sum += true_value(p);
  return sum / static_cast<double>(pop.size());
}

struct TrainConfig {
  int steps = 100;
  int batch_size = 64;
  double learning_rate = 0.1;
  EstimatorSpec estimator;
  int eval_every = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (batch_size < 2)
      throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (!(learning_rate >= 0.0))
      throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (eval_every < 1)
      throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
    estimator.validate();
  }
};

struct TraceRecord {
  int step = 0;
  double mean_true_value = 0.0;
  // NaN when the step had no calibrated tilt (non-basis families, sentinel).
  double selected_beta = std::numeric_limits<double>::quiet_NaN();
  // Empirical variance proxy of the step's gradient estimator: mean squared
  // norm of the per-sample contributions advantage * score. NaN at step 0.
  double grad_var = std::numeric_limits<double>::quiet_NaN();
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  PromptPopulation final_population;
};

/// Runs `steps` REINFORCE iterations over a copy of the population:
/// sample a batch, compute advantages with the configured estimator,
/// apply the policy update, and periodically record the exact mean true
/// value. Step s draws its batch from Rng(derive_seed(seed, s, 1)) and
/// its rollouts from Rng(derive_seed(seed, s, 2)), prompt-major.
///
/// The value table is required for the basis family and is never rebuilt:
/// it represents the frozen reference policy, and the tilt calibration is
/// what tracks the drift away from it.
inline TrainTrace train(const PromptPopulation& initial_pop,
                        const ValueTable* table, const TrainConfig& config) {
  config.validate();
  if (config.estimator.family == Family::basis && table == nullptr)
    throw std::invalid_argument("train: basis estimator needs a value table");
  if (static_cast<std::size_t>(config.batch_size) > initial_pop.size())
    throw std::invalid_argument("train: batch_size exceeds population");

  PromptPopulation pop = initial_pop;
  const int g_count = config.estimator.group_size;

  TrainTrace trace;
  trace.records.push_back(TraceRecord{0, mean_true_value(pop),
                                      std::numeric_limits<double>::quiet_NaN(),
                                      std::numeric_limits<double>::quiet_NaN()});

  for (int step = 1; step <= config.steps; ++step) {
    Rng batch_rng(derive_seed(config.seed, static_cast<std::uint64_t>(step), 1));
    Rng reward_rng(derive_seed(config.seed, static_cast<std::uint64_t>(step), 2));
    const std::vector<std::size_t> picks = batch_rng.sample_without_replacement(
        pop.size(), static_cast<std::size_t>(config.batch_size));

    std::vector<RewardSample> samples;
    samples.reserve(picks.size() * static_cast<std::size_t>(g_count));
    std::vector<int> prompt_ids;
    prompt_ids.reserve(picks.size());
    std::vector<double> rewards;
    rewards.reserve(samples.capacity());
    for (std::size_t row = 0; row < picks.size(); ++row) {
      const PromptState& p = pop.prompts[picks[row]];
      prompt_ids.push_back(p.prompt_id);
      for (int g = 0; g < g_count; ++g) {
        samples.push_back(sample_rollout(p, reward_rng));
        rewards.push_back(samples.back().reward);
      }
    }

    RewardBatch batch(prompt_ids, rewards, g_count);
    AdvantageBatch adv;
    if (config.estimator.family == Family::basis) {
      adv = basis_step(BinaryRewardBatch(std::move(batch)), *table,
                       config.estimator.variant, config.estimator.epsilon);
    } else {
      adv = compute_baseline(config.estimator, batch);
    }

    double grad_sq = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const PromptState& p =
          pop.prompts[static_cast<std::size_t>(samples[s].prompt_id)];
      const std::vector<double> score = policy_score(p, samples[s].action);
      double norm_sq = 0.0;
      for (double c : score) norm_sq += c * c;
      grad_sq += adv.advantages[s] * adv.advantages[s] * norm_sq;
    }
    const double grad_var = grad_sq / static_cast<double>(samples.size());

    policy_gradient_step(pop, samples, adv.advantages, g_count,
                         config.learning_rate);

    if (step % config.eval_every == 0 || step == config.steps) {
      TraceRecord rec;
      rec.step = step;
      rec.mean_true_value = mean_true_value(pop);
      rec.selected_beta =
          adv.selected_beta.value_or(std::numeric_limits<double>::quiet_NaN());
      rec.grad_var = grad_var;
      trace.records.push_back(rec);
    }
  }
  trace.final_population = std::move(pop);
  return trace;
}

struct VarianceProbe {
  std::vector<double> per_prompt;  // trace of the per-prompt gradient covariance
  double aggregate = 0.0;          // mean over prompts
  // Second moment E[(r_i - b_i)^2] of the scalar advantage, per prompt
  // and averaged. Unlike the plain variance it keeps the baseline's bias,
  // which is what a mis-centered baseline feeds into the gradient.
  std::vector<double> advantage_second_moment;
  double advantage_second_moment_aggregate = 0.0;
};

/// Monte-Carlo variance of the single-rollout policy-gradient contribution
/// (r_i - b_i) * score_i for each prompt of the population, holding the
/// policy fixed. Each draw resamples every prompt's rollout and recomputes
/// the baselines under the given rule; passing no estimator uses the exact
/// oracle baseline b_i = true value of prompt i.
inline VarianceProbe gradient_variance_probe(
    const PromptPopulation& pop, const ValueTable* table,
    const std::optional<EstimatorSpec>& estimator, int n_draws,
    std::uint64_t seed) {
  if (n_draws < 1000)
    throw std::invalid_argument("gradient_variance_probe: need n_draws >= 1000");
  if (pop.size() < 2)
    throw std::invalid_argument("gradient_variance_probe: need >= 2 prompts");
  if (estimator) {
    estimator->validate();
    if (estimator->group_size != 1)
      throw std::invalid_argument(
          "gradient_variance_probe: single-rollout probe requires G = 1");
    if (estimator->family == Family::basis && table == nullptr)
      throw std::invalid_argument("gradient_variance_probe: basis needs a table");
  }

  const std::size_t n = pop.size();
  std::vector<int> prompt_ids(n);
  std::vector<double> oracle(n);
  for (std::size_t i = 0; i < n; ++i) {
    prompt_ids[i] = pop.prompts[i].prompt_id;
    oracle[i] = true_value(pop.prompts[i]);
  }

  std::vector<std::vector<double>> mean_acc(n);
  for (std::size_t i = 0; i < n; ++i)
    mean_acc[i].assign(pop.prompts[i].logits.size(), 0.0);
  std::vector<double> sq_acc(n, 0.0);
  std::vector<double> adv_sq_acc(n, 0.0);

  std::vector<RewardSample> draws(n);
  std::vector<double> rewards(n);
  for (int d = 0; d < n_draws; ++d) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(d)));
    for (std::size_t i = 0; i < n; ++i) {
      draws[i] = sample_rollout(pop.prompts[i], rng);
      rewards[i] = draws[i].reward;
    }

    std::vector<double> baselines(n, 0.0);
    if (!estimator) {
      baselines = oracle;
    } else if (estimator->family == Family::basis) {
      const AdvantageBatch adv =
          basis_step(BinaryRewardBatch(RewardBatch(prompt_ids, rewards, 1)),
                     *table, estimator->variant, estimator->epsilon);
      baselines = adv.baselines;
    } else {
      const AdvantageBatch adv =
          compute_baseline(*estimator, RewardBatch(prompt_ids, rewards, 1));
      baselines = adv.baselines;
    }

    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double> score = policy_score(pop.prompts[i], draws[i].action);
      const double a = rewards[i] - baselines[i];
      adv_sq_acc[i] += a * a;
      double norm_sq = 0.0;
      for (std::size_t k = 0; k < score.size(); ++k) {
        const double c = a * score[k];
        mean_acc[i][k] += c;
        norm_sq += c * c;
      }
      sq_acc[i] += norm_sq;
    }
  }

  VarianceProbe probe;
  probe.per_prompt.resize(n);
  probe.advantage_second_moment.resize(n);
  const double inv = 1.0 / static_cast<double>(n_draws);
  double total = 0.0;
  double adv_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mean_norm_sq = 0.0;
    for (double m : mean_acc[i]) mean_norm_sq += (m * inv) * (m * inv);
    probe.per_prompt[i] = std::max(0.0, sq_acc[i] * inv - mean_norm_sq);
    total += probe.per_prompt[i];
    probe.advantage_second_moment[i] = adv_sq_acc[i] * inv;
    adv_total += probe.advantage_second_moment[i];
  }
  probe.aggregate = total / static_cast<double>(n);
  probe.advantage_second_moment_aggregate = adv_total / static_cast<double>(n);
  return probe;
}

}  // namespace basis
