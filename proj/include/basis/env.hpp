#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "basis/rng.hpp"

namespace basis {

/// One synthetic prompt: a categorical softmax policy over K candidate
/// answers, exactly one of which is correct. The verifier is the identity
/// check action == correct_index, so the prompt's value (expected reward)
/// is the softmax probability of the correct answer — exact, no sampling.
struct PromptState {
  int prompt_id = 0;
  std::vector<double> logits;
  int correct_index = 0;

  int num_answers() const { return static_cast<int>(logits.size()); }

  void validate() const {
    if (logits.size() < 2)
      throw std::invalid_argument("PromptState: need at least 2 answers");
    if (correct_index < 0 || correct_index >= num_answers())
      throw std::invalid_argument("PromptState: correct_index out of range");
    for (double l : logits)
      if (!std::isfinite(l))
        throw std::invalid_argument("PromptState: logits must be finite");
  }
};

struct PromptPopulation {
  std::vector<PromptState> prompts;
  std::uint64_t rng_seed = 0;

  std::size_t size() const { return prompts.size(); }

  void validate() const {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      prompts[i].validate();
      if (prompts[i].prompt_id != static_cast<int>(i))
        throw std::invalid_argument(
            "PromptPopulation: prompt_ids must be contiguous from 0");
    }
  }
};

struct RewardSample {
  int prompt_id = 0;
  int action = 0;
  double reward = 0.0;  // 1 iff action == correct_index of the prompt
};

inline std::vector<double> answer_probabilities(const PromptState& p) {
  const double m = *std::max_element(p.logits.begin(), p.logits.end());
  std::vector<double> probs(p.logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < p.logits.size(); ++k) {
    probs[k] = std::exp(p.logits[k] - m);
    z += probs[k];
  }
  for (double& q : probs) q /= z;
  return probs;
}

/// Exact expected reward of the prompt under its current logits.
inline double true_value(const PromptState& p) {
  const double m = *std::max_element(p.logits.begin(), p.logits.end());
  double z = 0.0;
  for (double l : p.logits) z += std::exp(l - m);
  return std::exp(p.logits[static_cast<std::size_t>(p.correct_index)] - m) / z;
}

/// Draws one answer from the softmax policy and scores it.
inline RewardSample sample_rollout(const PromptState& p, Rng& rng) {
  const std::vector<double> probs = answer_probabilities(p);
  const double u = rng.next_double();
  double cum = 0.0;
  int action = static_cast<int>(probs.size()) - 1;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    cum += probs[k];
    if (u < cum) {
      action = static_cast<int>(k);
      break;
    }
  }
  return RewardSample{p.prompt_id, action,
                      action == p.correct_index ? 1.0 : 0.0};
}

/// The correct-answer logit that makes true_value equal v when all other
/// K-1 logits are zero: ln(v (K-1) / (1 - v)).
inline double logit_for_value(double v, int k) {
  if (!(v > 0.0) || !(v < 1.0))
    throw std::invalid_argument("logit_for_value: v must lie in (0, 1)");
  if (k < 2) throw std::invalid_argument("logit_for_value: k must be >= 2");
  return std::log(v * static_cast<double>(k - 1) / (1.0 - v));
}

/// Descriptor for the distribution of target true values when generating
/// a synthetic population. Supported forms:
///   uniform(lo, hi)          lo <= hi, both strictly inside (0, 1)
///   beta(a, b)               a, b > 0
///   two_cluster(v1, v2, mix) v1, v2 strictly inside (0, 1); mix is the
///                            probability of drawing v2
struct ValueDistribution {
  enum class Kind { uniform, beta, two_cluster };

  Kind kind = Kind::uniform;
  double a = 0.0;
  double b = 0.0;
  double mix = 0.0;

  static ValueDistribution make_uniform(double lo, double hi) {
    ValueDistribution d{Kind::uniform, lo, hi, 0.0};
    d.validate();
    return d;
  }
  static ValueDistribution make_beta(double alpha, double beta_param) {
    ValueDistribution d{Kind::beta, alpha, beta_param, 0.0};
    d.validate();
    return d;
  }
  static ValueDistribution make_two_cluster(double v1, double v2, double mix) {
    ValueDistribution d{Kind::two_cluster, v1, v2, mix};
    d.validate();
    return d;
  }

  void validate() const {
    switch (kind) {
      case Kind::uniform:
        if (!(a > 0.0) || !(b < 1.0) || !(a <= b))
          throw std::invalid_argument(
              "uniform value distribution requires 0 < lo <= hi < 1");
        break;
      case Kind::beta:
        if (!(a > 0.0) || !(b > 0.0))
          throw std::invalid_argument("beta distribution requires a, b > 0");
        break;
      case Kind::two_cluster:
        if (!(a > 0.0) || !(a < 1.0) || !(b > 0.0) || !(b < 1.0))
          throw std::invalid_argument(
              "two_cluster values must lie strictly inside (0, 1)");
        if (!(mix >= 0.0) || !(mix <= 1.0))
          throw std::invalid_argument("two_cluster mix must lie in [0, 1]");
        break;
    }
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::uniform:
        return a + (b - a) * rng.next_double();
      case Kind::beta: {
        // Redraw the measure-zero endpoint hits so the inverse logit stays
        // finite.
        for (;;) {
          const double v = rng.next_beta(a, b);
          if (v > 0.0 && v < 1.0) return v;
        }
      }
      case Kind::two_cluster:
        return rng.next_double() < mix ? b : a;
    }
    throw std::logic_error("unreachable");
  }

  /// Parses "uniform:0.05,0.95", "beta:2,5" or "two-cluster:0.1,0.9,0.5".
  static ValueDistribution parse(const std::string& text);
};

inline std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    const std::string tok = text.substr(pos, next - pos);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("not a number: '" + tok + "'");
    }
    if (used != tok.size())
      throw std::invalid_argument("not a number: '" + tok + "'");
    out.push_back(v);
    pos = next + 1;
  }
  return out;
}

inline ValueDistribution ValueDistribution::parse(const std::string& text) {
  const std::size_t colon = text.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("value distribution must look like name:p1,p2[,p3]");
  const std::string name = text.substr(0, colon);
  const std::vector<double> params = parse_double_list(text.substr(colon + 1));
  if (name == "uniform" && params.size() == 2)
    return make_uniform(params[0], params[1]);
  if (name == "beta" && params.size() == 2)
    return make_beta(params[0], params[1]);
  if ((name == "two-cluster" || name == "two_cluster") && params.size() == 3)
    return make_two_cluster(params[0], params[1], params[2]);
  throw std::invalid_argument("unknown value distribution: '" + text + "'");
}

/// Builds `count` prompts whose true values are iid draws from the
/// descriptor. Construction inverts the softmax: the correct answer gets
/// logit ln(v (K-1) / (1 - v)) and every other answer gets logit 0, so
/// true_value(prompt) == v up to rounding. The correct answer's position
/// is uniform over [0, K).
inline PromptPopulation make_population(int count,
                                        const ValueDistribution& dist,
                                        int k, std::uint64_t seed) {
  if (count <= 0)
    throw std::invalid_argument("make_population: count must be positive");
  if (k < 2) throw std::invalid_argument("make_population: k must be >= 2");
  dist.validate();

  Rng rng(derive_seed(seed, 0x706f70 /* population stream */));
  PromptPopulation pop;
  pop.rng_seed = seed;
  pop.prompts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double v = dist.sample(rng);
    const int correct = static_cast<int>(rng.next_index(static_cast<std::size_t>(k)));
    PromptState p;
    p.prompt_id = i;
    p.logits.assign(static_cast<std::size_t>(k), 0.0);
    p.logits[static_cast<std::size_t>(correct)] = logit_for_value(v, k);
    p.correct_index = correct;
    pop.prompts.push_back(std::move(p));
  }
  return pop;
}

}  // namespace basis
