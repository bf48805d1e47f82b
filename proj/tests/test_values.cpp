#include <doctest.h>

#include <cmath>
#include <vector>

#include "basis/env.hpp"
#include "basis/values.hpp"

using namespace basis;

TEST_SUITE("values") {

TEST_CASE("default grid has 230 points with the documented layout") {
  const BetaGrid grid = BetaGrid::default_grid();
  REQUIRE(grid.size() == 230);
  CHECK(grid[0] == 0.01);
  CHECK(grid[1] == 0.02);
  CHECK(grid[199] == 2.0);
  CHECK(grid[200] == 2.1);
  CHECK(grid[229] == 5.0);
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
}

TEST_CASE("grid construction rejects bad inputs") {
  CHECK_THROWS_AS(BetaGrid({}), std::invalid_argument);
  CHECK_THROWS_AS(BetaGrid({0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(BetaGrid({1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(BetaGrid({2.0, 1.0}), std::invalid_argument);
}

TEST_CASE("soft_value fixed points") {
  for (double beta : {0.01, 0.5, 1.0, 5.0, 1e6}) {
    CHECK(soft_value(0.0, beta) == 0.0);
    CHECK(soft_value(1.0, beta) == 1.0);
  }
}

TEST_CASE("soft_value closed form at beta = 1") {
  const double e = std::exp(1.0);
  CHECK(std::abs(soft_value(0.5, 1.0) - e / (1.0 + e)) < 1e-6);
  CHECK(soft_value(0.5, 1.0) == doctest::Approx(0.731059).epsilon(1e-5));
}

TEST_CASE("soft_value at the grid endpoints") {
  const double top = soft_value(0.5, 5.0);
  CHECK(top > 0.5);
  CHECK(top < 0.56);
  CHECK(soft_value(0.5, 0.01) > 1.0 - 1e-6);
}

TEST_CASE("soft_value dominates p with equality only at the endpoints") {
  Rng rng(77);
  for (int t = 0; t < 500; ++t) {
    const double p = rng.next_double();
    const double beta = 0.01 + 10.0 * rng.next_double();
    const double v = soft_value(p, beta);
    CHECK(v >= p);
    if (p > 1e-9 && p < 1.0 - 1e-9) CHECK(v > p);
  }
}

TEST_CASE("soft_value is monotone in p and in beta") {
  Rng rng(78);
  for (int t = 0; t < 500; ++t) {
    const double p1 = rng.next_double();
    const double p2 = rng.next_double();
    const double beta = 0.01 + 5.0 * rng.next_double();
    const double lo = std::min(p1, p2);
    const double hi = std::max(p1, p2);
    CHECK(soft_value(lo, beta) <= soft_value(hi, beta) + 1e-12);

    const double b1 = 0.01 + 5.0 * rng.next_double();
    const double b2 = 0.01 + 5.0 * rng.next_double();
    const double p = rng.next_double();
    const double blo = std::min(b1, b2);
    const double bhi = std::max(b1, b2);
    CHECK(soft_value(p, blo) >= soft_value(p, bhi) - 1e-12);
  }
}

TEST_CASE("overflow guard kicks in for tiny beta and matches the direct form") {
  bool guarded = false;
  const double v = soft_value(0.5, 1e-3, &guarded);
  CHECK(guarded);
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);
  CHECK(v > 1.0 - 1e-9);

  guarded = true;
  soft_value(0.5, 1.0, &guarded);
  CHECK_FALSE(guarded);

  // Just above and below the switch: the two algebraic forms agree.
  const double beta_lo = 1.0 / (kMaxSafeExponent + 1.0);
  const double beta_hi = 1.0 / (kMaxSafeExponent - 1.0);
  for (double p : {0.1, 0.5, 0.9}) {
    CHECK(soft_value(p, beta_lo) == doctest::Approx(soft_value(p, beta_hi)).epsilon(1e-9));
  }
}

TEST_CASE("soft_value rejects bad arguments") {
  CHECK_THROWS_AS(soft_value(0.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(soft_value(0.5, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(soft_value(-0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(soft_value(1.1, 1.0), std::invalid_argument);
}

TEST_CASE("soft_value_general on constant rewards returns the constant") {
  const std::vector<double> rewards(7, 0.3);
  for (double beta : {0.01, 1.0, 100.0})
    CHECK(soft_value_general(rewards, beta) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("soft_value_general matches the binary closed form") {
  const std::vector<double> pair = {0.0, 1.0};
  const double e = std::exp(1.0);
  CHECK(soft_value_general(pair, 1.0) ==
        doctest::Approx(e / (1.0 + e)).epsilon(1e-12));

  // Any binary sample with mean p equals soft_value(p, beta) to 1e-12
  // relative tolerance.
  Rng rng(5150);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng.next_index(40));
    std::vector<double> rewards(static_cast<std::size_t>(n));
    int ones = 0;
    for (double& r : rewards) {
      r = rng.next_double() < 0.4 ? 1.0 : 0.0;
      ones += r == 1.0 ? 1 : 0;
    }
    const double p = static_cast<double>(ones) / n;
    const double beta = 0.05 + 5.0 * rng.next_double();
    const double general = soft_value_general(rewards, beta);
    const double closed = soft_value(p, beta);
    CHECK(std::abs(general - closed) <= 1e-12 * std::max(1.0, std::abs(closed)));
  }
}

TEST_CASE("soft_value_general is shift-covariant and range-bounded") {
  // Tilting weights cancel a common reward offset, so the estimate moves
  // with the shift; it also never leaves the sample's reward range.
  Rng rng(5151);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng.next_index(12));
    std::vector<double> rewards(static_cast<std::size_t>(n));
    for (double& r : rewards) r = 4.0 * (rng.next_double() - 0.5);
    const double beta = 0.05 + 3.0 * rng.next_double();
    const double shift = 10.0 * (rng.next_double() - 0.5);
    const double base = soft_value_general(rewards, beta);
    CHECK(base >= *std::min_element(rewards.begin(), rewards.end()) - 1e-12);
    CHECK(base <= *std::max_element(rewards.begin(), rewards.end()) + 1e-12);
    std::vector<double> shifted = rewards;
    for (double& r : shifted) r += shift;
    CHECK(soft_value_general(shifted, beta) ==
          doctest::Approx(base + shift).epsilon(1e-9));
  }
}

TEST_CASE("soft_value_general limits") {
  const std::vector<double> rewards = {0.0, 0.0, 1.0, 1.0};
  // Large beta recovers the sample mean.
  CHECK(std::abs(soft_value_general(rewards, 1e3) - 0.5) < 1e-3);
  CHECK(std::abs(soft_value_general(rewards, 1e6) - 0.5) < 1e-5);
  // Tiny beta recovers the max reward when a 1 is present.
  CHECK(std::abs(soft_value_general(rewards, 1e-3) - 1.0) < 1e-5);
}

TEST_CASE("build_table hits the degenerate and concentrated regimes") {
  PromptPopulation pop;
  PromptState sure;
  sure.prompt_id = 0;
  sure.logits = {1e9, 0.0};
  sure.correct_index = 0;
  pop.prompts.push_back(sure);
  PromptState fair;
  fair.prompt_id = 1;
  fair.logits = {0.0, 0.0};
  fair.correct_index = 0;
  pop.prompts.push_back(fair);

  const ValueTable small = build_table(pop, 32, BetaGrid::default_grid(), 2);
  CHECK(small.p_hat(0) == 1.0);

  const ValueTable big = build_table(pop, 100000, BetaGrid::default_grid(), 2);
  CHECK(std::abs(big.p_hat(1) - 0.5) < 0.01);
}

TEST_CASE("build_table is deterministic in the seed") {
  const PromptPopulation pop =
      make_population(32, ValueDistribution::make_uniform(0.1, 0.9), 3, 9);
  const ValueTable a = build_table(pop, 64, BetaGrid::default_grid(), 77);
  const ValueTable b = build_table(pop, 64, BetaGrid::default_grid(), 77);
  REQUIRE(a.entries().size() == b.entries().size());
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    CHECK(a.entries()[i].p_hat == b.entries()[i].p_hat);
    CHECK(a.entries()[i].n == 64);
  }
}

TEST_CASE("eval_table looks up and tilts") {
  std::vector<ValueEntry> entries = {{0, 8, 1.0}, {1, 8, 0.5}, {2, 8, 0.3}};
  const ValueTable table(std::move(entries), BetaGrid::default_grid(), 0);

  for (std::size_t gi : {0UL, 99UL, 229UL}) CHECK(eval_table(table, 0, gi) == 1.0);

  // Index of beta = 1.0 in the default grid.
  const std::size_t idx_one = 99;
  CHECK(table.grid()[idx_one] == 1.0);
  const double e = std::exp(1.0);
  CHECK(std::abs(eval_table(table, 1, idx_one) - e / (1.0 + e)) < 1e-6);

  // Sweeping the grid is nonincreasing in beta.
  double prev = 2.0;
  for (std::size_t gi = 0; gi < table.grid().size(); ++gi) {
    const double v = eval_table(table, 2, gi);
    CHECK(v <= prev + 1e-12);
    prev = v;
  }
}

TEST_CASE("eval_table errors on unknown ids and bad indices") {
  std::vector<ValueEntry> entries = {{0, 1, 0.5}, {1, 1, 0.25}};
  const ValueTable table(std::move(entries), BetaGrid::default_grid(), 0);
  CHECK_THROWS_AS(eval_table(table, 5, 0), std::out_of_range);
  CHECK_THROWS_AS(eval_table(table, -1, 0), std::out_of_range);
  CHECK_THROWS_AS(eval_table(table, 0, 230), std::out_of_range);
}

TEST_CASE("value table construction validates its entries") {
  CHECK_THROWS_AS(ValueTable({{1, 1, 0.5}}, BetaGrid::default_grid(), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(ValueTable({{0, 0, 0.5}}, BetaGrid::default_grid(), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(ValueTable({{0, 1, 1.5}}, BetaGrid::default_grid(), 0),
                  std::invalid_argument);
}

}  // TEST_SUITE
