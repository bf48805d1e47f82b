// Command-line front end: population and value-table generation, the
// estimator diagnostics protocols, calibration sweeps, and the toy
// REINFORCE trainer. Every subcommand is deterministic given its full
// flag set (including --seed); no entropy is drawn from the environment.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "basis/calibration.hpp"
#include "basis/diagnostics.hpp"
#include "basis/env.hpp"
#include "basis/estimators.hpp"
#include "basis/io.hpp"
#include "basis/parallel.hpp"
#include "basis/trainer.hpp"
#include "basis/values.hpp"
#include "basis/version.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  int threads = 0;
  std::string config_path;
};

void add_common(CLI::App* cmd, CommonOptions* common) {
  cmd->add_option("--output-dir", common->output_dir,
                  "Directory for artifacts and the run manifest");
  cmd->add_option("--seed", common->seed,
                  "Seed for every randomized step (default 0)");
  cmd->add_option("--threads", common->threads,
                  "Worker threads; 0 uses all cores. Outputs do not depend "
                  "on this setting");
  cmd->add_option("--config", common->config_path,
                  "Flat key=value file; explicit flags override its values");
}

/// Expands a flat key=value config file into long flags appended to the
/// argument list. Flags already given on the command line win, config
/// values beat defaults.
std::vector<std::string> apply_config_file(const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  std::vector<std::string> expanded = args;
  std::istringstream file(basis::io::read_text_file(config_path));
  std::string line;
  while (std::getline(file, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line is not key=value: '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    const std::string flag = "--" + key;
    bool already_given = false;
    for (const std::string& arg : args)
      if (arg == flag || arg.rfind(flag + "=", 0) == 0) already_given = true;
    if (!already_given) expanded.push_back(flag + "=" + value);
  }
  return expanded;
}

std::string collect_command_line(int argc, char** argv) {
  std::ostringstream out;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) out << ' ';
    out << argv[i];
  }
  return out.str();
}

std::string config_contents(const CommonOptions& common) {
  if (common.config_path.empty()) return "";
  return basis::io::read_text_file(common.config_path);
}

void finish_run(const CommonOptions& common, const std::string& command_line,
                const std::string& config, std::vector<std::string> artifacts) {
  basis::io::RunManifest manifest;
  manifest.command_line = command_line;
  manifest.config_file = config;
  manifest.seed = common.seed;
  manifest.artifacts = std::move(artifacts);
  manifest.tool_version = basis::kVersion;
  basis::io::write_manifest(common.output_dir, manifest);
}

fs::path prepare_output_dir(const CommonOptions& common) {
  fs::path dir(common.output_dir);
  fs::create_directories(dir);
  return dir;
}

/// Parses "family[:variant][:G]" items, e.g. "grpo:8" or "basis:unb:1".
std::vector<basis::EstimatorSpec> parse_estimators(const std::string& text,
                                                   double epsilon) {
  std::vector<basis::EstimatorSpec> specs;
  std::istringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (item.empty()) continue;
    std::vector<std::string> parts;
    std::istringstream fields(item);
    std::string part;
    while (std::getline(fields, part, ':')) parts.push_back(part);
    basis::EstimatorSpec spec;
    spec.epsilon = epsilon;
    spec.family = basis::parse_family(parts.at(0));
    if (spec.family == basis::Family::basis) {
      if (parts.size() < 2)
        throw std::invalid_argument("basis estimator needs a variant: " + item);
      spec.variant = basis::parse_variant(parts.at(1));
      spec.group_size = parts.size() > 2 ? std::stoi(parts.at(2)) : 1;
    } else {
      spec.group_size = parts.size() > 1 ? std::stoi(parts.at(1)) : 1;
    }
    spec.validate();
    specs.push_back(spec);
  }
  if (specs.empty()) throw std::invalid_argument("no estimators given");
  return specs;
}

int run(int argc, char** argv) {
  const std::string command_line = collect_command_line(argc, argv);

  CLI::App app{"Synthetic-bandit simulator for batchwise single-rollout "
               "advantage estimation"};
  app.set_version_flag("--version", basis::kVersion);
  app.require_subcommand(1);

  // --- gen-pop ---------------------------------------------------------
  CommonOptions pop_common;
  int pop_count = 0;
  std::string pop_dist = "uniform:0.05,0.95";
  int pop_k = 4;
  CLI::App* gen_pop = app.add_subcommand(
      "gen-pop", "Generate a synthetic prompt population (.pop.json)");
  gen_pop->add_option("--count", pop_count, "Number of prompts")->required();
  gen_pop->add_option("--dist", pop_dist,
                      "Target value distribution: uniform:lo,hi | beta:a,b | "
                      "two-cluster:v1,v2,mix");
  gen_pop->add_option("--k", pop_k, "Answers per prompt (>= 2)");
  add_common(gen_pop, &pop_common);

  // --- gen-values ------------------------------------------------------
  CommonOptions values_common;
  std::string values_pop;
  int values_n = 64;
  std::string values_grid;
  CLI::App* gen_values = app.add_subcommand(
      "gen-values", "Build the reference value table (.vtab.json)");
  gen_values->add_option("--pop", values_pop, "Population file")->required();
  gen_values->add_option("--n", values_n, "Reference rollouts per prompt");
  gen_values->add_option("--grid", values_grid,
                         "Comma-separated tilt grid override (default: the "
                         "230-point grid on [0.01, 5])");
  add_common(gen_values, &values_common);

  // --- diagnose --------------------------------------------------------
  CommonOptions diag_common;
  std::string diag_protocol;
  std::string diag_pop;
  std::string diag_table;
  int diag_batch = 64;
  int diag_repeats = 10;
  int diag_batches = 500;
  int diag_curve_batches = 50;
  double diag_epsilon = 1e-6;
  double diag_drift = 0.0;
  std::string diag_estimators;
  CLI::App* diagnose = app.add_subcommand(
      "diagnose", "Run an estimator-quality protocol and emit CSV/JSON");
  diagnose
      ->add_option("--protocol", diag_protocol,
                   "group-sweep | heterogeneity | difficulty | beta-curve")
      ->required()
      ->check(CLI::IsMember(
          {"group-sweep", "heterogeneity", "difficulty", "beta-curve"}));
  diagnose->add_option("--pop", diag_pop, "Population file")->required();
  diagnose->add_option("--table", diag_table, "Value table file")->required();
  diagnose->add_option("--B", diag_batch, "Batch size");
  diagnose->add_option("--repeats", diag_repeats, "Repeats (group-sweep, difficulty)")
      ->check(CLI::Range(1, 1000000));
  diagnose->add_option("--batches", diag_batches, "Batches (heterogeneity)")
      ->check(CLI::Range(1, 1000000));
  diagnose->add_option("--curve-batches", diag_curve_batches,
                       "Batches (beta-curve)")
      ->check(CLI::Range(1, 1000000));
  diagnose->add_option("--epsilon", diag_epsilon, "Active-set threshold");
  diagnose->add_option("--drift-beta", diag_drift,
                       "beta-curve checkpoint drift; <= 0 keeps the current "
                       "policy at the reference");
  diagnose->add_option("--estimators", diag_estimators,
                       "Comma list of family[:variant][:G] entries");
  std::string diag_group_sizes = "1,2,4,8";
  diagnose->add_option("--group-sizes", diag_group_sizes,
                       "Group sizes for the default estimator roster");
  int diag_mc_oracle = 0;
  diagnose->add_option("--mc-oracle", diag_mc_oracle,
                       "Estimate oracle values from this many Monte Carlo "
                       "rollouts instead of the closed form (0 = exact)");
  add_common(diagnose, &diag_common);

  // --- calibrate-sweep -------------------------------------------------
  CommonOptions cal_common;
  std::string cal_pop;
  std::string cal_table;
  int cal_batch = 512;
  int cal_trials = 50;
  double cal_tilt = 0.0;
  double cal_epsilon = 1e-6;
  std::string cal_variant = "unb";
  bool cal_curves = false;
  CLI::App* calibrate = app.add_subcommand(
      "calibrate-sweep", "Repeated tilt selection on freshly drawn rewards");
  calibrate->add_option("--pop", cal_pop, "Population file")->required();
  calibrate->add_option("--table", cal_table, "Value table file")->required();
  calibrate->add_option("--B", cal_batch, "Batch size");
  calibrate->add_option("--trials", cal_trials, "Number of trials")
      ->check(CLI::Range(1, 1000000));
  calibrate->add_option("--tilt-beta", cal_tilt,
                        "Draw rewards at soft_value(p_hat, tilt); <= 0 draws "
                        "at the reference p_hat");
  calibrate->add_option("--epsilon", cal_epsilon, "Active-set threshold");
  calibrate->add_option("--variant", cal_variant, "unb | vop | rvg");
  calibrate->add_flag("--curves", cal_curves,
                      "Also write full objective curves (calibration.json)");
  add_common(calibrate, &cal_common);

  // --- train -----------------------------------------------------------
  CommonOptions train_common;
  std::string train_pop;
  std::string train_table;
  std::string train_family;
  std::string train_variant = "unb";
  int train_group = 1;
  double train_epsilon = 1e-6;
  int train_steps = 100;
  int train_batch = 64;
  double train_lr = 0.1;
  int train_eval_every = 10;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "Toy REINFORCE loop with a pluggable advantage estimator");
  train_cmd->add_option("--pop", train_pop, "Population file")->required();
  train_cmd->add_option("--table", train_table,
                        "Value table file (required for --family basis)");
  train_cmd->add_option("--family", train_family,
                        "zero | grpo | rloo | reinforcepp | basis")
      ->required();
  train_cmd->add_option("--variant", train_variant, "unb | vop | rvg");
  train_cmd->add_option("--group-size", train_group, "Rollouts per prompt");
  train_cmd->add_option("--epsilon", train_epsilon, "Active-set threshold");
  train_cmd->add_option("--steps", train_steps, "Training steps")
      ->check(CLI::Range(1, 10000000));
  train_cmd->add_option("--B", train_batch, "Batch size");
  train_cmd->add_option("--lr", train_lr, "Learning rate");
  train_cmd->add_option("--eval-every", train_eval_every,
                        "Exact evaluation period");
  add_common(train_cmd, &train_common);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config_file(args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (gen_pop->parsed()) {
    basis::parallel::set_thread_count(pop_common.threads);
    const basis::ValueDistribution dist = basis::ValueDistribution::parse(pop_dist);
    const basis::PromptPopulation pop =
        basis::make_population(pop_count, dist, pop_k, pop_common.seed);
    const fs::path dir = prepare_output_dir(pop_common);
    basis::io::save_population(pop, dir / "population.pop.json");
    finish_run(pop_common, command_line, config_contents(pop_common),
               {"population.pop.json"});
  } else if (gen_values->parsed()) {
    basis::parallel::set_thread_count(values_common.threads);
    const basis::PromptPopulation pop = basis::io::load_population(values_pop);
    basis::BetaGrid grid =
        values_grid.empty()
            ? basis::BetaGrid::default_grid()
            : basis::BetaGrid(basis::parse_double_list(values_grid));
    const basis::ValueTable table =
        basis::build_table(pop, values_n, std::move(grid), values_common.seed);
    const fs::path dir = prepare_output_dir(values_common);
    basis::io::save_value_table(table, dir / "values.vtab.json");
    finish_run(values_common, command_line, config_contents(values_common),
               {"values.vtab.json"});
  } else if (diagnose->parsed()) {
    basis::parallel::set_thread_count(diag_common.threads);
    const basis::PromptPopulation pop = basis::io::load_population(diag_pop);
    const basis::ValueTable table = basis::io::load_value_table(diag_table);
    const fs::path dir = prepare_output_dir(diag_common);

    if (diag_protocol == "beta-curve") {
      basis::BetaCurveConfig config;
      config.batch_size = diag_batch;
      config.batches = diag_curve_batches;
      config.drift_beta = diag_drift;
      config.epsilon = diag_epsilon;
      config.seed = diag_common.seed;
      const basis::BetaCurve curve =
          basis::compare_initial_vs_refined(pop, table, config);
      basis::io::write_text_file(dir / "beta_curve.csv",
                                 basis::io::beta_curve_to_csv(curve));
      finish_run(diag_common, command_line, config_contents(diag_common),
                 {"beta_curve.csv"});
    } else {
      basis::DiagnosticsConfig config;
      config.batch_size = diag_batch;
      config.repeats = diag_repeats;
      config.heterogeneity_batches = diag_batches;
      config.seed = diag_common.seed;
      config.mc_oracle_rollouts = diag_mc_oracle;
      if (!diag_estimators.empty()) {
        config.estimators = parse_estimators(diag_estimators, diag_epsilon);
      } else if (diag_protocol == "heterogeneity") {
        config.estimators =
            parse_estimators("reinforcepp:1,basis:unb:1,grpo:8", diag_epsilon);
      } else {
        std::vector<int> sizes;
        for (double v : basis::parse_double_list(diag_group_sizes))
          sizes.push_back(static_cast<int>(v));
        config.group_sizes = sizes;
        config.estimators = basis::default_estimators(sizes, diag_epsilon);
      }

      basis::DiagnosticsReport report;
      if (diag_protocol == "group-sweep")
        report = basis::mse_sweep(pop, table, config).report;
      else if (diag_protocol == "heterogeneity")
        report = basis::heterogeneity_sweep(pop, table, config).report;
      else
        report = basis::difficulty_sweep(pop, table, config).report;
      basis::io::write_text_file(dir / "diagnostics.csv",
                                 basis::io::diagnostics_to_csv(report));
      basis::io::write_text_file(
          dir / "diagnostics.json",
          basis::io::diagnostics_to_json(report).dump(2) + "\n");
      finish_run(diag_common, command_line, config_contents(diag_common),
                 {"diagnostics.csv", "diagnostics.json"});
    }
  } else if (calibrate->parsed()) {
    basis::parallel::set_thread_count(cal_common.threads);
    const basis::PromptPopulation pop = basis::io::load_population(cal_pop);
    const basis::ValueTable table = basis::io::load_value_table(cal_table);
    const basis::BasisVariant variant = basis::parse_variant(cal_variant);
    if (static_cast<std::size_t>(cal_batch) > pop.size())
      throw std::invalid_argument("calibrate-sweep: --B exceeds population");

    std::ostringstream csv;
    csv << "trial,beta,beta_index,objective,active_count\n";
    nlohmann::json curves = nlohmann::json::array();
    for (int trial = 0; trial < cal_trials; ++trial) {
      basis::Rng batch_rng(basis::derive_seed(
          cal_common.seed, static_cast<std::uint64_t>(trial), basis::kBatchStream));
      basis::Rng reward_rng(basis::derive_seed(
          cal_common.seed, static_cast<std::uint64_t>(trial), basis::kRewardStream));
      const std::vector<std::size_t> picks = batch_rng.sample_without_replacement(
          pop.size(), static_cast<std::size_t>(cal_batch));
      std::vector<int> ids;
      std::vector<double> rewards;
      for (std::size_t row : picks) {
        const int id = pop.prompts[row].prompt_id;
        const double p_hat = table.p_hat(id);
        const double mean =
            cal_tilt > 0.0 ? basis::soft_value(p_hat, cal_tilt) : p_hat;
        ids.push_back(id);
        rewards.push_back(reward_rng.next_double() < mean ? 1.0 : 0.0);
      }
      const basis::CalibrationResult result =
          basis::select_beta(basis::BinaryRewardBatch(basis::RewardBatch(
                                 ids, rewards, 1)),
                             table, variant, cal_epsilon);
      csv << trial << ',';
      if (result.calibrated) {
        csv << basis::io::format_double(result.beta) << ',' << result.beta_index
            << ',' << basis::io::format_double(result.objective[result.beta_index])
            << ',' << result.active_counts[result.beta_index] << '\n';
      } else {
        csv << ",,,\n";
      }
      if (cal_curves) curves.push_back(basis::io::calibration_to_json(result));
    }
    const fs::path dir = prepare_output_dir(cal_common);
    basis::io::write_text_file(dir / "calibration.csv", csv.str());
    std::vector<std::string> artifacts = {"calibration.csv"};
    if (cal_curves) {
      basis::io::write_text_file(dir / "calibration.json", curves.dump(2) + "\n");
      artifacts.push_back("calibration.json");
    }
    finish_run(cal_common, command_line, config_contents(cal_common),
               std::move(artifacts));
  } else if (train_cmd->parsed()) {
    basis::parallel::set_thread_count(train_common.threads);
    const basis::PromptPopulation pop = basis::io::load_population(train_pop);
    basis::TrainConfig config;
    config.steps = train_steps;
    config.batch_size = train_batch;
    config.learning_rate = train_lr;
    config.eval_every = train_eval_every;
    config.seed = train_common.seed;
    config.estimator.family = basis::parse_family(train_family);
    config.estimator.variant = basis::parse_variant(train_variant);
    config.estimator.group_size = train_group;
    config.estimator.epsilon = train_epsilon;
    config.estimator.validate();

    std::optional<basis::ValueTable> table;
    if (!train_table.empty())
      table = basis::io::load_value_table(train_table);
    if (config.estimator.family == basis::Family::basis && !table)
      throw std::invalid_argument("train: --family basis requires --table");

    const basis::TrainTrace trace =
        basis::train(pop, table ? &*table : nullptr, config);
    const fs::path dir = prepare_output_dir(train_common);
    basis::io::write_text_file(dir / "trace.csv", basis::io::trace_to_csv(trace));
    finish_run(train_common, command_line, config_contents(train_common),
               {"trace.csv"});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
