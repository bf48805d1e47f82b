#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "basis/calibration.hpp"
#include "basis/diagnostics.hpp"
#include "basis/env.hpp"
#include "basis/trainer.hpp"
#include "basis/values.hpp"

namespace basis::io {

using nlohmann::json;

/// Shortest round-trip decimal form; NaN becomes the empty cell.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "";
  return json(x).dump();
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& contents) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << contents;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// --- population files (.pop.json) -----------------------------------------

inline json population_to_json(const PromptPopulation& pop) {
  json arr = json::array();
  for (const PromptState& p : pop.prompts)
    arr.push_back(json{{"prompt_id", p.prompt_id},
                       {"logits", p.logits},
                       {"correct_index", p.correct_index}});
  return arr;
}

inline void save_population(const PromptPopulation& pop,
                            const std::filesystem::path& path) {
  write_text_file(path, population_to_json(pop).dump(2) + "\n");
}

inline PromptPopulation load_population(const std::filesystem::path& path) {
  const json arr = json::parse(read_text_file(path));
  if (!arr.is_array())
    throw std::runtime_error("population file must hold a JSON array");
  PromptPopulation pop;
  for (const json& item : arr) {
    PromptState p;
    p.prompt_id = item.at("prompt_id").get<int>();
    p.logits = item.at("logits").get<std::vector<double>>();
    p.correct_index = item.at("correct_index").get<int>();
    pop.prompts.push_back(std::move(p));
  }
  pop.validate();
  return pop;
}

// --- value-table files (.vtab.json) ----------------------------------------

inline json value_table_to_json(const ValueTable& table) {
  json entries = json::array();
  for (const ValueEntry& e : table.entries())
    entries.push_back(
        json{{"prompt_id", e.prompt_id}, {"n", e.n}, {"p_hat", e.p_hat}});
  return json{{"reference_seed", table.reference_seed()},
              {"n", table.entries().empty() ? 0 : table.entries().front().n},
              {"grid", table.grid().values()},
              {"entries", entries}};
}

inline void save_value_table(const ValueTable& table,
                             const std::filesystem::path& path) {
  write_text_file(path, value_table_to_json(table).dump(2) + "\n");
}

inline ValueTable load_value_table(const std::filesystem::path& path) {
  const json doc = json::parse(read_text_file(path));
  std::vector<ValueEntry> entries;
  for (const json& item : doc.at("entries")) {
    ValueEntry e;
    e.prompt_id = item.at("prompt_id").get<int>();
    e.n = item.at("n").get<int>();
    e.p_hat = item.at("p_hat").get<double>();
    entries.push_back(e);
  }
  return ValueTable(std::move(entries),
                    BetaGrid(doc.at("grid").get<std::vector<double>>()),
                    doc.at("reference_seed").get<std::uint64_t>());
}

// --- diagnostics reports ----------------------------------------------------

inline std::string diagnostics_to_csv(const DiagnosticsReport& report) {
  std::ostringstream out;
  out << "estimator,variant,G,bin_lo,bin_hi,mse,collapse_freq,n\n";
  for (const ReportRow& row : report.rows) {
    out << row.estimator << ',' << row.variant << ',' << row.group_size << ','
        << format_double(row.bin_lo) << ',' << format_double(row.bin_hi) << ','
        << format_double(row.mse) << ',' << format_double(row.collapse_freq)
        << ',' << row.n << '\n';
  }
  return out.str();
}

inline json diagnostics_to_json(const DiagnosticsReport& report) {
  json rows = json::array();
  for (const ReportRow& row : report.rows)
    rows.push_back(json{{"estimator", row.estimator},
                        {"variant", row.variant},
                        {"G", row.group_size},
                        {"bin_lo", row.bin_lo},
                        {"bin_hi", row.bin_hi},
                        {"mse", row.mse},
                        {"collapse_freq", row.collapse_freq},
                        {"n", row.n}});
  return json{{"protocol", report.protocol},
              {"seed", report.seed},
              {"batch_size", report.batch_size},
              {"repeats", report.repeats},
              {"rows", rows}};
}

inline std::string beta_curve_to_csv(const BetaCurve& curve) {
  std::ostringstream out;
  out << "beta,initial_mse,refined_mse,active_n\n";
  for (std::size_t i = 0; i < curve.beta.size(); ++i) {
    out << format_double(curve.beta[i]) << ','
        << format_double(curve.initial_mse[i]) << ','
        << format_double(curve.refined_mse[i]) << ',' << curve.active_n[i]
        << '\n';
  }
  return out.str();
}

// --- calibration results ----------------------------------------------------

inline json calibration_to_json(const CalibrationResult& result) {
  json doc;
  if (result.calibrated) {
    doc["beta"] = result.beta;
    doc["beta_index"] = result.beta_index;
  } else {
    doc["beta"] = nullptr;
    doc["beta_index"] = nullptr;
  }
  json curve = json::array();
  for (double v : result.objective) {
    if (std::isnan(v))
      curve.push_back(nullptr);
    else
      curve.push_back(v);
  }
  doc["objective_curve"] = std::move(curve);
  doc["active_counts"] = result.active_counts;
  return doc;
}

// --- training traces ---------------------------------------------------------

inline std::string trace_to_csv(const TrainTrace& trace) {
  std::ostringstream out;
  out << "step,mean_true_value,selected_beta,grad_var\n";
  for (const TraceRecord& rec : trace.records) {
    out << rec.step << ',' << format_double(rec.mean_true_value) << ','
        << format_double(rec.selected_beta) << ','
        << format_double(rec.grad_var) << '\n';
  }
  return out.str();
}

// --- run manifests -----------------------------------------------------------

struct RunManifest {
  std::string command_line;
  std::string config_file;  // raw contents, empty when no config was given
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::string tool_version;
};

inline void write_manifest(const std::filesystem::path& directory,
                           const RunManifest& manifest) {
  const json doc{{"command_line", manifest.command_line},
                 {"config_file", manifest.config_file},
                 {"seed", manifest.seed},
                 {"artifacts", manifest.artifacts},
                 {"tool_version", manifest.tool_version}};
  write_text_file(directory / "manifest.json", doc.dump(2) + "\n");
}

}  // namespace basis::io
