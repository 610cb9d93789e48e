#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "opflab/labels.hpp"
#include "opflab/predictor.hpp"
#include "opflab/strategies.hpp"

namespace opflab {

// Resolves a bundled case name ("case9") or a path to a .m file.
std::string resolve_case_path(const std::string& case_or_path);
std::shared_ptr<const NetworkModel> load_network(const std::string& case_or_path);

struct SweepGrids {
  std::vector<double> blend = {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0};
  std::vector<double> retract = {0.1, 0.5, 0.9};
  std::vector<double> screen = {0.005, 0.01, 0.02, 0.03};
};

struct BenchConfig {
  std::string case_id = "case9";
  SplitSizes sizes;
  std::uint64_t seed = 7;
  ExtractOptions extract;
  std::vector<WarmStartSpec> strategies;
  PredictorConfig predictor;
  SweepGrids grids;
  std::string out_dir = "out";

  // Midpoint first and oracle_pd(lambda_z_mu) always present, no duplicates.
  std::vector<WarmStartSpec> effective_strategies() const;

  // key = value lines; '#' starts a comment; lists are comma separated.
  static BenchConfig parse(const std::string& text);
  static BenchConfig load(const std::string& path);
  std::string to_text() const;
};

struct StrategyRow {
  std::string method;
  std::vector<int> iterations;  // per test instance; failures count as max_iter
  std::vector<std::string> status;
  double mean = 0.0;
  double median = 0.0;
  double reduction = 0.0;  // (mean_cold - mean) / mean_cold
  double convergence_rate = 0.0;
  int failures = 0;
  double mu_ratio = 0.0;          // mean over instances
  double removed_fraction = 0.0;  // mean over instances (hybrid only)
};

struct MetricsSummary {
  std::string group;
  double rmse = 0.0;     // mean over test instances
  double pearson = 0.0;  // mean over instances where defined
  int undefined = 0;     // instances with an undefined correlation
};

struct BenchReport {
  std::string case_id;
  std::uint64_t seed = 0;
  double tol = 0.0;
  int max_iter = 0;
  std::string predictor;  // empty when no model was used
  std::vector<int> instances;
  std::vector<StrategyRow> rows;
  std::vector<MetricsSummary> prediction_metrics;
};

// (cold - mean) / cold, or 0 when the cold mean is not positive.
double reduction(double cold_mean, double mean);

// Evaluates the given strategies on every test label with identical solver
// options. The first spec is the cold baseline for reductions.
std::vector<StrategyRow> evaluate_strategies(const std::vector<WarmStartSpec>& specs,
                                             std::shared_ptr<const NetworkModel> net, const Dataset& ds,
                                             const PredictorModel* model, const ExtractOptions& opts);

BenchReport run_protocol(const BenchConfig& config, std::shared_ptr<const NetworkModel> net, const Dataset& ds,
                         const PredictorModel* model);

// Loads case, dataset and (if needed) the fitted model from config.out_dir.
BenchReport run_protocol(const BenchConfig& config);

enum class SweepKind { blend, retraction, screening };

SweepKind parse_sweep_kind(const std::string& name);
std::string to_string(SweepKind k);

struct SweepRow {
  double parameter = 0.0;
  StrategyRow row;
};

struct SweepTable {
  SweepKind kind = SweepKind::blend;
  std::string case_id;
  StrategyRow cold;
  std::vector<SweepRow> rows;
};

SweepTable sweep(const BenchConfig& config, std::shared_ptr<const NetworkModel> net, const Dataset& ds,
                 const PredictorModel& model, SweepKind kind);

std::string report_csv(const BenchReport& r);
std::string report_json(const BenchReport& r);
std::string report_markdown(const BenchReport& r);
std::string sweep_csv(const SweepTable& t);
std::string sweep_json(const SweepTable& t);
std::string sweep_markdown(const SweepTable& t);

enum ReportFormat : unsigned { format_csv = 1, format_json = 2, format_markdown = 4, format_all = 7 };

// Writes report.{csv,json,md} (or sweep_<kind>.*) into dir and returns the
// paths written.
std::vector<std::filesystem::path> emit_report(const BenchReport& r, const std::filesystem::path& dir,
                                               unsigned formats = format_all);
std::vector<std::filesystem::path> emit_sweep(const SweepTable& t, const std::filesystem::path& dir,
                                              unsigned formats = format_all);

std::filesystem::path model_path(const std::filesystem::path& out_dir, const std::string& case_id);

}  // namespace opflab
