// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coloc/oracle.hpp"
#include "coloc/predictor.hpp"
#include "coloc/simulator.hpp"
#include "coloc/workload.hpp"

namespace coloc::cli {

/// Everything one config file describes.
struct Config {
  SimConfig sim;
  TraceSpec trace;
  ProfileGrid profiles;
  double profile_noise_sigma = 0.01;
  std::uint64_t profile_seed = 7;
};

/// Parses a JSON config. Unknown keys are rejected so that typos surface.
/// Relative trace paths resolve against `base_dir`.
Config config_from_json(const std::string& text, const std::string& source,
                        const std::string& base_dir = "");
Config load_config(const std::string& path);
std::string config_to_json(const Config& cfg);

/// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise_sigma;
  std::optional<double> headroom;
  std::optional<int> gpus;
  std::optional<int> grid_steps;
  std::optional<std::string> trace_path;
  std::optional<bool> check_invariants;
  std::optional<bool> log_steps;
};

void apply(Config& cfg, const Overrides& o);

struct RunReport {
  SimMode mode = SimMode::Adaptive;
  double finetune_throughput = 0.0;
  double tpot_p50_ms = 0.0;
  double tpot_p99_ms = 0.0;
  double tpot_mean_ms = 0.0;
  double qos_violation_rate = 0.0;
  /// Relative gain of this run over a baseline run, when compared.
  std::optional<double> improvement_vs_baseline;
};

RunReport make_report(SimMode mode, const Metrics& m);
std::string report_to_json(const Config& cfg, const RunReport& report, const SimResult& result);

/// `tpot_ms,cdf` at 1001 evenly spaced quantiles.
std::string tpot_cdf_csv(const std::vector<double>& samples);
std::string sm_timeline_csv(const Metrics& m);
std::string mem_timeline_csv(const Metrics& m);

struct FitOutcome {
  ModelBundle models;
  FitSummary summary;
  bool colo_missing = false;
};

FitOutcome cmd_fit(const Config& cfg, const std::string& profiles_path,
                   const std::string& out_path);

/// Models from a file when given, else fitted from oracle profiles.
ModelBundle obtain_models(const Config& cfg, const std::optional<std::string>& models_path);

/// Runs one mode and writes report.json, tpot_cdf.csv, sm_timeline.csv,
/// mem_timeline.csv, events.csv and one decisions CSV per device under
/// `out_dir`. Returns the report.
RunReport cmd_simulate(const Config& cfg, const std::optional<std::string>& models_path,
                       const std::string& out_dir);

struct Comparison {
  std::vector<RunReport> reports;
  std::vector<Metrics> metrics;
  /// Adaptive's relative gain over the Static and Separate runs.
  double gain_vs_static = 0.0;
  double gain_vs_separate = 0.0;
};

/// Runs Adaptive, Static and Separate on one trace and seed, in parallel.
Comparison compare_modes(const Config& cfg, const ModelBundle& models);
std::string comparison_table(const Comparison& c);
std::string comparison_json(const Config& cfg, const Comparison& c);

Comparison cmd_compare(const Config& cfg, const std::optional<std::string>& models_path,
                       const std::string& out_dir);

std::vector<Request> cmd_gen_trace(const Config& cfg, const std::string& out_path);
std::vector<ProfilePoint> cmd_gen_profiles(const Config& cfg, const std::string& out_path);

/// `error kind=<kind> message="<text>"`, the line printed on failure.
std::string error_line(const std::string& kind, const std::string& message);

}  // namespace coloc::cli
