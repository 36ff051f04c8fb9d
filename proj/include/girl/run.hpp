#pragma once

// Run orchestration and persistence: one training run into a directory,
// DFM and distillation passes over a finished run, and aggregation of many
// runs into an evaluation report.

#include "girl/config.hpp"
#include "girl/evalstats.hpp"
#include "girl/metrics.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace girl {

// GIRL_LOG = quiet | info | debug (default info). Messages go to stderr.
enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };
LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

struct RunRecord {
  std::string config_hash;
  uint64_t seed = 0;
  std::string task;
  std::string status = "ok";  // ok | failed
  std::string diagnostics;
  int iterations = 0;
  std::vector<double> final_returns;
  double mean_return = 0.0;
  double dfm_mean = 0.0;  // at desk.dfm_horizon
  int dfm_horizon = 0;
  double wall_time_s = 0.0;
  std::string metrics_csv;
  std::string checkpoint;
  std::string dfm_json;
  std::string dfm_csv;
  nlohmann::json config;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

// Task label used to stratify runs: env kind plus distractor width.
std::string task_name(const RunConfig& cfg);

// Trains into `out_dir` (created if needed) and writes manifest.json,
// metrics.csv, the checkpoint and the DFM tables. A non-finite loss marks
// the record failed and is reported in the manifest; it does not throw.
RunRecord run_experiment(const RunConfig& cfg, const std::string& out_dir);

RunRecord load_run(const std::string& run_dir);
RunConfig run_config(const RunRecord& r);

// Recomputes DFM for a finished run from its checkpoint; writes
// dfm_L<L>.json and dfm_L<L>.csv into the run directory.
metrics::DfmReport run_dfm(const std::string& run_dir, int L, int particles);

struct DistillReport {
  bool retired = false;
  long steps = 0;
  double running_loss = 0.0;
  double heldout_mse = 0.0;            // student vs teacher projection, the trained quantity
  double heldout_grounding_mse = 0.0;  // same after the layer norm, per row
  double tau = 0.0;
  nlohmann::json to_json() const;
};

// Refills a replay set with the random policy, trains the student until it
// retires the teacher, and measures agreement on fresh observations.
DistillReport run_distill(const std::string& run_dir);

// Writes the metrics CSV columns header plus rows; read back with
// `read_metrics_csv`, which rejects any column drift.
std::vector<std::vector<double>> read_metrics_csv(const std::string& path);

struct AggregateReport {
  std::string metric;  // iqm | pi
  int n_runs = 0;
  int n_baseline = 0;
  int resamples = 0;
  uint64_t seed = 0;
  std::vector<std::string> tasks;
  stats::Interval iqm;
  stats::Interval baseline_iqm;
  stats::Interval pi;  // P(runs > baseline)
  double optimality_gap = 0.0;
  // Per run directory, DFM at its own desk horizon and mean return.
  std::vector<std::string> run_dirs;
  std::vector<double> run_dfm;
  std::vector<double> run_return;
  std::vector<std::string> baseline_dirs;
  std::vector<double> baseline_dfm;
  std::vector<double> baseline_return;

  nlohmann::json to_json() const;
  static AggregateReport from_json(const nlohmann::json& j);
};

// Expands a shell glob to run directories holding a manifest.json.
std::vector<std::string> expand_runs(const std::string& pattern);
stats::ScoreMatrix score_matrix(const std::vector<RunRecord>& runs);

// `baseline` may be empty; metric "pi" requires it.
AggregateReport aggregate(const std::vector<std::string>& run_dirs,
                          const std::vector<std::string>& baseline_dirs, const std::string& metric,
                          int resamples, uint64_t seed);

}  // namespace girl
