#pragma once

// Aggregate evaluation statistics over normalized scores: interquartile
// mean, probability of improvement, optimality gap and a task-stratified
// percentile bootstrap.

#include <cstdint>
#include <string>
#include <vector>

namespace girl::stats {

// score[task][run]; run counts may differ between tasks.
struct ScoreMatrix {
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> scores;

  // Throws ContractViolation if empty, ragged against `tasks`, a task has no
  // runs, or a score is non-finite.
  void validate() const;
  std::vector<double> pooled() const;
};

// (raw - r_rand) / (r_expert - r_rand); equal references raise ContractViolation.
double normalize(double raw, double r_rand, double r_expert);

// Mean of the central 50% of the sorted scores. When N is not a multiple of
// 4 the two boundary samples enter with fractional weight.
double iqm(std::vector<double> scores);

// P(X > Y) over all pairs, ties counted 1/2.
double prob_improvement(const std::vector<double>& xs, const std::vector<double>& ys);

inline double optimality_gap(double iqm_value) { return 1.0 - iqm_value; }

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double point = 0.0;
};

// IQM of the pooled scores.
Interval bootstrap_iqm(const ScoreMatrix& sm, int n_resamples, uint64_t seed, double level = 0.95);

// Mean over shared tasks of per-task PI(sm, other); both matrices are
// resampled within each task.
Interval bootstrap_pi(const ScoreMatrix& sm, const ScoreMatrix& other, int n_resamples,
                      uint64_t seed, double level = 0.95);

// Linear-interpolated empirical quantile, q in [0, 1].
double quantile(std::vector<double> xs, double q);

}  // namespace girl::stats
