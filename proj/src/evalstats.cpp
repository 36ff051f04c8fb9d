#include "girl/evalstats.hpp"

#include "girl/error.hpp"
#include "girl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace girl::stats {

void ScoreMatrix::validate() const {
  require(!scores.empty(), "ScoreMatrix is empty");
  require(tasks.size() == scores.size(), "ScoreMatrix: task names and score rows differ");
  for (const auto& row : scores) {
    require(!row.empty(), "ScoreMatrix: task without runs");
    for (double x : row) require(std::isfinite(x), "ScoreMatrix: non-finite score");
  }
}

std::vector<double> ScoreMatrix::pooled() const {
  std::vector<double> out;
  for (const auto& row : scores) out.insert(out.end(), row.begin(), row.end());
  return out;
}

double normalize(double raw, double r_rand, double r_expert) {
  require(r_expert != r_rand, "normalize: expert and random references coincide");
  return (raw - r_rand) / (r_expert - r_rand);
}

double iqm(std::vector<double> scores) {
  require(!scores.empty(), "iqm: empty input");
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  double acc = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    // Overlap of [i/N, (i+1)/N] with the central quantile band [1/4, 3/4].
    const double lo = std::max(static_cast<double>(i) / n, 0.25);
    const double hi = std::min(static_cast<double>(i + 1) / n, 0.75);
    if (hi > lo) acc += (hi - lo) * scores[i];
  }
  return acc / 0.5;
}

double prob_improvement(const std::vector<double>& xs, const std::vector<double>& ys) {
  require(!xs.empty() && !ys.empty(), "prob_improvement: empty input");
  double wins = 0.0;
  for (double x : xs)
    for (double y : ys) wins += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return wins / (static_cast<double>(xs.size()) * static_cast<double>(ys.size()));
}

double quantile(std::vector<double> xs, double q) {
  require(!xs.empty(), "quantile: empty input");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const size_t i = static_cast<size_t>(std::floor(pos));
  if (i + 1 >= xs.size()) return xs.back();
  const double f = pos - static_cast<double>(i);
  return xs[i] + f * (xs[i + 1] - xs[i]);
}

namespace {

std::vector<double> resample(const std::vector<double>& row, Rng& rng) {
  std::uniform_int_distribution<size_t> pick(0, row.size() - 1);
  std::vector<double> out(row.size());
  for (auto& x : out) x = row[pick(rng)];
  return out;
}

Interval percentile(std::vector<double> stats, double point, double level) {
  Interval iv;
  iv.point = point;
  iv.lo = quantile(stats, (1.0 - level) / 2.0);
  iv.hi = quantile(std::move(stats), (1.0 + level) / 2.0);
  return iv;
}

void check_args(int n_resamples, double level) {
  require(n_resamples >= 1, "bootstrap: n_resamples must be >= 1");
  require(level > 0.0 && level < 1.0, "bootstrap: level must lie in (0, 1)");
}

double mean_task_pi(const std::vector<std::vector<double>>& a,
                    const std::vector<std::vector<double>>& b) {
  double acc = 0.0;
  for (size_t t = 0; t < a.size(); ++t) acc += prob_improvement(a[t], b[t]);
  return acc / static_cast<double>(a.size());
}

}  // namespace

Interval bootstrap_iqm(const ScoreMatrix& sm, int n_resamples, uint64_t seed, double level) {
  sm.validate();
  check_args(n_resamples, level);
  std::vector<double> stats(n_resamples);
  for (int r = 0; r < n_resamples; ++r) {
    Rng rng = make_rng(seed, "bootstrap.iqm", static_cast<uint64_t>(r));
    std::vector<double> pool;
    for (const auto& row : sm.scores) {
      auto s = resample(row, rng);
      pool.insert(pool.end(), s.begin(), s.end());
    }
    stats[r] = iqm(std::move(pool));
  }
  return percentile(std::move(stats), iqm(sm.pooled()), level);
}

Interval bootstrap_pi(const ScoreMatrix& sm, const ScoreMatrix& other, int n_resamples,
                      uint64_t seed, double level) {
  sm.validate();
  other.validate();
  check_args(n_resamples, level);
  require(sm.tasks == other.tasks, "bootstrap_pi: task lists differ");
  std::vector<double> stats(n_resamples);
  for (int r = 0; r < n_resamples; ++r) {
    Rng rng = make_rng(seed, "bootstrap.pi", static_cast<uint64_t>(r));
    std::vector<std::vector<double>> a, b;
    for (size_t t = 0; t < sm.scores.size(); ++t) {
      a.push_back(resample(sm.scores[t], rng));
      b.push_back(resample(other.scores[t], rng));
    }
    stats[r] = mean_task_pi(a, b);
  }
  return percentile(std::move(stats), mean_task_pi(sm.scores, other.scores), level);
}

}  // namespace girl::stats
