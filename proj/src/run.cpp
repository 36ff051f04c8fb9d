#include "girl/run.hpp"

#include "girl/error.hpp"
#include "girl/trainer.hpp"

#include <glob.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace girl {

namespace fs = std::filesystem;

LogLevel log_level() {
  const char* v = std::getenv("GIRL_LOG");
  if (!v) return LogLevel::kInfo;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::kQuiet;
  if (s == "debug" || s == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[girl] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::cerr << "[girl:debug] " << msg << "\n";
}

namespace {

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  require(out.good(), "cannot write '" + p.string() + "'");
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  require(in.good(), "cannot open '" + p.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation("'" + p.string() + "' is not valid JSON: " + e.what());
  }
  return j;
}

void write_dfm(const fs::path& dir, const std::string& stem, const metrics::DfmReport& r) {
  write_json(dir / (stem + ".json"), r.to_json());
  std::ofstream csv(dir / (stem + ".csv"));
  csv << "horizon,dfm\n";
  char buf[64];
  for (size_t l = 0; l < r.per_step.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", l + 1, r.per_step[l]);
    csv << buf;
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

nlohmann::json interval_json(const stats::Interval& i) {
  return {{"lo", i.lo}, {"hi", i.hi}, {"point", i.point}};
}

stats::Interval interval_from(const nlohmann::json& j) {
  return {j.at("lo").get<double>(), j.at("hi").get<double>(), j.at("point").get<double>()};
}

}  // namespace

nlohmann::json RunRecord::to_json() const {
  return {{"config_hash", config_hash},
          {"seed", seed},
          {"task", task},
          {"status", status},
          {"diagnostics", diagnostics},
          {"iterations", iterations},
          {"final_returns", final_returns},
          {"mean_return", mean_return},
          {"dfm_mean", dfm_mean},
          {"dfm_horizon", dfm_horizon},
          {"wall_time_s", wall_time_s},
          {"metrics_csv", metrics_csv},
          {"checkpoint", checkpoint},
          {"dfm_json", dfm_json},
          {"dfm_csv", dfm_csv},
          {"config", config}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.task = j.at("task").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.diagnostics = j.at("diagnostics").get<std::string>();
  r.iterations = j.at("iterations").get<int>();
  r.final_returns = j.at("final_returns").get<std::vector<double>>();
  r.mean_return = j.at("mean_return").get<double>();
  r.dfm_mean = j.at("dfm_mean").get<double>();
  r.dfm_horizon = j.at("dfm_horizon").get<int>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  r.metrics_csv = j.at("metrics_csv").get<std::string>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.dfm_json = j.at("dfm_json").get<std::string>();
  r.dfm_csv = j.at("dfm_csv").get<std::string>();
  r.config = j.at("config");
  return r;
}

std::string task_name(const RunConfig& cfg) {
  std::string t = env::to_string(cfg.env.kind);
  if (cfg.env.distractor_dim > 0) t += "+d" + std::to_string(cfg.env.distractor_dim);
  return t;
}

RunRecord run_experiment(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  RunRecord rec;
  rec.config = config_to_json(cfg);
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.seed;
  rec.task = task_name(cfg);
  rec.metrics_csv = "metrics.csv";
  rec.checkpoint = "checkpoint";
  rec.dfm_horizon = cfg.desk.dfm_horizon;

  auto finish = [&]() {
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(dir / "manifest.json", rec.to_json());
  };

  std::ofstream csv(dir / rec.metrics_csv);
  require(csv.good(), "cannot write metrics CSV in '" + out_dir + "'");
  csv << kMetricsHeader << "\n";

  Trainer trainer(cfg);
  try {
    log_info("prefill " + std::to_string(cfg.desk.prefill_steps) + " steps, seed " +
             std::to_string(cfg.seed));
    trainer.prefill();
    for (int i = 0; i < cfg.desk.iterations; ++i) {
      IterationMetrics m = trainer.iterate();
      csv << metrics_row(m) << "\n";
      rec.iterations = i + 1;
      log_debug("iter " + std::to_string(i + 1) + " " + metrics_row(m));
      if (cfg.desk.checkpoint_every > 0 && (i + 1) % cfg.desk.checkpoint_every == 0)
        trainer.save((dir / ("checkpoint_" + std::to_string(i + 1))).string());
    }
    csv.flush();
    rec.final_returns = trainer.evaluate(cfg.desk.eval_episodes, 0);
    rec.mean_return = mean_of(rec.final_returns);
    trainer.save((dir / rec.checkpoint).string());
    metrics::DfmReport d = trainer.dfm(cfg.desk.dfm_horizon, cfg.desk.dfm_particles,
                                       cfg.desk.dfm_trajectories, 0);
    write_dfm(dir, "dfm", d);
    rec.dfm_mean = d.mean;
    rec.dfm_json = "dfm.json";
    rec.dfm_csv = "dfm.csv";
  } catch (const NumericError& e) {
    rec.status = "failed";
    rec.diagnostics = std::string("iteration ") + std::to_string(rec.iterations + 1) + ": " + e.what();
    log_info("run failed: " + rec.diagnostics);
  }
  finish();
  log_info("run " + rec.status + ": mean return " + std::to_string(rec.mean_return) + ", DFM(" +
           std::to_string(rec.dfm_horizon) + ") " + std::to_string(rec.dfm_mean));
  return rec;
}

RunRecord load_run(const std::string& run_dir) {
  return RunRecord::from_json(read_json(fs::path(run_dir) / "manifest.json"));
}

RunConfig run_config(const RunRecord& r) { return config_from_json(r.config); }

metrics::DfmReport run_dfm(const std::string& run_dir, int L, int particles) {
  RunRecord rec = load_run(run_dir);
  require(rec.status == "ok", "run '" + run_dir + "' did not finish");
  RunConfig cfg = run_config(rec);
  require(L >= 1 && L <= cfg.env.horizon, "dfm: horizon must lie in [1, env.horizon]");
  require(particles >= 1, "dfm: particles must be >= 1");
  Trainer trainer(cfg);
  trainer.load((fs::path(run_dir) / rec.checkpoint).string());
  metrics::DfmReport d = trainer.dfm(L, particles, cfg.desk.dfm_trajectories, 0);
  write_dfm(run_dir, "dfm_L" + std::to_string(L), d);
  return d;
}

nlohmann::json DistillReport::to_json() const {
  return {{"retired", retired},
          {"steps", steps},
          {"running_loss", running_loss},
          {"heldout_mse", heldout_mse},
          {"heldout_grounding_mse", heldout_grounding_mse},
          {"tau", tau}};
}

DistillReport run_distill(const std::string& run_dir) {
  RunRecord rec = load_run(run_dir);
  require(rec.status == "ok", "run '" + run_dir + "' did not finish");
  RunConfig cfg = run_config(rec);
  Trainer trainer(cfg);
  trainer.load((fs::path(run_dir) / rec.checkpoint).string());
  trainer.prefill();
  DistillReport rep;
  rep.tau = cfg.tau_distill;
  rep.retired = trainer.run_distillation(cfg.desk.distill_max_steps);
  rep.steps = trainer.distiller()->steps;
  rep.running_loss = trainer.distiller()->running_loss;

  // Held-out agreement on fresh random-policy observations.
  const auto& wm = trainer.world_model();
  env::Env env(cfg.env);
  Rng rng = make_rng(cfg.seed, "distill.heldout");
  std::uniform_real_distribution<double> u(-cfg.env.action_bound, cfg.env.action_bound);
  const int n = 1000;
  Tensor obs(n, cfg.env.obs_dim()), sem(n, cfg.env.semantic_dim());
  env::Observation o = env.reset(rng);
  for (int i = 0; i < n; ++i) {
    obs.row(i) = o.full().transpose();
    sem.row(i) = o.semantic.transpose();
    Vec a(cfg.env.action_dim);
    for (int k = 0; k < a.size(); ++k) a(k) = u(rng);
    env::StepResult r = env.step(a, rng);
    o = r.done ? env.reset(rng) : r.obs;
  }
  const wm::Distiller& student = *trainer.distiller();
  rep.heldout_mse = wm::distill_loss(student, obs, wm::distill_target(wm, trainer.oracle(), sem));
  Tensor feat(n, trainer.oracle().n_feat());
  for (int i = 0; i < n; ++i) feat.row(i) = trainer.oracle().features(sem.row(i).transpose()).transpose();
  rep.heldout_grounding_mse =
      (student.grounding(wm, obs) - wm.ground_from_features(feat)).rowwise().squaredNorm().mean();
  trainer.save((fs::path(run_dir) / "checkpoint_distilled").string());
  write_json(fs::path(run_dir) / "distill.json", rep.to_json());
  return rep;
}

std::vector<std::vector<double>> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open metrics CSV '" + path + "'");
  std::string line;
  std::getline(in, line);
  require(line == kMetricsHeader, "metrics CSV '" + path + "' has unexpected columns: " + line);
  const size_t ncols = static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    require(row.size() == ncols, "metrics CSV '" + path + "' has a ragged row");
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json AggregateReport::to_json() const {
  return {{"metric", metric},
          {"n_runs", n_runs},
          {"n_baseline", n_baseline},
          {"resamples", resamples},
          {"seed", seed},
          {"tasks", tasks},
          {"iqm", interval_json(iqm)},
          {"baseline_iqm", interval_json(baseline_iqm)},
          {"pi", interval_json(pi)},
          {"optimality_gap", optimality_gap},
          {"runs", {{"dirs", run_dirs}, {"dfm", run_dfm}, {"return", run_return}}},
          {"baseline", {{"dirs", baseline_dirs}, {"dfm", baseline_dfm}, {"return", baseline_return}}}};
}

AggregateReport AggregateReport::from_json(const nlohmann::json& j) {
  AggregateReport r;
  r.metric = j.at("metric").get<std::string>();
  r.n_runs = j.at("n_runs").get<int>();
  r.n_baseline = j.at("n_baseline").get<int>();
  r.resamples = j.at("resamples").get<int>();
  r.seed = j.at("seed").get<uint64_t>();
  r.tasks = j.at("tasks").get<std::vector<std::string>>();
  r.iqm = interval_from(j.at("iqm"));
  r.baseline_iqm = interval_from(j.at("baseline_iqm"));
  r.pi = interval_from(j.at("pi"));
  r.optimality_gap = j.at("optimality_gap").get<double>();
  const auto& runs = j.at("runs");
  r.run_dirs = runs.at("dirs").get<std::vector<std::string>>();
  r.run_dfm = runs.at("dfm").get<std::vector<double>>();
  r.run_return = runs.at("return").get<std::vector<double>>();
  const auto& base = j.at("baseline");
  r.baseline_dirs = base.at("dirs").get<std::vector<std::string>>();
  r.baseline_dfm = base.at("dfm").get<std::vector<double>>();
  r.baseline_return = base.at("return").get<std::vector<double>>();
  return r;
}

std::vector<std::string> expand_runs(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0) {
    for (size_t i = 0; i < g.gl_pathc; ++i)
      if (fs::exists(fs::path(g.gl_pathv[i]) / "manifest.json")) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  std::sort(out.begin(), out.end());
  return out;
}

stats::ScoreMatrix score_matrix(const std::vector<RunRecord>& runs) {
  stats::ScoreMatrix sm;
  for (const auto& r : runs) {
    require(r.status == "ok", "aggregate: run with seed " + std::to_string(r.seed) + " failed");
    auto it = std::find(sm.tasks.begin(), sm.tasks.end(), r.task);
    if (it == sm.tasks.end()) {
      sm.tasks.push_back(r.task);
      sm.scores.emplace_back();
      it = sm.tasks.end() - 1;
    }
    sm.scores[static_cast<size_t>(it - sm.tasks.begin())].push_back(r.mean_return);
  }
  sm.validate();
  return sm;
}

AggregateReport aggregate(const std::vector<std::string>& run_dirs,
                          const std::vector<std::string>& baseline_dirs, const std::string& metric,
                          int resamples, uint64_t seed) {
  require(!run_dirs.empty(), "aggregate: no runs found");
  require(metric == "iqm" || metric == "pi", "aggregate: metric must be iqm or pi");
  require(metric != "pi" || !baseline_dirs.empty(), "aggregate: metric pi needs baseline runs");
  require(resamples >= 1, "aggregate: resamples must be >= 1");
  AggregateReport rep;
  rep.metric = metric;
  rep.resamples = resamples;
  rep.seed = seed;
  std::vector<RunRecord> runs, base;
  for (const auto& d : run_dirs) {
    runs.push_back(load_run(d));
    rep.run_dirs.push_back(d);
    rep.run_dfm.push_back(runs.back().dfm_mean);
    rep.run_return.push_back(runs.back().mean_return);
  }
  for (const auto& d : baseline_dirs) {
    base.push_back(load_run(d));
    rep.baseline_dirs.push_back(d);
    rep.baseline_dfm.push_back(base.back().dfm_mean);
    rep.baseline_return.push_back(base.back().mean_return);
  }
  rep.n_runs = static_cast<int>(runs.size());
  rep.n_baseline = static_cast<int>(base.size());
  stats::ScoreMatrix sm = score_matrix(runs);
  rep.tasks = sm.tasks;
  rep.iqm = stats::bootstrap_iqm(sm, resamples, seed);
  rep.optimality_gap = stats::optimality_gap(rep.iqm.point);
  if (!base.empty()) {
    stats::ScoreMatrix bm = score_matrix(base);
    rep.baseline_iqm = stats::bootstrap_iqm(bm, resamples, seed);
    rep.pi = stats::bootstrap_pi(sm, bm, resamples, seed);
  }
  return rep;
}

}  // namespace girl
