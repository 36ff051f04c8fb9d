#include "girl/config.hpp"
#include "girl/error.hpp"
#include "girl/run.hpp"
#include "girl/theory.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

enum Exit { kOk = 0, kUsage = 1, kRunFailure = 2, kVerifyFailure = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"girl: grounded world-model RL desk lab"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  uint64_t seed = 0;
  auto* train = app.add_subcommand("train", "train one run into a directory");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--seed", seed, "master seed")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  std::string run_dir;
  int horizon = 0, particles = 0;
  auto* dfm = app.add_subcommand("dfm", "drift-fidelity metric of a finished run");
  dfm->add_option("--run", run_dir, "run directory")->required();
  dfm->add_option("--horizon", horizon, "rollout horizon L")->required();
  dfm->add_option("--particles", particles, "particles per start")->required();

  int trials = 0;
  std::string out_path;
  auto* verify = app.add_subcommand("verify-theory", "tabular checks of the analytic results");
  verify->add_option("--trials", trials, "random MDP trials")->required();
  verify->add_option("--seed", seed, "seed")->required();
  verify->add_option("--out", out_path, "report JSON path")->required();

  std::string runs_glob, baseline_glob, metric = "iqm";
  int resamples = 0;
  auto* stats = app.add_subcommand("stats", "aggregate evaluation statistics over runs");
  stats->add_option("--runs", runs_glob, "glob of run directories")->required();
  stats->add_option("--metric", metric, "iqm or pi")->required()->check(CLI::IsMember({"iqm", "pi"}));
  stats->add_option("--baseline", baseline_glob, "glob of baseline run directories");
  stats->add_option("--resamples", resamples, "bootstrap resamples")->required();
  stats->add_option("--seed", seed, "bootstrap seed")->required();

  auto* distill = app.add_subcommand("distill", "distill the grounding teacher of a run");
  distill->add_option("--run", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      girl::RunConfig cfg = girl::load_config(config_path);
      cfg.seed = seed;
      girl::RunRecord rec = girl::run_experiment(cfg, out_dir);
      std::cout << rec.to_json().dump(2) << "\n";
      return rec.status == "ok" ? kOk : kRunFailure;
    }
    if (*dfm) {
      girl::metrics::DfmReport r = girl::run_dfm(run_dir, horizon, particles);
      std::cout << r.to_json().dump(2) << "\n";
      return kOk;
    }
    if (*verify) {
      if (trials < 1) throw girl::ContractViolation("--trials must be >= 1");
      girl::theory::SuiteReport r = girl::theory::run_theory_suite(trials, seed);
      std::ofstream out(out_path);
      if (!out.good()) throw girl::ContractViolation("cannot write '" + out_path + "'");
      out << r.to_json().dump(2) << "\n";
      std::cout << r.to_json().dump(2) << "\n";
      return r.all_ok() ? kOk : kVerifyFailure;
    }
    if (*stats) {
      auto runs = girl::expand_runs(runs_glob);
      std::vector<std::string> base;
      if (!baseline_glob.empty()) base = girl::expand_runs(baseline_glob);
      if (runs.empty()) throw girl::ContractViolation("no runs match '" + runs_glob + "'");
      if (!baseline_glob.empty() && base.empty())
        throw girl::ContractViolation("no runs match '" + baseline_glob + "'");
      girl::AggregateReport r = girl::aggregate(runs, base, metric, resamples, seed);
      std::cout << r.to_json().dump(2) << "\n";
      return kOk;
    }
    if (*distill) {
      girl::DistillReport r = girl::run_distill(run_dir);
      std::cout << r.to_json().dump(2) << "\n";
      return r.retired ? kOk : kVerifyFailure;
    }
  } catch (const girl::ContractViolation& e) {
    std::cerr << "girl: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "girl: " << e.what() << "\n";
    return kRunFailure;
  }
  return kUsage;
}
