#include "doctest.h"

#include "girl/config.hpp"
#include "girl/error.hpp"
#include "girl/run.hpp"
#include "girl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace girl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_json() {
  return json::parse(R"({
    "env": {"kind": "linear-gaussian", "horizon": 20},
    "d": 4, "recurrent_dim": 12, "d_g": 8, "K": 2, "H": 5,
    "batch_sequences": 8, "batch_length": 8, "replay_capacity": 5000,
    "delta_warmup_steps": 200,
    "desk": {
      "hidden": 16, "n_feat": 8, "student_hidden": 8, "iterations": 5,
      "prefill_steps": 200, "env_steps_per_iter": 20, "imagination_phases": 1,
      "imagination_starts": 8, "eig_samples": 16, "eig_positions": 1,
      "intrinsic_samples": 4, "eval_episodes": 2, "dfm_horizon": 10,
      "dfm_particles": 8, "dfm_starts": 2, "dfm_trajectories": 1
    }
  })");
}

RunConfig tiny_config(uint64_t seed = 1) {
  RunConfig c = config_from_json(tiny_json());
  c.seed = seed;
  return c;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("girl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<ad::Tensor> snapshot(const ad::ParamRefs& ps) {
  std::vector<ad::Tensor> out;
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

ReplayStep step_with(double reward, bool first) {
  ReplayStep s;
  s.obs = Vec::Constant(2, reward);
  s.semantic = Vec::Zero(1);
  s.feat = Vec::Zero(1);
  s.window = Vec::Zero(1);
  s.prev_action = Vec::Zero(1);
  s.reward = reward;
  s.first = first;
  return s;
}

void write_manifest(const fs::path& dir, uint64_t seed, const std::string& task, double ret) {
  fs::create_directories(dir);
  RunRecord r;
  r.seed = seed;
  r.task = task;
  r.mean_return = ret;
  r.final_returns = {ret};
  std::ofstream(dir / "manifest.json") << r.to_json().dump(2);
}

}  // namespace

TEST_CASE("config: unknown keys are rejected at every level") {
  CHECK_NOTHROW(config_from_json(tiny_json()));
  json j = tiny_json();
  j["gama"] = 0.9;
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);
  j = tiny_json();
  j["desk"]["iteratons"] = 3;
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);
  j = tiny_json();
  j["ablation"] = {{"no_grounding", true}};
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);
  j = tiny_json();
  j["K"] = "five";
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);
  j = tiny_json();
  j["ablation"] = {{"no_ground", true}, {"vae_style", true}};
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);
  j = tiny_json();
  j["gamma"] = 1.0;
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);
}

TEST_CASE("config: ablation flags compose") {
  json j = tiny_json();
  j["ablation"] = {{"no_ground", true}, {"fixed_beta", true}, {"no_intrinsic", true}};
  RunConfig c = config_from_json(j);
  CHECK(c.ablation.no_ground);
  CHECK(c.ablation.fixed_beta);
  CHECK(c.ablation.no_intrinsic);
  j["ablation"] = {{"distill", true}, {"fixed_beta", true}};
  CHECK(config_from_json(j).ablation.distill);
}

TEST_CASE("dfm goal-path trajectories on the sparse chain") {
  json j = tiny_json();
  j["desk"]["dfm_policy"] = "goal-path";
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);
  j["desk"]["dfm_policy"] = "expert";
  CHECK_THROWS_AS(config_from_json(j), ContractViolation);

  j = tiny_json();
  j["env"] = {{"kind", "sparse-chain"}, {"goal_index", 6.0}, {"chain_length", 10.0}, {"horizon", 20}};
  j["desk"]["dfm_policy"] = "goal-path";
  j["desk"]["dfm_horizon"] = 5;
  RunConfig c = config_from_json(j);
  c.seed = 3;
  Trainer t(c);
  auto trajs = t.real_trajectories(2, 0);
  REQUIRE(trajs.size() == 2);
  for (const auto& tr : trajs) {
    CHECK(tr.length() == c.env.shortest_solve_length() + 1);
    for (const auto& a : tr.action) CHECK(a(0, 0) == c.env.action_bound);
    CHECK(tr.obs.back()(0, 0) == 1.0);
  }
  CHECK(t.dfm(5, 4, 1, 0).mean >= 0.0);
}

TEST_CASE("config: hash is stable under key reordering and sensitive to values") {
  const std::string a = R"({"d": 4, "K": 2, "desk": {"hidden": 16, "iterations": 5}, "gamma": 0.99})";
  const std::string b = R"({"gamma": 0.99, "desk": {"iterations": 5, "hidden": 16}, "K": 2, "d": 4})";
  CHECK(config_hash(config_from_json(json::parse(a))) == config_hash(config_from_json(json::parse(b))));
  const std::string c = R"({"gamma": 0.98, "desk": {"iterations": 5, "hidden": 16}, "K": 2, "d": 4})";
  CHECK(config_hash(config_from_json(json::parse(a))) != config_hash(config_from_json(json::parse(c))));
  // The resolved config reproduces itself.
  RunConfig t = tiny_config(7);
  CHECK(config_hash(config_from_json(config_to_json(t))) == config_hash(t));
}

TEST_CASE("config: defaults equal the hyperparameter table and the checked-in defaults file") {
  RunConfig c = config_from_json(json::object());
  CHECK(c.d == 32);
  CHECK(c.recurrent_dim == 512);
  CHECK(c.d_g == 128);
  CHECK(c.msae_W == 16);
  CHECK(c.msae_mask_rate == 0.4);
  CHECK(c.K == 5);
  CHECK(c.H == 15);
  CHECK(c.lambda == 0.95);
  CHECK(c.gamma == 0.995);
  CHECK(c.beta_min == 0.01);
  CHECK(c.beta_max == 10.0);
  CHECK(c.delta_min == 0.01);
  CHECK(c.delta_max == 2.0);
  CHECK(c.eta_delta == 3e-4);
  CHECK(c.eta_beta == 1e-3);
  CHECK(c.tau_EIG == 0.5);
  CHECK(c.tau_RPL == 1.5);
  CHECK(c.mu == 0.1);
  CHECK(c.alpha == 0.01);
  CHECK(c.replay_capacity == 2000000);
  CHECK(c.batch_sequences == 50);
  CHECK(c.batch_length == 50);
  CHECK(c.lr == 6e-4);
  CHECK(c.seeds == 10);
  CHECK(c.N_bs == 50000);
  CHECK(c.tau_distill == 0.05);
  CHECK(c.desk.env_steps_per_iter == 100);
  CHECK(c.desk.imagination_phases == 4);

  RunConfig f = load_config(GIRL_SOURCE_DIR "/configs/defaults.json");
  CHECK(config_to_json(f) == config_to_json(c));
  CHECK_THROWS_AS(load_config(GIRL_SOURCE_DIR "/configs/missing.json"), ContractViolation);
}

TEST_CASE("replay buffer: FIFO capacity, underflow, episode-start masking") {
  ReplayBuffer buf(5);
  Rng rng = make_rng(1, "replay");
  CHECK_THROWS_AS(buf.sample(rng, 2, 3), ContractViolation);
  for (int i = 0; i < 8; ++i) {
    buf.add(step_with(i, i % 4 == 0));
    CHECK(buf.size() <= 5);
  }
  CHECK(buf.size() == 5);
  CHECK(buf.at(0).reward == 3.0);
  CHECK(buf.at(4).reward == 7.0);
  SeqBatch b = buf.sample(rng, 50, 3);
  CHECK(b.T == 3);
  CHECK(b.B == 50);
  for (int r = 0; r < 50; ++r) {
    const double start = b.reward[0](r, 0);
    CHECK(start >= 3.0);
    CHECK(start <= 5.0);
    CHECK(b.first[0](r, 0) == 1.0);
    for (int t = 1; t < 3; ++t) {
      CHECK(b.reward[t](r, 0) == start + t);
      CHECK(b.first[t](r, 0) == ((start + t) == 4.0 ? 1.0 : 0.0));
    }
  }
  CHECK_THROWS_AS(buf.sample(rng, 1, 6), ContractViolation);
}

TEST_CASE("metrics rows use the fixed column order") {
  IterationMetrics m;
  m.step = 3;
  m.beta = 1.5;
  const std::string row = metrics_row(m);
  CHECK(std::count(row.begin(), row.end(), ',') == 9);
  CHECK(row.rfind("3,", 0) == 0);
  const std::string header = kMetricsHeader;
  CHECK(header == "step,episodic_return,mean_drift,delta,beta,eig,rpl,wm_loss,actor_loss,critic_loss");
}

TEST_CASE("training with every learning rate at zero changes only buffer and controller") {
  RunConfig c = tiny_config(2);
  c.lr = c.actor_lr = c.critic_lr = c.msae_lr = c.distill_lr = 0.0;
  Trainer t(c);
  t.prefill();
  auto wm0 = snapshot(t.world_model().all_params());
  auto ac0 = snapshot(t.actor_critic().all_params());
  const size_t buf0 = t.buffer().size();
  const long steps0 = t.env_steps();
  for (int i = 0; i < 4; ++i) t.iterate();
  auto wm1 = snapshot(t.world_model().all_params());
  auto ac1 = snapshot(t.actor_critic().all_params());
  for (size_t i = 0; i < wm0.size(); ++i) CHECK(wm0[i] == wm1[i]);
  for (size_t i = 0; i < ac0.size(); ++i) CHECK(ac0[i] == ac1[i]);
  CHECK(t.env_steps() == steps0 + 4 * c.desk.env_steps_per_iter);
  // Each episode start also stores its first observation.
  CHECK(t.buffer().size() >= buf0 + 4 * static_cast<size_t>(c.desk.env_steps_per_iter));
  CHECK(t.iteration() == 4);
}

TEST_CASE("world-model loss falls by at least 20% over 500 iterations") {
  RunConfig c = tiny_config(3);
  c.desk.env_steps_per_iter = 10;
  Trainer t(c);
  t.prefill();
  std::vector<double> loss;
  for (int i = 0; i < 500; ++i) loss.push_back(t.iterate().wm_loss);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 20; ++i) {
    first += loss[i] / 20;
    last += loss[480 + i] / 20;
  }
  INFO(first, " -> ", last);
  CHECK(last <= 0.8 * first);
}

TEST_CASE("no-ground pipeline runs and feeds the constant embedding to the gate") {
  RunConfig c = tiny_config(4);
  c.ablation.no_ground = true;
  Trainer t(c);
  t.prefill();
  for (int i = 0; i < 3; ++i) {
    auto m = t.iterate();
    CHECK(std::isfinite(m.wm_loss));
  }
  auto& wm = t.world_model();
  CHECK(wm.cfg.grounding == wm::GroundingMode::kConstant);
  // Two unrelated observations ground to the same vector.
  ad::Tensor g1 = t.ground(Vec::Constant(wm.cfg.obs_dim, 1.0), Vec::Constant(wm.cfg.semantic_dim, 1.0), Vec());
  ad::Tensor g2 = t.ground(Vec::Constant(wm.cfg.obs_dim, -3.0), Vec::Constant(wm.cfg.semantic_dim, 2.0), Vec());
  CHECK(g1 == g2);
}

TEST_CASE("run_experiment: determinism, fixed-beta column, manifest reproduction") {
  fs::path root = scratch("runs");
  RunConfig c = tiny_config(5);
  c.delta_warmup_steps = 0;
  RunRecord a = run_experiment(c, (root / "a").string());
  RunRecord b = run_experiment(c, (root / "b").string());
  CHECK(a.status == "ok");
  CHECK(slurp(root / "a" / "metrics.csv") == slurp(root / "b" / "metrics.csv"));
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.final_returns == b.final_returns);

  RunRecord back = load_run((root / "a").string());
  CHECK(back.to_json() == a.to_json());
  CHECK(config_hash(run_config(back)) == a.config_hash);

  RunConfig other = c;
  other.seed = 6;
  run_experiment(other, (root / "c").string());
  CHECK(slurp(root / "a" / "metrics.csv") != slurp(root / "c" / "metrics.csv"));

  RunConfig fixed = c;
  fixed.ablation.fixed_beta = true;
  fixed.beta0 = 2.5;
  run_experiment(fixed, (root / "fixed").string());
  auto rows = read_metrics_csv((root / "fixed" / "metrics.csv").string());
  REQUIRE(rows.size() == 5);
  for (const auto& r : rows) CHECK(r[4] == 2.5);
  auto free_rows = read_metrics_csv((root / "a" / "metrics.csv").string());
  bool moved = false;
  for (const auto& r : free_rows) moved = moved || r[4] != c.beta0;
  CHECK(moved);
}

TEST_CASE("smoke config finishes within a minute") {
  fs::path root = scratch("smoke");
  RunConfig c = load_config(GIRL_SOURCE_DIR "/configs/smoke.json");
  c.seed = 1;
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord r = run_experiment(c, (root / "run").string());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.status == "ok");
  CHECK(secs < 60.0);
  CHECK(fs::exists(root / "run" / "manifest.json"));
  CHECK(fs::exists(root / "run" / "dfm.json"));
  CHECK(fs::exists(root / "run" / "dfm.csv"));
}

TEST_CASE("metrics CSV reader rejects column drift and ragged rows") {
  fs::path root = scratch("csv");
  std::ofstream(root / "ok.csv") << kMetricsHeader << "\n1,2,3,4,5,6,7,8,9,10\n";
  CHECK(read_metrics_csv((root / "ok.csv").string()).size() == 1);
  std::ofstream(root / "swapped.csv")
      << "step,episodic_return,mean_drift,beta,delta,eig,rpl,wm_loss,actor_loss,critic_loss\n";
  CHECK_THROWS_AS(read_metrics_csv((root / "swapped.csv").string()), ContractViolation);
  std::ofstream(root / "ragged.csv") << kMetricsHeader << "\n1,2,3\n";
  CHECK_THROWS_AS(read_metrics_csv((root / "ragged.csv").string()), ContractViolation);
}

TEST_CASE("aggregate: single run, paired variants, report round trip") {
  fs::path root = scratch("agg");
  write_manifest(root / "solo", 1, "linear-gaussian", 4.2);
  auto solo = aggregate({(root / "solo").string()}, {}, "iqm", 200, 3);
  CHECK(solo.iqm.lo == 4.2);
  CHECK(solo.iqm.hi == 4.2);
  CHECK(solo.iqm.point == 4.2);
  CHECK_THROWS_AS(aggregate({}, {}, "iqm", 10, 1), ContractViolation);
  CHECK_THROWS_AS(aggregate({(root / "solo").string()}, {}, "pi", 10, 1), ContractViolation);

  const std::vector<double> xs{3, 5, 7, 9}, ys{4, 5, 6, 1};
  std::vector<std::string> a, b;
  for (int i = 0; i < 4; ++i) {
    write_manifest(root / ("a" + std::to_string(i)), i, "t", xs[i]);
    write_manifest(root / ("b" + std::to_string(i)), i, "t", ys[i]);
    a.push_back((root / ("a" + std::to_string(i))).string());
    b.push_back((root / ("b" + std::to_string(i))).string());
  }
  auto rep = aggregate(a, b, "pi", 500, 9);
  // Enumerate the 16 pairs: wins count 1, ties 1/2.
  double wins = 0.0;
  for (double x : xs)
    for (double y : ys) wins += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  CHECK(rep.pi.point == doctest::Approx(wins / 16).epsilon(1e-15));
  CHECK(rep.pi.lo <= rep.pi.point);
  CHECK(rep.pi.hi >= rep.pi.point);

  auto again = AggregateReport::from_json(json::parse(rep.to_json().dump()));
  CHECK(again.to_json() == rep.to_json());
  CHECK(again.run_return == xs);
  CHECK(again.baseline_return == ys);

  auto globbed = expand_runs((root / "a*").string());
  CHECK(globbed.size() == 4);
}
