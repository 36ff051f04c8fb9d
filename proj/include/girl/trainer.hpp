#pragma once

// The full training loop: real-data collection into a FIFO replay buffer,
// world-model updates under the trust-region controller, and imagination
// phases for the actor-critic.

#include "girl/config.hpp"
#include "girl/envs.hpp"
#include "girl/imagination.hpp"
#include "girl/metrics.hpp"
#include "girl/trust_region.hpp"
#include "girl/world_model.hpp"

#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace girl {

using ad::Tensor;
using ad::Var;
using env::Vec;

// One stored environment step: the observation o_t, the action a_{t-1} that
// led to it, the reward r_t received on arrival, and whether o_t starts an
// episode. Oracle features and the MSAE window are computed on insertion.
struct ReplayStep {
  Vec obs;
  Vec semantic;
  Vec feat;
  Vec window;
  Vec prev_action;
  double reward = 0.0;
  bool first = false;
};

// T tensors of B rows each.
struct SeqBatch {
  int T = 0;
  int B = 0;
  std::vector<Tensor> obs, semantic, feat, window, prev_action, reward, first;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {}

  void add(ReplayStep s);
  size_t size() const { return steps_.size(); }
  size_t capacity() const { return capacity_; }
  const ReplayStep& at(size_t i) const { return steps_[i]; }
  // B windows of T consecutive steps, start indices uniform. Throws
  // ContractViolation when fewer than T steps are stored.
  SeqBatch sample(Rng& rng, int B, int T) const;

 private:
  size_t capacity_;
  std::deque<ReplayStep> steps_;
};

struct IterationMetrics {
  long step = 0;
  double episodic_return = 0.0;
  double mean_drift = 0.0;
  double delta = 0.0;
  double beta = 0.0;
  double eig = 0.0;
  double rpl = 0.0;
  double wm_loss = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
};

// Fixed column order of the metrics CSV.
inline constexpr const char* kMetricsHeader =
    "step,episodic_return,mean_drift,delta,beta,eig,rpl,wm_loss,actor_loss,critic_loss";
std::string metrics_row(const IterationMetrics& m);

wm::WorldModelConfig world_model_config(const RunConfig& cfg);

class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  // Random-policy steps into the buffer, then MSAE pretraining if enabled.
  void prefill();
  IterationMetrics iterate();

  // Mean return of the deterministic policy over `episodes` fresh episodes.
  std::vector<double> evaluate(int episodes, uint64_t salt) const;
  // Real trajectories (stochastic policy, or the goal path when
  // desk.dfm_policy says so) with groundings from the model's current
  // grounding source.
  std::vector<metrics::RealTrajectory> real_trajectories(int n, uint64_t salt) const;
  metrics::DfmReport dfm(int L, int particles, int n_traj, uint64_t salt) const;

  // One world-model step on a fresh batch without touching the controller;
  // returns the loss. Used by tests and the distillation tool.
  double world_model_step();
  // Distill on replay observations until retirement or `max_steps`.
  bool run_distillation(int max_steps);

  void save(const std::string& stem);
  void load(const std::string& stem);

  const RunConfig& config() const { return cfg_; }
  wm::WorldModel& world_model() { return wm_; }
  const wm::WorldModel& world_model() const { return wm_; }
  img::ActorCritic& actor_critic() { return ac_; }
  const tr::TrustRegionState& trust_region() const { return tr_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const env::GroundingOracle& oracle() const { return oracle_; }
  const std::optional<wm::Distiller>& distiller() const { return distiller_; }
  long env_steps() const { return env_steps_; }
  long iteration() const { return iteration_; }

  // Plain grounding for one observation (and its MSAE window).
  Tensor ground(const Vec& obs, const Vec& semantic, const Vec& window) const;
  Vec features(const Vec& semantic) const;

 private:
  struct Agent {
    env::Env env;
    bool needs_reset = true;
    Tensor h, z, a;
    std::deque<Vec> history;  // recent semantic states
    double episode_return = 0.0;
  };

  struct WmStats {
    double loss = 0.0;
    double mean_drift = 0.0;
    double eig = 0.0;
    double rpl = 0.0;
    std::vector<Tensor> h, z;  // posterior states, for imagination starts
  };

  Vec window_of(const std::deque<Vec>& history) const;
  void collect(int steps, bool random_policy, Rng& rng);
  WmStats train_world_model(Rng& rng, bool update_controller);
  void pretrain_msae();
  void maybe_distill();
  Var ground_taped(ad::Tape& t, const SeqBatch& b, int i);

  RunConfig cfg_;
  env::GroundingOracle oracle_;
  wm::WorldModel wm_;
  img::ActorCritic ac_;
  nn::AdamState wm_opt_;
  tr::TrustRegionState tr_;
  std::optional<wm::Distiller> distiller_;
  ReplayBuffer buffer_;
  Agent agent_;
  long env_steps_ = 0;
  long iteration_ = 0;
  double last_return_ = 0.0;
  double warmup_drift_sum_ = 0.0;
  long warmup_count_ = 0;
};

}  // namespace girl
