#pragma once

// Run configuration. Keys follow the hyperparameter table names; defaults
// are the full-scale values, and the `desk` block holds the knobs that shrink
// a run to laptop size. Unknown keys are rejected at every level.

#include "girl/envs.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace girl {

struct Ablations {
  bool no_ground = false;     // constant learned grounding embedding
  bool fixed_beta = false;    // beta frozen at beta0
  bool no_intrinsic = false;  // no alpha * EIG bonus in imagination
  bool vae_style = false;     // grounding encoder learned from observations
  bool proprio_msae = false;  // grounding from the masked state autoencoder
  bool distill = false;       // student replaces the oracle once converged
};

struct DeskConfig {
  int hidden = 64;
  int n_feat = 64;
  int student_hidden = 64;
  int iterations = 1000;
  int prefill_steps = 50000;
  int env_steps_per_iter = 100;    // N
  int imagination_phases = 4;      // M
  int imagination_starts = 64;
  int eig_samples = 256;
  int eig_positions = 16;
  int intrinsic_samples = 32;
  int msae_pretrain_steps = 2000;
  int msae_batch = 32;
  int distill_batch = 64;
  int distill_max_steps = 20000;
  int eval_episodes = 10;
  int dfm_horizon = 50;
  int dfm_particles = 256;
  int dfm_starts = 16;
  int dfm_trajectories = 2;
  // Real trajectories for the DFM: "agent" follows the stochastic policy,
  // "goal-path" pushes at full action toward the goal (sparse-chain only).
  std::string dfm_policy = "agent";
  int checkpoint_every = 0;  // 0 = final checkpoint only
  bool msae_attention = false;
  bool spectral_norm = false;
};

struct RunConfig {
  env::EnvSpec env;
  nlohmann::json env_json = nlohmann::json::object();

  int d = 32;
  int recurrent_dim = 512;
  int d_g = 128;
  int msae_W = 16;
  double msae_mask_rate = 0.4;
  int K = 5;
  int H = 15;
  double lambda = 0.95;
  double gamma = 0.995;
  double beta_min = 0.01;
  double beta_max = 10.0;
  double delta_min = 0.01;
  double delta_max = 2.0;
  double eta_delta = 3e-4;
  double eta_beta = 1e-3;
  double tau_EIG = 0.5;
  double tau_RPL = 1.5;
  double mu = 0.1;
  double alpha = 0.01;
  long replay_capacity = 2'000'000;
  int batch_sequences = 50;
  int batch_length = 50;
  double lr = 6e-4;
  int seeds = 10;
  int N_bs = 50'000;
  double tau_distill = 0.05;

  double actor_lr = 8e-5;
  double critic_lr = 8e-5;
  double msae_lr = 3e-4;
  double distill_lr = 1e-3;
  double grad_clip = 100.0;
  double entropy_coef = 3e-4;
  double target_rate = 0.02;
  double beta0 = 1.0;
  double delta0 = -1.0;  // < 0: warm start from the mean drift
  long delta_warmup_steps = 10'000;
  long distill_start_steps = 100'000;

  Ablations ablation;
  DeskConfig desk;
  uint64_t seed = 0;

  // Throws ContractViolation with the offending key on any invalid value.
  void validate() const;
};

// Parses a config; missing keys take defaults, unknown keys throw.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
// Fully resolved config (every key present).
nlohmann::json config_to_json(const RunConfig& c);
// FNV-1a over the canonical (key-sorted) dump of the resolved config, hex.
std::string config_hash(const RunConfig& c);

}  // namespace girl
