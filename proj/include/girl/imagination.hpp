#pragma once

// Imagined rollouts through the learned prior, lambda-returns and the
// actor-critic updates driven by them.

#include "girl/autodiff.hpp"
#include "girl/nn.hpp"
#include "girl/world_model.hpp"

#include <vector>

namespace girl::img {

using ad::Tape;
using ad::Tensor;
using ad::Var;

inline constexpr double kActionLogStdMin = -5.0;
inline constexpr double kActionLogStdMax = 1.0;

struct ActorCriticConfig {
  int hidden = 64;
  double actor_lr = 8e-5;
  double critic_lr = 8e-5;
  double grad_clip = 100.0;
  double entropy_coef = 3e-4;
  double target_rate = 0.02;
  double gamma = 0.995;
  double lambda = 0.95;
  double action_bound = 1.0;
  bool spectral_norm = false;
};

struct ActorCritic {
  ActorCriticConfig cfg;
  nn::Mlp actor;   // [h, z] -> (mean, raw log-std) per action dim
  nn::Mlp critic;  // [h, z] -> value
  nn::Mlp target;  // slow copy of the critic
  nn::AdamState actor_opt;
  nn::AdamState critic_opt;

  ActorCritic() = default;
  ActorCritic(const ActorCriticConfig& cfg, int feat_dim, int action_dim, Rng& rng);

  int action_dim() const { return actor.out_dim() / 2; }
  ad::ParamRefs actor_params() { return actor.params(); }
  ad::ParamRefs critic_params() { return critic.params(); }
  // Actor, critic and target critic, for checkpoints.
  ad::ParamRefs all_params();

  // bound * tanh(mean + std * noise); also returns the per-row Gaussian
  // entropy of the pre-squash distribution (B x 1).
  std::pair<Var, Var> act(Tape& t, Var feat, const Tensor& noise);
  Tensor act(const Tensor& feat, const Tensor& noise) const;
  Tensor act_deterministic(const Tensor& feat) const;
  // target <- (1 - rate) target + rate critic
  void update_target();
};

// G_t = r_t + gamma [(1 - lam) values_t + lam G_{t+1}], G_T = bootstrap.
// values_t is the value of the state reached after reward r_t.
std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double bootstrap,
                                   double gamma, double lam);
std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values,
                                Var bootstrap, double gamma, double lam);

double intrinsic_bonus(double eig_t, double alpha);

struct ImagineOptions {
  int horizon = 15;
  bool intrinsic = true;
  double alpha = 0.01;
  int intrinsic_samples = 32;
  double latent_noise = 1.0;  // scale on prior sampling noise
  bool deterministic_actor = false;
};

// Per step i = 0..H-1 the trajectory holds the state (h_i, z_i), action a_i,
// reward r_{i+1}, predicted grounding c_{i+1} and target value v_{i+1}. The
// final state (h_H, z_H) is kept separately.
struct ImaginedTrajectory {
  std::vector<Tensor> h, z, action, reward, ground, value;
  Tensor h_last, z_last;

  int length() const { return static_cast<int>(action.size()); }
};

// Taped rollout; the world model and critics are bound frozen, so the only
// gradient leaves are the actor's parameters. Imagined groundings come from
// the Psi head only.
struct TapedRollout {
  std::vector<Var> feat;    // [h_i, z_i], i = 0..H
  std::vector<Var> reward;  // r_{i+1}
  std::vector<Var> value;   // target critic at i + 1
  std::vector<Var> entropy;
  ImaginedTrajectory traj;
};

TapedRollout imagine_taped(Tape& t, wm::WorldModel& wm, ActorCritic& ac, const Tensor& z0,
                           const Tensor& h0, const ImagineOptions& opt, Rng& rng);
ImaginedTrajectory imagine_rollout(wm::WorldModel& wm, ActorCritic& ac, const Tensor& z0,
                                   const Tensor& h0, const ImagineOptions& opt, Rng& rng);

// Mean ensemble disagreement per row, used for the intrinsic bonus.
Tensor ensemble_eig(const std::vector<wm::GaussianParams>& members, int n_samples, uint64_t seed);

struct ActorCriticLosses {
  double actor = 0.0;
  double critic = 0.0;
};

// Pathwise actor step on -mean(lambda return) - entropy bonus, then a critic
// regression step on the stop-gradient returns, then the target update.
ActorCriticLosses actor_critic_update(wm::WorldModel& wm, ActorCritic& ac, const Tensor& z0,
                                      const Tensor& h0, const ImagineOptions& opt, Rng& rng);

// Actor loss alone (for gradient checks); leaves grads on the actor params.
Var actor_loss(Tape& t, const TapedRollout& r, const ActorCritic& ac);

}  // namespace girl::img
