#pragma once

// Drift, ensemble disagreement and miscalibration estimates, and the
// trust-radius / dual-variable controller that sets the KL weight.

#include "girl/gaussian.hpp"

#include <cstdint>
#include <vector>

namespace girl::tr {

struct TrustRegionConfig {
  double delta_min = 0.01;
  double delta_max = 2.0;
  double beta_min = 0.01;
  double beta_max = 10.0;
  double eta_delta = 3e-4;
  double eta_beta = 1e-3;
  double tau_eig = 0.5;
  double tau_rpl = 1.5;

  // Throws ContractViolation unless bounds are ordered and steps/gains > 0.
  void validate() const;
};

struct TrustRegionState {
  TrustRegionConfig cfg;
  double delta = 0.5;
  double beta = 1.0;
};

// KL(post || prior), argument order as in the per-step drift definition.
double drift(const GaussianDiag& post, const GaussianDiag& prior);
// Mixture entropy minus mean member entropy.
double eig(const GaussianMixture& members, int n_samples, uint64_t seed);
// KL(post_next || uniform mixture of members).
double rpl(const GaussianDiag& post_next, const GaussianMixture& members, int n_samples,
           uint64_t seed);

// delta' = clip(delta + eta_delta (tau_eig eig - tau_rpl rpl), delta_min, delta_max)
TrustRegionState update_delta(const TrustRegionState& s, double eig_t, double rpl_t);
// beta' = clip(beta + eta_beta (mean_drift - delta), beta_min, beta_max);
// negative mean_drift raises ContractViolation.
TrustRegionState update_beta(const TrustRegionState& s, double mean_drift);

// sum_t [log_obs_t + log_rew_t - beta drift_t]
double i_elbo(const std::vector<double>& log_obs, const std::vector<double>& log_rew,
              const std::vector<double>& drifts, double beta);
// i_elbo - mu * cm_loss
double girl_objective(double i_elbo_value, double cm_loss, double mu);

}  // namespace girl::tr
