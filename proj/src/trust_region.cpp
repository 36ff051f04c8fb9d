#include "girl/trust_region.hpp"

#include "girl/error.hpp"

#include <algorithm>

namespace girl::tr {

void TrustRegionConfig::validate() const {
  require(0 < delta_min && delta_min <= delta_max, "trust region: delta bounds out of order");
  require(0 < beta_min && beta_min <= beta_max, "trust region: beta bounds out of order");
  require(eta_delta > 0 && eta_beta > 0, "trust region: step sizes must be positive");
  require(tau_eig > 0 && tau_rpl > 0, "trust region: gains must be positive");
}

double drift(const GaussianDiag& post, const GaussianDiag& prior) { return kl_diag(post, prior); }

double eig(const GaussianMixture& members, int n_samples, uint64_t seed) {
  double mean_entropy = 0.0;
  for (const auto& c : members.components) mean_entropy += entropy_diag(c);
  mean_entropy /= static_cast<double>(members.size());
  return mc_mixture_entropy(members, n_samples, seed) - mean_entropy;
}

double rpl(const GaussianDiag& post_next, const GaussianMixture& members, int n_samples,
           uint64_t seed) {
  return mc_kl_to_mixture(post_next, members, n_samples, seed);
}

TrustRegionState update_delta(const TrustRegionState& s, double eig_t, double rpl_t) {
  TrustRegionState n = s;
  const auto& c = s.cfg;
  n.delta = std::clamp(s.delta + c.eta_delta * (c.tau_eig * eig_t - c.tau_rpl * rpl_t), c.delta_min,
                       c.delta_max);
  return n;
}

TrustRegionState update_beta(const TrustRegionState& s, double mean_drift) {
  require(mean_drift >= 0.0, "update_beta: mean drift must be non-negative");
  TrustRegionState n = s;
  const auto& c = s.cfg;
  n.beta = std::clamp(s.beta + c.eta_beta * (mean_drift - s.delta), c.beta_min, c.beta_max);
  return n;
}

double i_elbo(const std::vector<double>& log_obs, const std::vector<double>& log_rew,
              const std::vector<double>& drifts, double beta) {
  require_dims(log_obs.size() == log_rew.size() && log_obs.size() == drifts.size(),
               "i_elbo: sequence lengths differ");
  double acc = 0.0;
  for (size_t t = 0; t < log_obs.size(); ++t) acc += log_obs[t] + log_rew[t] - beta * drifts[t];
  return acc;
}

double girl_objective(double i_elbo_value, double cm_loss, double mu) {
  require(mu >= 0.0, "girl_objective: mu must be non-negative");
  return i_elbo_value - mu * cm_loss;
}

}  // namespace girl::tr
