#pragma once

// Diagonal Gaussians over the latent space, in two flavours: plain values
// (GaussianDiag, used by estimators and metrics) and batched tape variables
// (GaussianVar, used inside training losses).

#include "girl/autodiff.hpp"
#include "girl/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace girl {

using Vec = Eigen::VectorXd;

inline constexpr double kLogStdMin = -8.0;
inline constexpr double kLogStdMax = 4.0;

struct GaussianDiag {
  Vec mean;
  Vec log_std;

  GaussianDiag() = default;
  // Clamps log_std into [kLogStdMin, kLogStdMax]; NaN entries are rejected.
  GaussianDiag(Vec mean, Vec log_std);

  static GaussianDiag standard(Eigen::Index dim);

  Eigen::Index dim() const { return mean.size(); }
  Vec std() const { return log_std.array().exp(); }
  double log_prob(const Vec& x) const;
};

// Uniformly weighted mixture, weight 1/K per component.
struct GaussianMixture {
  std::vector<GaussianDiag> components;

  GaussianMixture() = default;
  explicit GaussianMixture(std::vector<GaussianDiag> comps);

  size_t size() const { return components.size(); }
  Eigen::Index dim() const { return components.front().dim(); }
};

// KL(p || q) in nats.
double kl_diag(const GaussianDiag& p, const GaussianDiag& q);
double entropy_diag(const GaussianDiag& p);
Vec sample_reparam(const GaussianDiag& p, const Vec& noise);

double mixture_log_prob(const GaussianMixture& m, const Vec& x);

// -1/n sum log m(x_i): samples split evenly over the components (random
// component choice when n < K), Latin hypercube noise within each.
// Deterministic given the seed.
double mc_mixture_entropy(const GaussianMixture& m, int n_samples, uint64_t seed);

// 1/n sum [log q(x_i) - log m(x_i)], x_i ~ q by Latin hypercube noise.
double mc_kl_to_mixture(const GaussianDiag& q, const GaussianMixture& m, int n_samples,
                        uint64_t seed);

// Batched diagonal Gaussian on a tape: mean and log_std are B x d.
struct GaussianVar {
  ad::Var mean;
  ad::Var log_std;

  Eigen::Index batch() const { return mean.rows(); }
  Eigen::Index dim() const { return mean.cols(); }
  // Row b as a plain GaussianDiag.
  GaussianDiag row(Eigen::Index b) const;
};

// Per-row KL(p || q): B x 1.
ad::Var kl_diag(const GaussianVar& p, const GaussianVar& q);
// mean + exp(log_std) * noise, differentiable in both parameters.
ad::Var sample_reparam(const GaussianVar& p, const ad::Tensor& noise);

}  // namespace girl
