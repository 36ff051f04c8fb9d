#include "girl/gaussian.hpp"

#include "girl/error.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace girl {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Latin hypercube standard normals: in every column each of the n
// equal-probability strata holds exactly one draw.
Eigen::MatrixXd stratified_normals(int n, Eigen::Index d, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> perm(n);
  Eigen::MatrixXd out(n, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i) {
      double u = (perm[i] + unit(rng)) / n;
      u = std::clamp(u, 1e-300, 1.0 - 1e-16);
      out(i, j) = -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
    }
  }
  return out;
}

double log_sum_exp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

GaussianDiag::GaussianDiag(Vec m, Vec ls) : mean(std::move(m)), log_std(std::move(ls)) {
  require_dims(mean.size() == log_std.size(), "GaussianDiag: mean and log_std sizes differ");
  for (Eigen::Index i = 0; i < log_std.size(); ++i) {
    if (std::isnan(log_std(i))) throw NumericError("GaussianDiag: NaN log_std");
    log_std(i) = std::clamp(log_std(i), kLogStdMin, kLogStdMax);
  }
}

GaussianDiag GaussianDiag::standard(Eigen::Index dim) {
  return GaussianDiag(Vec::Zero(dim), Vec::Zero(dim));
}

double GaussianDiag::log_prob(const Vec& x) const {
  require_dims(x.size() == dim(), "GaussianDiag::log_prob: dimension mismatch");
  double lp = 0.0;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    double z = (x(i) - mean(i)) * std::exp(-log_std(i));
    lp += -0.5 * z * z - log_std(i) - kHalfLog2Pi;
  }
  return lp;
}

GaussianMixture::GaussianMixture(std::vector<GaussianDiag> comps) : components(std::move(comps)) {
  require(!components.empty(), "GaussianMixture needs at least one component");
  for (const auto& c : components)
    require_dims(c.dim() == components.front().dim(), "GaussianMixture: component dims differ");
}

double kl_diag(const GaussianDiag& p, const GaussianDiag& q) {
  require_dims(p.dim() == q.dim(), "kl_diag: dimension mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.dim(); ++i) {
    double var_ratio = std::exp(2.0 * (p.log_std(i) - q.log_std(i)));
    double d = p.mean(i) - q.mean(i);
    kl += q.log_std(i) - p.log_std(i) + 0.5 * (var_ratio + d * d * std::exp(-2.0 * q.log_std(i))) -
          0.5;
  }
  return std::max(kl, 0.0);
}

double entropy_diag(const GaussianDiag& p) {
  return static_cast<double>(p.dim()) * (0.5 + kHalfLog2Pi) + p.log_std.sum();
}

Vec sample_reparam(const GaussianDiag& p, const Vec& noise) {
  require_dims(noise.size() == p.dim(), "sample_reparam: noise dimension mismatch");
  return p.mean + p.std().cwiseProduct(noise);
}

double mixture_log_prob(const GaussianMixture& m, const Vec& x) {
  require_dims(x.size() == m.dim(), "mixture_log_prob: dimension mismatch");
  std::vector<double> terms;
  terms.reserve(m.size());
  for (const auto& c : m.components) terms.push_back(c.log_prob(x));
  return log_sum_exp(terms) - std::log(static_cast<double>(m.size()));
}

double mc_mixture_entropy(const GaussianMixture& m, int n_samples, uint64_t seed) {
  require(n_samples >= 1, "mc_mixture_entropy: n_samples must be >= 1");
  Rng rng(seed);
  const int k = static_cast<int>(m.size());
  if (n_samples < k) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec noise(m.dim());
    double acc = 0.0;
    for (int i = 0; i < n_samples; ++i) {
      const auto& c = m.components[pick(rng)];
      for (Eigen::Index j = 0; j < noise.size(); ++j) noise(j) = normal(rng);
      acc -= mixture_log_prob(m, sample_reparam(c, noise));
    }
    return acc / n_samples;
  }
  // Stratified over components: each gets its share of the samples and the
  // per-component means are averaged with the uniform mixture weights.
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    const int n_c = n_samples / k + (c < n_samples % k ? 1 : 0);
    const Eigen::MatrixXd noise = stratified_normals(n_c, m.dim(), rng);
    double acc = 0.0;
    for (int i = 0; i < n_c; ++i)
      acc -= mixture_log_prob(m, sample_reparam(m.components[c], noise.row(i).transpose()));
    total += acc / n_c;
  }
  return total / k;
}

double mc_kl_to_mixture(const GaussianDiag& q, const GaussianMixture& m, int n_samples,
                        uint64_t seed) {
  require(n_samples >= 1, "mc_kl_to_mixture: n_samples must be >= 1");
  require_dims(q.dim() == m.dim(), "mc_kl_to_mixture: dimension mismatch");
  Rng rng(seed);
  const Eigen::MatrixXd noise = stratified_normals(n_samples, q.dim(), rng);
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    Vec x = sample_reparam(q, noise.row(i).transpose());
    acc += q.log_prob(x) - mixture_log_prob(m, x);
  }
  return acc / n_samples;
}

GaussianDiag GaussianVar::row(Eigen::Index b) const {
  return GaussianDiag(mean.value().row(b).transpose(), log_std.value().row(b).transpose());
}

ad::Var kl_diag(const GaussianVar& p, const GaussianVar& q) {
  require_dims(p.mean.rows() == q.mean.rows() && p.mean.cols() == q.mean.cols(),
               "kl_diag: batch shape mismatch");
  using namespace ad;
  Var var_ratio = exp(scale(sub(p.log_std, q.log_std), 2.0));
  Var mean_term = mul(square(sub(p.mean, q.mean)), exp(scale(q.log_std, -2.0)));
  Var per_dim = add_scalar(
      add(sub(q.log_std, p.log_std), scale(add(var_ratio, mean_term), 0.5)), -0.5);
  return row_sum(per_dim);
}

ad::Var sample_reparam(const GaussianVar& p, const ad::Tensor& noise) {
  require_dims(noise.rows() == p.mean.rows() && noise.cols() == p.mean.cols(),
               "sample_reparam: noise shape mismatch");
  auto& t = *p.mean.tape();
  return ad::add(p.mean, ad::mul(ad::exp(p.log_std), t.constant(noise)));
}

}  // namespace girl
