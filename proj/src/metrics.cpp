#include "girl/metrics.hpp"

#include "girl/error.hpp"

#include <cmath>

namespace girl::metrics {

using wm::GaussianParams;

Filtered filter(const wm::WorldModel& wm, const RealTrajectory& traj) {
  require(traj.length() >= 1, "filter: empty trajectory");
  require(static_cast<int>(traj.action.size()) >= traj.length() - 1,
          "filter: missing actions");
  Filtered f;
  Tensor h = wm.gru_step(Tensor::Zero(1, wm.cfg.deter), Tensor::Zero(1, wm.cfg.latent),
                         Tensor::Zero(1, wm.cfg.action_dim));
  for (int t = 0; t < traj.length(); ++t) {
    if (t > 0) h = wm.gru_step(h, f.post.back().mean, traj.action[t - 1]);
    f.h.push_back(h);
    f.post.push_back(wm.posterior(h, traj.obs[t]));
  }
  return f;
}

namespace {

// Rolls `n` particles of member k forward through all actions; returns the
// final-step Gaussian parameters of every particle.
GaussianParams rollout_member(const wm::WorldModel& wm, int k, const Tensor& z_t,
                              const Tensor& h_t, const std::vector<Tensor>& actions,
                              const std::vector<Tensor>& groundings, int n, Rng& rng) {
  Tensor z = z_t.replicate(n, 1);
  Tensor h = h_t.replicate(n, 1);
  GaussianParams p;
  for (size_t l = 0; l < actions.size(); ++l) {
    h = wm.gru_step(h, z, actions[l].replicate(n, 1));
    p = wm.prior(k, h, groundings[l].replicate(n, 1));
    if (l + 1 < actions.size())
      z = p.mean + p.log_std.array().exp().matrix().cwiseProduct(standard_normal(rng, n, wm.cfg.latent));
  }
  return p;
}

GaussianDiag moment_match(const std::vector<GaussianParams>& groups) {
  Eigen::Index n = 0;
  const Eigen::Index d = groups.front().mean.cols();
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
  for (const auto& g : groups) {
    mean += g.mean.colwise().sum();
    n += g.mean.rows();
  }
  mean /= static_cast<double>(n);
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
  for (const auto& g : groups) {
    var += (2.0 * g.log_std).array().exp().matrix().colwise().sum();
    var += (g.mean.rowwise() - mean).array().square().matrix().colwise().sum();
  }
  var /= static_cast<double>(n);
  return GaussianDiag(mean.transpose(), 0.5 * var.array().log().matrix().transpose());
}

}  // namespace

GaussianDiag multi_step_prior(const wm::WorldModel& wm, const Tensor& z_t, const Tensor& h_t,
                              const std::vector<Tensor>& actions,
                              const std::vector<Tensor>& groundings, int particles, uint64_t seed,
                              int member) {
  require(!actions.empty(), "multi_step_prior: empty action list");
  require_dims(actions.size() == groundings.size(), "multi_step_prior: actions/groundings differ");
  require(particles >= 1, "multi_step_prior: particles must be >= 1");
  require(member < wm.K(), "multi_step_prior: member index out of range");
  std::vector<GaussianParams> groups;
  if (member >= 0) {
    Rng rng = make_rng(seed, "dfm.particles", static_cast<uint64_t>(member));
    groups.push_back(rollout_member(wm, member, z_t, h_t, actions, groundings, particles, rng));
  } else {
    const int K = wm.K();
    for (int k = 0; k < K; ++k) {
      const int n = particles / K + (k < particles % K ? 1 : 0);
      if (n == 0) continue;
      Rng rng = make_rng(seed, "dfm.particles", static_cast<uint64_t>(k));
      groups.push_back(rollout_member(wm, k, z_t, h_t, actions, groundings, n, rng));
    }
  }
  return moment_match(groups);
}

nlohmann::json DfmReport::to_json() const {
  return {{"horizon", horizon}, {"particles", particles}, {"starts", starts},
          {"per_step", per_step}, {"dfm", mean}};
}

DfmReport dfm(const wm::WorldModel& wm, const std::vector<RealTrajectory>& trajs, int L,
              int particles, uint64_t seed, int starts_per_traj) {
  require(L >= 1, "dfm: horizon must be >= 1");
  require(starts_per_traj >= 1, "dfm: starts_per_traj must be >= 1");
  require(!trajs.empty(), "dfm: no trajectories");
  DfmReport rep;
  rep.horizon = L;
  rep.particles = particles;
  rep.per_step.assign(L, 0.0);
  const int K = wm.K();
  const int per_member = std::max(1, particles / K);
  for (size_t ti = 0; ti < trajs.size(); ++ti) {
    const auto& traj = trajs[ti];
    require(traj.length() >= L + 1, "dfm: trajectory shorter than L + 1");
    Filtered f = filter(wm, traj);
    const int last_start = traj.length() - 1 - L;
    const int n_starts = std::min(starts_per_traj, last_start + 1);
    for (int s = 0; s < n_starts; ++s) {
      const int t0 = n_starts == 1 ? 0 : static_cast<int>(std::lround(double(s) * last_start / (n_starts - 1)));
      for (int k = 0; k < K; ++k) {
        Rng rng = make_rng(seed, "dfm.start", ti * 1000003ULL + static_cast<uint64_t>(t0), k);
        Tensor z = f.post[t0].mean.replicate(per_member, 1);
        Tensor h = f.h[t0].replicate(per_member, 1);
        for (int l = 1; l <= L; ++l) {
          h = wm.gru_step(h, z, traj.action[t0 + l - 1].replicate(per_member, 1));
          GaussianParams p = wm.prior(k, h, traj.ground[t0 + l].replicate(per_member, 1));
          GaussianDiag mm = moment_match({p});
          rep.per_step[l - 1] += kl_diag(f.post[t0 + l].row(0), mm) / K;
          if (l < L)
            z = p.mean + p.log_std.array().exp().matrix().cwiseProduct(
                             standard_normal(rng, per_member, wm.cfg.latent));
        }
      }
      ++rep.starts;
    }
  }
  double total = 0.0;
  for (auto& v : rep.per_step) {
    v /= rep.starts;
    total += v;
  }
  rep.mean = total / L;
  return rep;
}

double imagined_return_lower_bound(double r_star, double gamma, double eps_tau) {
  require(gamma > 0.0 && gamma < 1.0, "imagined_return_lower_bound: gamma must lie in (0, 1)");
  require(eps_tau >= 0.0, "imagined_return_lower_bound: eps must be non-negative");
  return r_star - 2.0 * gamma / ((1.0 - gamma) * (1.0 - gamma)) * eps_tau;
}

double phase_threshold(double gamma, double r_thresh) {
  require(gamma > 0.0 && gamma < 1.0, "phase_threshold: gamma must lie in (0, 1)");
  return (1.0 - gamma) * (1.0 - gamma) * r_thresh / (2.0 * gamma);
}

bool predict_solve(double dfm_at_l, double threshold) {
  require(dfm_at_l >= 0.0 && threshold >= 0.0, "predict_solve: inputs must be non-negative");
  return dfm_at_l <= threshold;
}

}  // namespace girl::metrics
