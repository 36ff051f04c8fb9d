#pragma once

// Drift-fidelity metric over real trajectories, the multi-step prior it is
// built on, the imagined-return lower bound and the phase-transition
// predictor.

#include "girl/gaussian.hpp"
#include "girl/world_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace girl::metrics {

using ad::Tensor;
using wm::GaussianParams;

// A real trajectory: observation o_t, the action a_t taken after it, and the
// grounding c_t computed from o_t. actions may be one shorter than obs.
struct RealTrajectory {
  std::vector<Tensor> obs;     // each 1 x obs_dim
  std::vector<Tensor> action;  // each 1 x action_dim
  std::vector<Tensor> ground;  // each 1 x d_g

  int length() const { return static_cast<int>(obs.size()); }
};

// Posterior filtering with posterior means: h_0 = GRU(0, 0), h_{t+1} =
// GRU(h_t, [z_t, a_t]).
struct Filtered {
  std::vector<Tensor> h;
  std::vector<GaussianParams> post;
};
Filtered filter(const wm::WorldModel& wm, const RealTrajectory& traj);

// Moment-matched diagonal Gaussian over z_{t+l}, l = actions.size(), from
// particle rollouts starting at (z_t, h_t). member >= 0 rolls out that prior
// member only; member < 0 spreads particles evenly across members. The
// final step uses each particle's Gaussian (mean of means, mean variance
// plus variance of means), so deterministic dynamics reproduce the prior
// head exactly.
GaussianDiag multi_step_prior(const wm::WorldModel& wm, const Tensor& z_t, const Tensor& h_t,
                              const std::vector<Tensor>& actions,
                              const std::vector<Tensor>& groundings, int particles, uint64_t seed,
                              int member = -1);

struct DfmReport {
  int horizon = 0;
  int particles = 0;
  int starts = 0;
  std::vector<double> per_step;  // l = 1..L
  double mean = 0.0;

  nlohmann::json to_json() const;
};

// Mean over start indices and ensemble members of
// KL(q(z_{t+l}) || p^(l)_k(z_{t+l})), averaged over l = 1..L. Start indices
// are spread evenly over each trajectory, `starts_per_traj` at most.
DfmReport dfm(const wm::WorldModel& wm, const std::vector<RealTrajectory>& trajs, int L,
              int particles, uint64_t seed, int starts_per_traj = 16);

// R* - 2 gamma / (1 - gamma)^2 * eps
double imagined_return_lower_bound(double r_star, double gamma, double eps_tau);
// (1 - gamma)^2 r / (2 gamma)
double phase_threshold(double gamma, double r_thresh);
// True (predicted solve) iff dfm <= threshold.
bool predict_solve(double dfm_at_l, double threshold);

}  // namespace girl::metrics
