#pragma once

// Exact finite-MDP machinery for checking the value-gap results: policy
// evaluation by linear solve, value iteration, discounted occupancy, the
// performance-difference identity, and the IPM-based gap bounds.

#include "girl/rng.hpp"

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace girl::theory {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  Mat P;  // (n_states * n_actions) x n_states, row s * n_actions + a
  Mat R;  // n_states x n_actions
  double gamma = 0.9;
  Vec rho0;

  auto row(int s, int a) const { return P.row(static_cast<Eigen::Index>(s) * n_actions + a); }
  double r_max() const { return R.cwiseAbs().maxCoeff(); }
  // Throws ContractViolation unless rows are distributions (1e-12), rho0 is
  // a distribution and gamma lies in [0, 1).
  void validate() const;
};

// n_states x n_actions, rows are action distributions.
using PolicyTable = Mat;

struct PolicyValues {
  Vec V;
  Mat Q;  // n_states x n_actions
};

Mat policy_transition(const TabularMDP& mdp, const PolicyTable& pi);
Vec policy_reward(const TabularMDP& mdp, const PolicyTable& pi);

// Exact solve of V = r_pi + gamma P_pi V; asserts residual < 1e-10.
PolicyValues policy_evaluation(const TabularMDP& mdp, const PolicyTable& pi);

// Bellman backup T^pi V.
Vec bellman(const TabularMDP& mdp, const PolicyTable& pi, const Vec& V);

struct ValueIterationResult {
  Vec V;
  int iterations = 0;
};
ValueIterationResult value_iteration(const TabularMDP& mdp, double tol = 1e-12,
                                     int max_iter = 1'000'000);

// Greedy deterministic policy from converged value iteration; ties (within
// 1e-10) go to the lowest action index.
PolicyTable optimal_policy(const TabularMDP& mdp);

// Normalized discounted state-action occupancy, n_states x n_actions.
Mat occupancy(const TabularMDP& mdp, const PolicyTable& pi);

struct Pair {
  double lhs = 0.0;
  double rhs = 0.0;
};

// lhs = V^pi(rho0) - V^pi'(rho0); rhs = E_{rho^pi}[A^pi'] / (1 - gamma).
Pair pdl_check(const TabularMDP& mdp, const PolicyTable& pi, const PolicyTable& pi_prime);

// Sup over |f| <= 1 of |E_p f - E_q f|, i.e. the L1 distance.
double ipm_bounded(const Vec& p, const Vec& q);
// Max over (s, a) of the transition IPM between two models.
double max_transition_ipm(const TabularMDP& m, const TabularMDP& m_hat);

// lhs = ||T^pi V - T_hat^pi V||_inf, rhs = gamma R_max/(1-gamma) eps_ipm.
// Throws ContractViolation when ||V||_inf exceeds R_max/(1-gamma) or the
// models disagree on anything but transitions.
Pair lemma1_check(const TabularMDP& m, const TabularMDP& m_hat, const PolicyTable& pi,
                  const Vec& V);

struct Theorem1Result {
  double regret = 0.0;
  double bound = 0.0;
  double term_model_error = 0.0;   // V^{pi*}_M - V^{pi*}_Mhat
  double term_optimality = 0.0;    // V^{pi*}_Mhat - V^{pihat*}_Mhat, <= 0
  double term_policy_shift = 0.0;  // V^{pihat*}_Mhat - V^{pihat*}_M
  double eps_ipm = 0.0;
  double occupancy_ipm = 0.0;      // E_{rho^{pihat*}_M}[IPM]
};
Theorem1Result theorem1_check(const TabularMDP& m, const TabularMDP& m_hat);

struct GaussianShift {
  double mean_true = 0.0;
  double mean_model = 0.0;
};

struct Prop1Result {
  double lhs = 0.0;              // mean over pairs of integral |p - q|
  double rhs_printed = 0.0;      // sqrt(sigma^2 / 2) * sqrt(mean KL)
  double rhs_factor2 = 0.0;      // 2 * rhs_printed
  double rhs_pinsker = 0.0;      // sqrt(2 * mean KL), scale free
  bool holds_printed = false;
  bool holds_factor2 = false;
  bool holds_pinsker = false;
};
// Shared-std 1-D Gaussian pairs; the IPM is integrated numerically.
Prop1Result prop1_check(const std::vector<GaussianShift>& pairs, double sigma);

// Dirichlet(1) transition rows, rewards uniform in [-1, 1], uniform rho0.
TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng);
// Mixes every transition row with an independent Dirichlet(1) draw at rate eps.
TabularMDP perturb(const TabularMDP& m, double eps, Rng& rng);
PolicyTable random_policy(int n_states, int n_actions, Rng& rng);

struct SuiteReport {
  int pdl_trials = 0;
  double pdl_max_gap = 0.0;
  int lemma_trials = 0;
  int lemma_violations = 0;
  double lemma_min_slack = 0.0;
  int theorem_trials = 0;
  int theorem_violations = 0;
  double theorem_min_slack = 0.0;
  double middle_term_max = 0.0;
  int prop1_pairs = 0;
  Prop1Result prop1;
  double seconds = 0.0;

  bool pdl_ok() const { return pdl_max_gap < 1e-10; }
  bool lemma_ok() const { return lemma_violations == 0; }
  bool theorem_ok() const { return theorem_violations == 0 && middle_term_max <= 1e-12; }
  bool prop1_ok() const { return prop1.holds_factor2; }
  bool all_ok() const { return pdl_ok() && lemma_ok() && theorem_ok() && prop1_ok(); }
  nlohmann::json to_json() const;
};

// `trials` PDL instances; 3 * trials Lemma-1 and Theorem-1 instances, one
// third at each perturbation rate 0.01, 0.05, 0.1.
SuiteReport run_theory_suite(int trials, uint64_t seed);

}  // namespace girl::theory
