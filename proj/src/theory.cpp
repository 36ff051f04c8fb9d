#include "girl/theory.hpp"

#include "girl/error.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace girl::theory {

void TabularMDP::validate() const {
  require(n_states >= 1 && n_actions >= 1, "TabularMDP: empty state or action space");
  require(P.rows() == static_cast<Eigen::Index>(n_states) * n_actions && P.cols() == n_states,
          "TabularMDP: transition tensor has wrong shape");
  require(R.rows() == n_states && R.cols() == n_actions, "TabularMDP: reward matrix has wrong shape");
  require(rho0.size() == n_states, "TabularMDP: rho0 has wrong size");
  require(gamma >= 0.0 && gamma < 1.0, "TabularMDP: gamma must lie in [0, 1)");
  require(P.minCoeff() >= 0.0, "TabularMDP: negative transition probability");
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    require(std::abs(P.row(i).sum() - 1.0) < 1e-12, "TabularMDP: transition row does not sum to 1");
  require(rho0.minCoeff() >= 0.0 && std::abs(rho0.sum() - 1.0) < 1e-12,
          "TabularMDP: rho0 is not a distribution");
}

Mat policy_transition(const TabularMDP& mdp, const PolicyTable& pi) {
  require(pi.rows() == mdp.n_states && pi.cols() == mdp.n_actions, "policy shape mismatch");
  Mat Ppi = Mat::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) Ppi.row(s) += pi(s, a) * mdp.row(s, a);
  return Ppi;
}

Vec policy_reward(const TabularMDP& mdp, const PolicyTable& pi) {
  return mdp.R.cwiseProduct(pi).rowwise().sum();
}

Vec bellman(const TabularMDP& mdp, const PolicyTable& pi, const Vec& V) {
  return policy_reward(mdp, pi) + mdp.gamma * policy_transition(mdp, pi) * V;
}

namespace {

Mat q_from_v(const TabularMDP& mdp, const Vec& V) {
  Mat Q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) Q(s, a) = mdp.R(s, a) + mdp.gamma * mdp.row(s, a).dot(V);
  return Q;
}

}  // namespace

PolicyValues policy_evaluation(const TabularMDP& mdp, const PolicyTable& pi) {
  const Mat Ppi = policy_transition(mdp, pi);
  const Vec r = policy_reward(mdp, pi);
  const Mat A = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * Ppi;
  Eigen::PartialPivLU<Mat> lu(A);
  Vec V = lu.solve(r);
  const double residual = (V - (r + mdp.gamma * Ppi * V)).cwiseAbs().maxCoeff();
  if (!(residual < 1e-10)) throw NumericError("policy_evaluation: Bellman residual " + std::to_string(residual));
  return {V, q_from_v(mdp, V)};
}

ValueIterationResult value_iteration(const TabularMDP& mdp, double tol, int max_iter) {
  Vec V = Vec::Zero(mdp.n_states);
  for (int it = 1; it <= max_iter; ++it) {
    Vec next = q_from_v(mdp, V).rowwise().maxCoeff();
    double delta = (next - V).cwiseAbs().maxCoeff();
    V = std::move(next);
    if (delta < tol) return {V, it};
  }
  throw NumericError("value_iteration did not converge");
}

PolicyTable optimal_policy(const TabularMDP& mdp) {
  const Vec V = value_iteration(mdp).V;
  const Mat Q = q_from_v(mdp, V);
  PolicyTable pi = PolicyTable::Zero(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    const double best = Q.row(s).maxCoeff();
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (Q(s, a) >= best - 1e-10) {
        pi(s, a) = 1.0;
        break;
      }
    }
  }
  return pi;
}

Mat occupancy(const TabularMDP& mdp, const PolicyTable& pi) {
  const Mat Ppi = policy_transition(mdp, pi);
  const Mat A = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * Ppi.transpose();
  Eigen::PartialPivLU<Mat> lu(A);
  const Vec d = lu.solve((1.0 - mdp.gamma) * mdp.rho0);
  Mat rho(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) rho.row(s) = d(s) * pi.row(s);
  return rho;
}

Pair pdl_check(const TabularMDP& mdp, const PolicyTable& pi, const PolicyTable& pi_prime) {
  const auto a = policy_evaluation(mdp, pi);
  const auto b = policy_evaluation(mdp, pi_prime);
  const Mat adv = b.Q - b.V.replicate(1, mdp.n_actions);
  const Mat rho = occupancy(mdp, pi);
  return {mdp.rho0.dot(a.V - b.V), rho.cwiseProduct(adv).sum() / (1.0 - mdp.gamma)};
}

double ipm_bounded(const Vec& p, const Vec& q) {
  require_dims(p.size() == q.size(), "ipm_bounded: support sizes differ");
  return (p - q).cwiseAbs().sum();
}

double max_transition_ipm(const TabularMDP& m, const TabularMDP& m_hat) {
  require_dims(m.P.rows() == m_hat.P.rows() && m.P.cols() == m_hat.P.cols(),
               "models have different state/action spaces");
  double eps = 0.0;
  for (Eigen::Index i = 0; i < m.P.rows(); ++i)
    eps = std::max(eps, ipm_bounded(m.P.row(i).transpose(), m_hat.P.row(i).transpose()));
  return eps;
}

namespace {

void require_shared_reward(const TabularMDP& m, const TabularMDP& m_hat) {
  require(m.n_states == m_hat.n_states && m.n_actions == m_hat.n_actions,
          "models have different state/action spaces");
  require(m.R == m_hat.R && m.gamma == m_hat.gamma, "models must share rewards and discount");
}

}  // namespace

Pair lemma1_check(const TabularMDP& m, const TabularMDP& m_hat, const PolicyTable& pi,
                  const Vec& V) {
  require_shared_reward(m, m_hat);
  const double v_bound = m.r_max() / (1.0 - m.gamma);
  require(V.cwiseAbs().maxCoeff() <= v_bound * (1.0 + 1e-12), "lemma1_check: V out of range");
  const double lhs = (bellman(m, pi, V) - bellman(m_hat, pi, V)).cwiseAbs().maxCoeff();
  return {lhs, m.gamma * v_bound * max_transition_ipm(m, m_hat)};
}

Theorem1Result theorem1_check(const TabularMDP& m, const TabularMDP& m_hat) {
  require_shared_reward(m, m_hat);
  const PolicyTable pi_star = optimal_policy(m);
  const PolicyTable pi_hat = optimal_policy(m_hat);
  const double v_star_m = m.rho0.dot(policy_evaluation(m, pi_star).V);
  const double v_star_mhat = m.rho0.dot(policy_evaluation(m_hat, pi_star).V);
  const double v_hat_mhat = m.rho0.dot(policy_evaluation(m_hat, pi_hat).V);
  const double v_hat_m = m.rho0.dot(policy_evaluation(m, pi_hat).V);

  Theorem1Result r;
  r.regret = v_star_m - v_hat_m;
  r.term_model_error = v_star_m - v_star_mhat;
  r.term_optimality = v_star_mhat - v_hat_mhat;
  r.term_policy_shift = v_hat_mhat - v_hat_m;
  r.eps_ipm = max_transition_ipm(m, m_hat);
  const Mat rho = occupancy(m, pi_hat);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      r.occupancy_ipm += rho(s, a) * ipm_bounded(m.row(s, a).transpose(), m_hat.row(s, a).transpose());
  const double g = m.gamma;
  r.bound = 2.0 * g * m.r_max() / ((1.0 - g) * (1.0 - g)) * r.eps_ipm +
            2.0 / (1.0 - g) * r.occupancy_ipm;
  return r;
}

Prop1Result prop1_check(const std::vector<GaussianShift>& pairs, double sigma) {
  require(!pairs.empty(), "prop1_check: no pairs");
  require(sigma > 0, "prop1_check: sigma must be positive");
  double ipm_sum = 0.0, kl_sum = 0.0;
  const double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  for (const auto& pr : pairs) {
    const double lo = std::min(pr.mean_true, pr.mean_model) - 12 * sigma;
    const double hi = std::max(pr.mean_true, pr.mean_model) + 12 * sigma;
    const int n = 20000;
    const double h = (hi - lo) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = lo + i * h;
      const double zp = (x - pr.mean_true) / sigma, zq = (x - pr.mean_model) / sigma;
      const double f = std::abs(norm * (std::exp(-0.5 * zp * zp) - std::exp(-0.5 * zq * zq)));
      acc += f * ((i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0));
    }
    ipm_sum += acc * h / 3.0;
    const double d = pr.mean_true - pr.mean_model;
    kl_sum += d * d / (2.0 * sigma * sigma);
  }
  Prop1Result r;
  const double n = static_cast<double>(pairs.size());
  r.lhs = ipm_sum / n;
  const double mean_kl = kl_sum / n;
  r.rhs_printed = std::sqrt(sigma * sigma / 2.0) * std::sqrt(mean_kl);
  r.rhs_factor2 = 2.0 * r.rhs_printed;
  r.rhs_pinsker = std::sqrt(2.0 * mean_kl);
  constexpr double tol = 1e-9;
  r.holds_printed = r.lhs <= r.rhs_printed + tol;
  r.holds_factor2 = r.lhs <= r.rhs_factor2 + tol;
  r.holds_pinsker = r.lhs <= r.rhs_pinsker + tol;
  return r;
}

namespace {

Vec dirichlet_ones(int n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = e(rng);
  return v / v.sum();
}

}  // namespace

TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  TabularMDP m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.P.resize(static_cast<Eigen::Index>(n_states) * n_actions, n_states);
  for (Eigen::Index i = 0; i < m.P.rows(); ++i) {
    m.P.row(i) = dirichlet_ones(n_states, rng).transpose();
    m.P.row(i) /= m.P.row(i).sum();
  }
  m.R = uniform_matrix(rng, n_states, n_actions, -1.0, 1.0);
  m.rho0 = Vec::Constant(n_states, 1.0 / n_states);
  m.validate();
  return m;
}

TabularMDP perturb(const TabularMDP& m, double eps, Rng& rng) {
  require(eps >= 0 && eps <= 1, "perturb: eps must lie in [0, 1]");
  TabularMDP h = m;
  for (Eigen::Index i = 0; i < h.P.rows(); ++i) {
    h.P.row(i) = (1.0 - eps) * m.P.row(i) + eps * dirichlet_ones(m.n_states, rng).transpose();
    h.P.row(i) /= h.P.row(i).sum();
  }
  h.validate();
  return h;
}

PolicyTable random_policy(int n_states, int n_actions, Rng& rng) {
  PolicyTable pi(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) pi.row(s) = dirichlet_ones(n_actions, rng).transpose();
  return pi;
}

nlohmann::json SuiteReport::to_json() const {
  return {
      {"pdl", {{"trials", pdl_trials}, {"max_abs_gap", pdl_max_gap}, {"pass", pdl_ok()}}},
      {"lemma1",
       {{"trials", lemma_trials},
        {"violations", lemma_violations},
        {"min_slack", lemma_min_slack},
        {"pass", lemma_ok()}}},
      {"theorem1",
       {{"trials", theorem_trials},
        {"violations", theorem_violations},
        {"min_slack", theorem_min_slack},
        {"max_middle_term", middle_term_max},
        {"pass", theorem_ok()}}},
      {"prop1",
       {{"pairs", prop1_pairs},
        {"lhs", prop1.lhs},
        {"rhs_printed", prop1.rhs_printed},
        {"rhs_factor2", prop1.rhs_factor2},
        {"rhs_pinsker", prop1.rhs_pinsker},
        {"holds_printed", prop1.holds_printed},
        {"holds_factor2", prop1.holds_factor2},
        {"holds_pinsker", prop1.holds_pinsker},
        {"pass", prop1_ok()}}},
      {"seconds", seconds},
      {"pass", all_ok()},
  };
}

SuiteReport run_theory_suite(int trials, uint64_t seed) {
  require(trials >= 1, "run_theory_suite: trials must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  SuiteReport rep;
  std::uniform_int_distribution<int> n_dist(2, 6), m_dist(1, 3);
  const double gammas[] = {0.9, 0.99};

  Rng pdl_rng = make_rng(seed, "theory.pdl");
  for (int i = 0; i < trials; ++i) {
    auto mdp = random_mdp(n_dist(pdl_rng), m_dist(pdl_rng), gammas[i % 2], pdl_rng);
    auto pi = random_policy(mdp.n_states, mdp.n_actions, pdl_rng);
    auto pi2 = random_policy(mdp.n_states, mdp.n_actions, pdl_rng);
    auto pr = pdl_check(mdp, pi, pi2);
    rep.pdl_max_gap = std::max(rep.pdl_max_gap, std::abs(pr.lhs - pr.rhs));
    ++rep.pdl_trials;
  }

  Rng gap_rng = make_rng(seed, "theory.gap");
  const double eps_levels[] = {0.01, 0.05, 0.1};
  rep.lemma_min_slack = rep.theorem_min_slack = std::numeric_limits<double>::infinity();
  rep.middle_term_max = -std::numeric_limits<double>::infinity();
  for (double eps : eps_levels) {
    for (int i = 0; i < trials; ++i) {
      auto m = random_mdp(n_dist(gap_rng), m_dist(gap_rng), gammas[i % 2], gap_rng);
      auto mh = perturb(m, eps, gap_rng);
      auto pi = random_policy(m.n_states, m.n_actions, gap_rng);
      const double vmax = m.r_max() / (1.0 - m.gamma);
      Vec V = uniform_matrix(gap_rng, m.n_states, 1, -vmax, vmax);
      auto l = lemma1_check(m, mh, pi, V);
      ++rep.lemma_trials;
      if (l.lhs > l.rhs + 1e-12) ++rep.lemma_violations;
      rep.lemma_min_slack = std::min(rep.lemma_min_slack, l.rhs - l.lhs);

      auto t = theorem1_check(m, mh);
      ++rep.theorem_trials;
      if (t.regret > t.bound + 1e-10) ++rep.theorem_violations;
      rep.theorem_min_slack = std::min(rep.theorem_min_slack, t.bound - t.regret);
      rep.middle_term_max = std::max(rep.middle_term_max, t.term_optimality);
    }
  }

  Rng prop_rng = make_rng(seed, "theory.prop1");
  std::normal_distribution<double> shift(0.0, 0.5);
  std::vector<GaussianShift> pairs;
  for (int i = 0; i < trials; ++i) {
    double mu = shift(prop_rng) * 4.0;
    pairs.push_back({mu, mu + shift(prop_rng)});
  }
  rep.prop1_pairs = static_cast<int>(pairs.size());
  rep.prop1 = prop1_check(pairs, 1.0);

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace girl::theory
