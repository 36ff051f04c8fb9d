#include "doctest.h"

#include "girl/error.hpp"
#include "girl/theory.hpp"
#include "support/quadrature.hpp"

#include <cmath>
#include <random>

using namespace girl;
using namespace girl::theory;

namespace {

TabularMDP single_state(double r, double gamma) {
  TabularMDP m;
  m.n_states = 1;
  m.n_actions = 1;
  m.P = Mat::Ones(1, 1);
  m.R = Mat::Constant(1, 1, r);
  m.gamma = gamma;
  m.rho0 = Vec::Ones(1);
  return m;
}

// Deterministic two-state cycle s0 -> s1 -> s0 with one action.
TabularMDP two_cycle(double gamma) {
  TabularMDP m;
  m.n_states = 2;
  m.n_actions = 1;
  m.P = Mat::Zero(2, 2);
  m.P(0, 1) = 1.0;
  m.P(1, 0) = 1.0;
  m.R = Mat::Zero(2, 1);
  m.gamma = gamma;
  m.rho0 = Vec::Zero(2);
  m.rho0(0) = 1.0;
  return m;
}

PolicyTable deterministic(int n, int m, const std::vector<int>& actions) {
  PolicyTable pi = PolicyTable::Zero(n, m);
  for (int s = 0; s < n; ++s) pi(s, actions[s]) = 1.0;
  return pi;
}

// Value by brute-force truncated iteration of the policy's Bellman map.
Vec iterate_policy_value(const TabularMDP& mdp, const PolicyTable& pi) {
  Vec V = Vec::Zero(mdp.n_states);
  for (int k = 0; k < 20000; ++k) V = bellman(mdp, pi, V);
  return V;
}

}  // namespace

TEST_CASE("policy evaluation: zero rewards and geometric series") {
  auto m = single_state(0.0, 0.9);
  CHECK(policy_evaluation(m, Mat::Ones(1, 1)).V(0) == doctest::Approx(0.0));
  auto g = single_state(1.0, 0.5);
  CHECK(policy_evaluation(g, Mat::Ones(1, 1)).V(0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("policy evaluation matches iterated Bellman backups and value iteration") {
  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    auto mdp = random_mdp(5, 3, 0.9, rng);
    auto pi = random_policy(5, 3, rng);
    auto pv = policy_evaluation(mdp, pi);
    CHECK((pv.V - iterate_policy_value(mdp, pi)).cwiseAbs().maxCoeff() < 1e-8);
    auto vi = value_iteration(mdp);
    auto star = policy_evaluation(mdp, optimal_policy(mdp));
    CHECK((vi.V - star.V).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("optimal policy tie-break and dominant action") {
  Rng rng(3);
  auto mdp = random_mdp(4, 3, 0.9, rng);
  mdp.R.setConstant(0.5);
  auto pi = optimal_policy(mdp);
  for (int s = 0; s < 4; ++s) CHECK(pi(s, 0) == 1.0);

  TabularMDP b = random_mdp(2, 3, 0.9, rng);
  b.P.setConstant(0.5);
  b.R << 0.0, 1.0, 0.2, 0.1, 0.9, 0.3;
  auto pb = optimal_policy(b);
  CHECK(pb(0, 1) == 1.0);
  CHECK(pb(1, 1) == 1.0);
}

TEST_CASE("optimal policy matches brute-force enumeration of deterministic policies") {
  Rng rng(5);
  for (int n = 1; n <= 4; ++n) {
    for (int m = 1; m <= 4; ++m) {
      auto mdp = random_mdp(n, m, 0.9, rng);
      Vec best = Vec::Constant(n, -1e300);
      std::vector<int> acts(n, 0);
      for (;;) {
        Vec V = iterate_policy_value(mdp, deterministic(n, m, acts));
        best = best.cwiseMax(V);
        int i = 0;
        while (i < n && ++acts[i] == m) acts[i++] = 0;
        if (i == n) break;
      }
      Vec got = policy_evaluation(mdp, optimal_policy(mdp)).V;
      CHECK((got - best).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("occupancy examples") {
  auto m = single_state(1.0, 0.7);
  CHECK(occupancy(m, Mat::Ones(1, 1))(0, 0) == doctest::Approx(1.0));
  auto c = two_cycle(0.5);
  Mat rho = occupancy(c, Mat::Ones(2, 1));
  CHECK(rho(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(rho(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    auto mdp = random_mdp(6, 3, 0.99, rng);
    CHECK(std::abs(occupancy(mdp, random_policy(6, 3, rng)).sum() - 1.0) < 1e-10);
  }
}

TEST_CASE("occupancy matches Monte-Carlo rollouts within 3 standard errors") {
  Rng rng(21);
  auto mdp = random_mdp(4, 2, 0.8, rng);
  auto pi = random_policy(4, 2, rng);
  Mat rho = occupancy(mdp, pi);
  // Geometric stopping: the state-action at the stopping time is a draw from rho.
  const int n = 40000;
  Mat counts = Mat::Zero(4, 2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const Eigen::RowVectorXd& p) {
    double x = u(rng), acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      acc += p(i);
      if (x < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size() - 1);
  };
  for (int i = 0; i < n; ++i) {
    int s = draw(mdp.rho0.transpose());
    for (;;) {
      int a = draw(pi.row(s));
      if (u(rng) > mdp.gamma) {
        counts(s, a) += 1;
        break;
      }
      s = draw(mdp.row(s, a));
    }
  }
  counts /= n;
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 2; ++a) {
      double se = std::sqrt(rho(s, a) * (1 - rho(s, a)) / n);
      CHECK(std::abs(counts(s, a) - rho(s, a)) < 3 * se + 1e-12);
    }
  }
}

TEST_CASE("performance difference identity") {
  Rng rng(13);
  auto mdp = random_mdp(3, 2, 0.9, rng);
  auto pi = random_policy(3, 2, rng);
  auto same = pdl_check(mdp, pi, pi);
  CHECK(std::abs(same.lhs) < 1e-12);
  CHECK(std::abs(same.rhs) < 1e-12);

  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<int> nd(1, 6), md(1, 3);
    auto m = random_mdp(nd(rng), md(rng), t % 2 ? 0.99 : 0.9, rng);
    auto r = pdl_check(m, random_policy(m.n_states, m.n_actions, rng),
                       random_policy(m.n_states, m.n_actions, rng));
    CHECK(std::abs(r.lhs - r.rhs) < 1e-10);
  }
}

TEST_CASE("performance difference on a hand-solved deterministic instance") {
  // Two states, two actions; action 0 stays, action 1 switches. R(s0,.)=1, R(s1,.)=0.
  TabularMDP m;
  m.n_states = 2;
  m.n_actions = 2;
  m.P = Mat::Zero(4, 2);
  m.P(0, 0) = 1;  // s0 stay
  m.P(1, 1) = 1;  // s0 switch
  m.P(2, 1) = 1;  // s1 stay
  m.P(3, 0) = 1;  // s1 switch
  m.R = Mat::Zero(2, 2);
  m.R.row(0).setOnes();
  m.gamma = 0.5;
  m.rho0 = Vec::Zero(2);
  m.rho0(0) = 1;
  auto stay = deterministic(2, 2, {0, 0});
  auto swap = deterministic(2, 2, {1, 1});
  // V_stay = (2, 0); V_swap: v0 = 1 + v1/2, v1 = v0/2 -> v0 = 4/3.
  auto r = pdl_check(m, stay, swap);
  CHECK(r.lhs == doctest::Approx(2.0 - 4.0 / 3.0).epsilon(1e-13));
  // rho^stay puts all mass on (s0, a0); A^swap(s0, stay) = 1 + 0.5 * 4/3 - 4/3 = 1/3.
  CHECK(r.rhs == doctest::Approx((1.0 / 3.0) / 0.5).epsilon(1e-13));
}

TEST_CASE("bounded IPM is the L1 distance") {
  Vec a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  CHECK(ipm_bounded(a, a) == 0.0);
  CHECK(ipm_bounded(a, b) == doctest::Approx(2.0));
  Vec p(2), q(2);
  p << 0.7, 0.3;
  q << 0.5, 0.5;
  CHECK(ipm_bounded(p, q) == doctest::Approx(0.4));
  CHECK_THROWS_AS(ipm_bounded(p, Vec::Ones(3) / 3), DimensionError);

  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    Vec x = random_policy(1, 5, rng).row(0).transpose();
    Vec y = random_policy(1, 5, rng).row(0).transpose();
    Vec z = random_policy(1, 5, rng).row(0).transpose();
    CHECK(ipm_bounded(x, y) == ipm_bounded(y, x));
    CHECK(ipm_bounded(x, z) <= ipm_bounded(x, y) + ipm_bounded(y, z) + 1e-15);
    // sup over |f| <= 1 is attained at f = sign(x - y)
    Vec f = (x - y).array().sign();
    CHECK(std::abs(f.dot(x) - f.dot(y)) == doctest::Approx(ipm_bounded(x, y)));
    CHECK(ipm_bounded(x, y) <= 2.0);
  }
}

TEST_CASE("lemma 1 on trivial and random instances") {
  Rng rng(17);
  auto m = random_mdp(4, 2, 0.9, rng);
  auto pi = random_policy(4, 2, rng);
  Vec V = uniform_matrix(rng, 4, 1, -1, 1);
  auto same = lemma1_check(m, m, pi, V);
  CHECK(same.lhs == 0.0);
  CHECK(same.rhs == 0.0);
  auto mh = perturb(m, 0.1, rng);
  CHECK(lemma1_check(m, mh, pi, Vec::Zero(4)).lhs == 0.0);

  Vec too_big = Vec::Constant(4, 2.0 * m.r_max() / (1 - m.gamma));
  CHECK_THROWS_AS(lemma1_check(m, mh, pi, too_big), ContractViolation);
  auto other = mh;
  other.R(0, 0) += 0.1;
  CHECK_THROWS_AS(lemma1_check(m, other, pi, V), ContractViolation);

  for (int t = 0; t < 100; ++t) {
    auto a = random_mdp(5, 3, 0.99, rng);
    auto b = perturb(a, 0.05, rng);
    double vmax = a.r_max() / (1 - a.gamma);
    auto r = lemma1_check(a, b, random_policy(5, 3, rng), uniform_matrix(rng, 5, 1, -vmax, vmax));
    CHECK(r.lhs <= r.rhs + 1e-12);
  }
}

TEST_CASE("theorem 1 decomposition and bound") {
  Rng rng(19);
  auto m = random_mdp(4, 3, 0.9, rng);
  auto same = theorem1_check(m, m);
  CHECK(same.regret == doctest::Approx(0.0));
  CHECK(same.bound == 0.0);

  for (double eps : {0.01, 0.05, 0.1}) {
    for (int t = 0; t < 30; ++t) {
      auto a = random_mdp(2 + t % 5, 1 + t % 3, t % 2 ? 0.99 : 0.9, rng);
      auto r = theorem1_check(a, perturb(a, eps, rng));
      CHECK(r.regret >= -1e-10);
      CHECK(r.regret <= r.bound + 1e-10);
      CHECK(r.term_optimality <= 1e-12);
      CHECK(r.term_model_error + r.term_optimality + r.term_policy_shift ==
            doctest::Approx(r.regret).epsilon(1e-9));
      CHECK(r.eps_ipm <= 2 * eps + 1e-12);
    }
  }
}

TEST_CASE("proposition 1 against the closed-form Gaussian IPM") {
  auto zero = prop1_check({{0.3, 0.3}, {-1.0, -1.0}}, 1.0);
  CHECK(zero.lhs == doctest::Approx(0.0));
  CHECK(zero.rhs_printed == 0.0);

  // Equal-variance shift: integral |p - q| = 2 erf(|d| / (2 sqrt(2) sigma)).
  for (double sigma : {0.5, 1.0, 2.0}) {
    auto r = prop1_check({{0.0, 0.1}}, sigma);
    double closed = 2.0 * std::erf(0.1 / (2.0 * std::sqrt(2.0) * sigma));
    CHECK(r.lhs == doctest::Approx(closed).epsilon(1e-8));
    double kl = 0.01 / (2 * sigma * sigma);
    CHECK(r.rhs_pinsker == doctest::Approx(std::sqrt(2 * kl)));
    CHECK(r.holds_pinsker);
  }

  Rng rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<GaussianShift> pairs;
  for (int i = 0; i < 100; ++i) {
    double mu = 2 * n(rng);
    pairs.push_back({mu, mu + 0.5 * n(rng)});
  }
  auto r = prop1_check(pairs, 1.0);
  CHECK(r.holds_factor2);
  CHECK(r.holds_pinsker);
  // The unfactored constant is too small for the |f| <= 1 class.
  CHECK_FALSE(r.holds_printed);
}

TEST_CASE("theory suite passes at acceptance size") {
  auto rep = run_theory_suite(100, 2024);
  CHECK(rep.pdl_trials == 100);
  CHECK(rep.lemma_trials == 300);
  CHECK(rep.theorem_trials == 300);
  CHECK(rep.all_ok());
  CHECK(rep.seconds < 30.0);
  auto j = rep.to_json();
  CHECK(j["pass"].get<bool>());
}
