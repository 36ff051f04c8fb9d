#include "doctest.h"

#include "girl/error.hpp"
#include "girl/world_model.hpp"
#include "support/grad_check.hpp"

#include <cmath>
#include <numbers>

using namespace girl;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using wm::WorldModel;
using wm::WorldModelConfig;

namespace {

WorldModelConfig small_config(wm::GroundingMode mode = wm::GroundingMode::kOracle) {
  WorldModelConfig c;
  c.obs_dim = 5;
  c.action_dim = 2;
  c.semantic_dim = 3;
  c.latent = 3;
  c.deter = 4;
  c.hidden = 6;
  c.d_g = 4;
  c.ensemble = 2;
  c.n_feat = 5;
  c.grounding = mode;
  c.msae_window = 4;
  c.student_hidden = 6;
  return c;
}

struct Fixture {
  env::GroundingOracle oracle;
  WorldModel wm;
  Rng rng;

  explicit Fixture(uint64_t seed, wm::GroundingMode mode = wm::GroundingMode::kOracle)
      : oracle(3, 5, 4, seed), rng(make_rng(seed, "fixture")) {
    wm = WorldModel(small_config(mode), &oracle, rng);
    // Give zero-initialised biases some value so every path is exercised.
    for (auto* p : wm.all_params()) p->value += 0.1 * standard_normal(rng, p->value.rows(), p->value.cols());
  }
  Tensor normal(Eigen::Index r, Eigen::Index c) { return standard_normal(rng, r, c); }
};

// Random linear probe so the checked scalar is O(1) and sensitive to every
// output entry.
Var probe(Tape& t, Var x, const Tensor& w) { return ad::sum(ad::mul(x, t.constant(w))); }

void check_grads(const std::function<Var(Tape&)>& f, const ad::ParamRefs& ps, bool smooth = false) {
  auto r = smooth ? testing::grad_check(f, ps, 1e-4, 1e-6, true) : testing::grad_check(f, ps);
  INFO(r.worst);
  CHECK(r.max_rel_err < 1e-6);
  CHECK(r.max_abs_grad > 0.0);
}

ad::ParamRefs refs(nn::Mlp& m) { return m.params(); }

}  // namespace

TEST_CASE("posterior: zero-weight encoder gives the bias for every observation") {
  Fixture fx(1);
  auto& last = fx.wm.encoder.layer(fx.wm.encoder.depth() - 1);
  last.weight.value.setZero();
  Tensor h = fx.normal(4, 4);
  auto a = fx.wm.posterior(h, fx.normal(4, 5));
  auto b = fx.wm.posterior(h, fx.normal(4, 5) * 50.0);
  for (Eigen::Index r = 0; r < 4; ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) CHECK(a.mean(r, c) == last.bias.value(0, c));
  }
  CHECK(a.mean == b.mean);
  CHECK(a.log_std == b.log_std);
}

TEST_CASE("posterior: log-std stays inside the band for extreme observations") {
  Fixture fx(2);
  for (double scale : {1e3, -1e3}) {
    auto q = fx.wm.posterior(fx.normal(8, 4), Tensor::Constant(8, 5, scale));
    CHECK(q.log_std.minCoeff() >= wm::kLatentLogStdMin);
    CHECK(q.log_std.maxCoeff() <= wm::kLatentLogStdMax);
    CHECK(q.mean.allFinite());
  }
}

TEST_CASE("posterior and prior: taped and plain paths agree") {
  Fixture fx(3);
  Tensor h = fx.normal(3, 4), o = fx.normal(3, 5), c = fx.normal(3, 4);
  Tape t;
  auto q = fx.wm.posterior(t, t.constant(h), t.constant(o));
  auto qp = fx.wm.posterior(h, o);
  CHECK((q.mean.value() - qp.mean).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((q.log_std.value() - qp.log_std).cwiseAbs().maxCoeff() < 1e-14);
  for (int k = 0; k < fx.wm.K(); ++k) {
    auto p = fx.wm.prior(t, k, t.constant(h), t.constant(c));
    auto pp = fx.wm.prior(k, h, c);
    CHECK((p.mean.value() - pp.mean).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((p.log_std.value() - pp.log_std).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("prior: gated residual matches a hand evaluation") {
  Fixture fx(4);
  Tensor h = fx.normal(2, 4), c = fx.normal(2, 4);
  for (int k = 0; k < fx.wm.K(); ++k) {
    Tape t;
    Tensor mu0 = fx.wm.prior_base_mean(t, k, t.constant(h)).value();
    const Tensor& wg = fx.wm.gate_wg[k].value;
    const auto& gc = fx.wm.gate_c[k];
    Tensor mean = fx.wm.prior(k, h, c).mean;
    for (Eigen::Index b = 0; b < 2; ++b) {
      Eigen::VectorXd pre = gc.weight.value * c.row(b).transpose() + gc.bias.value.row(0).transpose();
      Eigen::VectorXd gate = pre.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
      Eigen::VectorXd expected = mu0.row(b).transpose() + wg * gate;
      CHECK((mean.row(b).transpose() - expected).cwiseAbs().maxCoeff() < 1e-13);
      // The decomposition is exact: mean minus residual is the base mean.
      Tensor resid = fx.wm.gate_residual(t, k, t.constant(c)).value();
      CHECK(((mean.row(b) - resid.row(b)) - mu0.row(b)).cwiseAbs().maxCoeff() < 1e-13);
    }
  }
}

TEST_CASE("prior: zero W_g and a closed gate both fall back to the base mean") {
  Fixture fx(5);
  Tensor h = fx.normal(3, 4), c = fx.normal(3, 4);
  Tape t;
  Tensor mu0 = fx.wm.prior_base_mean(t, 0, t.constant(h)).value();

  WorldModel zero = fx.wm;
  zero.gate_wg[0].value.setZero();
  CHECK(zero.prior(0, h, c).mean == mu0);

  WorldModel closed = fx.wm;
  closed.gate_c[0].bias.value.setConstant(-60.0);
  closed.gate_c[0].weight.value.setZero();
  CHECK((closed.prior(0, h, c).mean - mu0).cwiseAbs().maxCoeff() < 1e-20);
}

TEST_CASE("prior: index out of range is rejected") {
  Fixture fx(6);
  CHECK_THROWS(fx.wm.prior(2, fx.normal(1, 4), fx.normal(1, 4)));
  CHECK_THROWS(fx.wm.prior(-1, fx.normal(1, 4), fx.normal(1, 4)));
}

TEST_CASE("log-likelihoods: Gaussian constants at and away from the mode") {
  Fixture fx(7);
  Tensor z = fx.normal(3, 3);
  Tape t;
  Var zv = t.constant(z);
  Tensor o = fx.wm.decode(t, zv).value();
  Tensor r = fx.wm.predict_reward(t, zv).value();
  const double c5 = -2.5 * std::log(2.0 * std::numbers::pi);
  const double c1 = -0.5 * std::log(2.0 * std::numbers::pi);
  auto [lo, lr] = fx.wm.log_likelihoods(t, zv, t.constant(o), t.constant(r));
  for (Eigen::Index b = 0; b < 3; ++b) {
    CHECK(lo.value()(b, 0) == doctest::Approx(c5).epsilon(1e-14));
    CHECK(lr.value()(b, 0) == doctest::Approx(c1).epsilon(1e-14));
  }
  // Residual of norm sqrt(dim): every entry off by one.
  auto [lo2, lr2] = fx.wm.log_likelihoods(t, zv, t.constant(o.array() + 1.0), t.constant(r.array() - 1.0));
  for (Eigen::Index b = 0; b < 3; ++b) {
    CHECK(lo2.value()(b, 0) == doctest::Approx(c5 - 2.5).epsilon(1e-14));
    CHECK(lr2.value()(b, 0) == doctest::Approx(c1 - 0.5).epsilon(1e-14));
  }
  CHECK_THROWS_AS(fx.wm.log_likelihoods(t, zv, t.constant(fx.normal(3, 4)), t.constant(r)), DimensionError);
}

TEST_CASE("consistency loss: examples and stop-gradient on c") {
  Fixture fx(8);
  Tensor z = fx.normal(4, 3);
  {
    Tape t;
    Var zv = t.constant(z);
    Tensor fz = fx.wm.project(t, zv).value();
    CHECK(wm::consistency_loss(fx.wm, t, zv, t.constant(fz)).scalar() == 0.0);
    CHECK(wm::consistency_loss(fx.wm, t, zv, t.constant(fz.array() + 1.0)).scalar() ==
          doctest::Approx(4.0).epsilon(1e-12));
  }
  ad::Parameter c("c", fx.normal(4, 4));
  ad::ParamRefs ps = fx.wm.projector.params();
  ps.push_back(&c);
  ad::zero_grads(ps);
  Tape t;
  t.backward(wm::consistency_loss(fx.wm, t, t.constant(z), t.param(c)));
  CHECK(c.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fx.wm.projector.layer(0).weight.grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(wm::consistency_loss(fx.wm, t, t.constant(z), t.constant(fx.normal(3, 4))), DimensionError);
}

TEST_CASE("grounding head: zero weights give the bias; fits a constant target") {
  Fixture fx(9);
  WorldModel zero = fx.wm;
  auto& last = zero.grounding_head.layer(zero.grounding_head.depth() - 1);
  last.weight.value.setZero();
  Tensor out = zero.predict_grounding(fx.normal(5, 4));
  for (Eigen::Index b = 0; b < 5; ++b) CHECK(out.row(b) == last.bias.value.row(0));

  Tensor target = Tensor::Zero(1, 4);
  target << 0.3, -1.2, 0.8, 0.05;
  auto ps = fx.wm.grounding_head.params();
  nn::AdamState opt(ps, {1e-2, 0.9, 0.999, 1e-8, 100.0});
  Tensor data = fx.normal(256, 4);
  for (int s = 0; s < 12000; ++s) {
    if (s == 8000) opt.config.lr = 1e-3;
    if (s == 11000) opt.config.lr = 1e-4;
    Tape t;
    Var pred = fx.wm.predict_grounding(t, t.constant(data));
    Var loss = ad::mean(ad::row_sum(ad::square(ad::sub(pred, t.constant(target)))));
    ad::zero_grads(ps);
    t.backward(loss);
    nn::adam_step(opt, ps);
  }
  Tensor pred = fx.wm.predict_grounding(data);
  double worst = 0.0;
  for (Eigen::Index b = 0; b < data.rows(); ++b) worst = std::max(worst, (pred.row(b) - target).norm());
  CHECK(worst < 1e-3);
}

TEST_CASE("finite-difference gradients of every world-model network") {
  for (uint64_t draw = 0; draw < 10; ++draw) {
    Fixture fx(100 + draw);
    auto& wm = fx.wm;
    Tensor h = fx.normal(3, 4), o = fx.normal(3, 5), c = fx.normal(3, 4), z = fx.normal(3, 3);
    Tensor r = fx.normal(3, 1), feat = fx.normal(3, 5), w3 = fx.normal(3, 3), w3b = fx.normal(3, 3);
    Tensor w4 = fx.normal(3, 4);

    // Encoder: posterior mean and squashed log-std.
    check_grads([&](Tape& t) {
      auto q = wm.posterior(t, t.constant(h), t.constant(o));
      return ad::add(probe(t, q.mean, w3), probe(t, q.log_std, w3b));
    }, refs(wm.encoder));

    // Each prior member, base and gate.
    for (int k = 0; k < wm.K(); ++k) {
      ad::ParamRefs ps = wm.prior_base[k].params();
      ps.push_back(&wm.gate_wg[k]);
      wm.gate_c[k].collect(ps);
      check_grads([&](Tape& t) {
        auto p = wm.prior(t, k, t.constant(h), t.constant(c));
        return ad::add(probe(t, p.mean, w3), probe(t, p.log_std, w3b));
      }, ps);
    }

    // Decoder and reward through the log-likelihoods.
    check_grads([&](Tape& t) {
      return ad::sum(wm.log_likelihoods(t, t.constant(z), t.constant(o), t.constant(r)).first);
    }, refs(wm.decoder));
    check_grads([&](Tape& t) {
      return ad::sum(wm.log_likelihoods(t, t.constant(z), t.constant(o), t.constant(r)).second);
    }, refs(wm.reward));

    // Projector f through the consistency loss, Psi through a probe.
    check_grads([&](Tape& t) { return wm::consistency_loss(wm, t, t.constant(z), t.constant(c)); },
                refs(wm.projector));
    check_grads([&](Tape& t) { return probe(t, wm.predict_grounding(t, t.constant(h)), w4); },
                refs(wm.grounding_head));

    // Grounding projection and learned grounding encoder through LN.
    ad::ParamRefs proj;
    wm.proj.collect(proj);
    check_grads([&](Tape& t) { return probe(t, wm.ground_from_features(t, t.constant(feat)), w4); }, proj);
    check_grads([&](Tape& t) { return probe(t, wm.ground_learned(t, t.constant(o)), w4); },
                refs(wm.learned_ground));

    // Latent input gradients through the reparameterized sample.
    ad::Parameter zp("z", z);
    check_grads([&](Tape& t) {
      Var zv = t.param(zp);
      return ad::add(ad::sum(wm.log_likelihoods(t, zv, t.constant(o), t.constant(r)).first),
                     wm::consistency_loss(wm, t, zv, t.constant(c)));
    }, {&zp});
  }
}

TEST_CASE("finite-difference gradient of a full one-step world-model objective") {
  for (uint64_t draw = 0; draw < 3; ++draw) {
    Fixture fx(200 + draw);
    auto& wm = fx.wm;
    Tensor h0 = fx.normal(2, 4), z0 = fx.normal(2, 3), a = fx.normal(2, 2), o = fx.normal(2, 5);
    Tensor r = fx.normal(2, 1), feat = fx.normal(2, 5), eps = fx.normal(2, 3);
    auto step_h = [&](Tape& t) {
      return wm.gru.step(t, t.constant(h0), ad::concat_cols({t.constant(z0), t.constant(a)}));
    };
    // Stop-gradient inputs are constants at the base point; finite
    // differences would otherwise see through them.
    Tensor h_sg, c_sg;
    {
      Tape t;
      h_sg = step_h(t).value();
      c_sg = wm.ground_from_features(t, t.constant(feat)).value();
    }
    auto f = [&](Tape& t) {
      Var h = step_h(t);
      Var c = wm.ground_from_features(t, t.constant(feat));
      auto q = wm.posterior(t, h, t.constant(o));
      Var z = sample_reparam(q, eps);
      Var drift;
      for (int k = 0; k < wm.K(); ++k) {
        Var kl = kl_diag(q, wm.prior(t, k, h, c));
        drift = k == 0 ? kl : ad::add(drift, kl);
      }
      auto [lo, lr] = wm.log_likelihoods(t, z, t.constant(o), t.constant(r));
      Var nll = ad::neg(ad::mean(ad::add(lo, lr)));
      Var psi = ad::mean(ad::row_sum(ad::square(ad::sub(wm.predict_grounding(t, t.constant(h_sg)),
                                                        t.constant(c_sg)))));
      return ad::add(ad::add(nll, ad::scale(ad::mean(drift), 0.7)),
                     ad::add(ad::scale(wm::consistency_loss(wm, t, z, t.constant(c_sg)), 0.1), psi));
    };
    check_grads(f, wm.params());
  }
}

TEST_CASE("world model parameter lists") {
  Fixture fx(10);
  auto ps = fx.wm.params();
  CHECK(ps.back() == &fx.wm.proj.bias);
  CHECK(ps[ps.size() - 2] == &fx.wm.proj.weight);
  fx.wm.proj_frozen = true;
  CHECK(fx.wm.params().size() == ps.size() - 2);
  CHECK(fx.wm.all_params().size() > ps.size());

  Fixture fc(10, wm::GroundingMode::kConstant);
  CHECK(fc.wm.params().back() == &fc.wm.const_c);
  Tensor g = fc.wm.ground_constant(3);
  CHECK(g.rows() == 3);
  CHECK(g.row(0) == g.row(2));
}

TEST_CASE("msae: mask token, determinism, shape and gradients") {
  Rng rng = make_rng(11, "msae");
  for (bool attention : {false, true}) {
    wm::Msae m("msae", 3, 4, 8, 5, attention, rng);
    m.mask_token().value = standard_normal(rng, 1, 3);
    Tensor windows = standard_normal(rng, 6, 12);
    Tensor none = Tensor::Zero(6, 4), all = Tensor::Ones(6, 4);
    Tensor e0 = m.embed(windows, none), e1 = m.embed(windows, all);
    CHECK(e0.cols() == 5);
    CHECK((e0 - e1).cwiseAbs().maxCoeff() > 1e-6);
    CHECK(m.embed(windows, none) == e0);
    CHECK_THROWS_AS(m.embed(standard_normal(rng, 6, 9), none), DimensionError);
    CHECK_THROWS_AS(m.embed(windows, Tensor::Zero(6, 3)), DimensionError);

    {
      Tape t;
      CHECK((m.embed(t, t.constant(windows), none).value() - e0).cwiseAbs().maxCoeff() < 1e-14);
      CHECK(m.loss(t, t.constant(windows), none).scalar() == 0.0);
    }

    ad::ParamRefs every, ps;
    m.collect(every);
    // A key bias shifts every score in a row equally, so softmax removes it
    // and its gradient is exactly zero; it is checked separately.
    for (auto* p : every)
      if (p->name != "msae.k.b") ps.push_back(p);
    for (int draw = 0; draw < 10; ++draw) {
      Tensor w = standard_normal(rng, 3, 12), probe_w = standard_normal(rng, 3, 5);
      Tensor mask = wm::random_mask(rng, 3, 4, 0.5);
      mask(0, 0) = 1.0;
      check_grads([&](Tape& t) {
        Var x = t.constant(w);
        return ad::add(m.loss(t, x, mask), probe(t, m.embed(t, x, mask), probe_w));
      }, ps, true);
      for (auto* p : every)
        if (p->name == "msae.k.b") CHECK(p->grad.cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("msae loss value: empty mask and perfect reconstruction") {
  Rng rng = make_rng(12, "msae");
  Tensor w = standard_normal(rng, 4, 6);
  CHECK(wm::msae_loss_value(w, w, Tensor::Ones(4, 3), 2) == 0.0);
  CHECK(wm::msae_loss_value(w * 2, w, Tensor::Zero(4, 3), 2) == 0.0);
  // One masked position of two dims off by (1, 3): mean squared error 5.
  Tensor recon = w;
  Tensor mask = Tensor::Zero(4, 3);
  mask(1, 2) = 1.0;
  recon(1, 4) += 1.0;
  recon(1, 5) += 3.0;
  recon(0, 0) += 100.0;  // unmasked, ignored
  CHECK(wm::msae_loss_value(recon, w, mask, 2) == doctest::Approx(5.0));
}

TEST_CASE("msae training on a constant sequence reduces the loss below 10%") {
  Rng rng = make_rng(13, "msae");
  wm::Msae m("msae", 3, 8, 16, 8, false, rng);
  ad::ParamRefs ps;
  m.collect(ps);
  nn::AdamState opt(ps, {3e-3, 0.9, 0.999, 1e-8, 100.0});
  Tensor row(1, 3);
  row << 0.5, -1.0, 2.0;
  Tensor windows = row.replicate(32, 8);
  auto eval = [&] {
    Rng r = make_rng(99, "eval");
    Tensor mask = wm::random_mask(r, 32, 8, 0.4);
    Tape t;
    return m.loss(t, t.constant(windows), mask).scalar();
  };
  const double initial = eval();
  for (int s = 0; s < 2000; ++s) {
    Tensor mask = wm::random_mask(rng, 32, 8, 0.4);
    Tape t;
    Var loss = m.loss(t, t.constant(windows), mask);
    ad::zero_grads(ps);
    t.backward(loss);
    nn::adam_step(opt, ps);
  }
  CHECK(eval() < 0.1 * initial);
}

TEST_CASE("distiller: gradients, zero loss on its own outputs, retirement contract") {
  Fixture fx(14);
  Rng rng = make_rng(14, "student");
  wm::Distiller d("student", 5, 6, 4, 0.05, rng, {1e-2, 0.9, 0.999, 1e-8, 100.0});
  for (int draw = 0; draw < 10; ++draw) {
    Tensor obs = standard_normal(rng, 3, 5), pw = standard_normal(rng, 3, 4);
    check_grads([&](Tape& t) { return probe(t, d.student.forward(t, t.constant(obs)), pw); }, d.student.params());
  }
  Tensor obs = standard_normal(rng, 8, 5);
  CHECK(wm::distill_loss(d, obs, d.forward(obs)) == 0.0);

  // Routed grounding is the layer norm of the student output plus b_proj.
  Tape t;
  Tensor g = d.grounding(t, fx.wm, t.constant(obs)).value();
  CHECK((g - d.grounding(fx.wm, obs)).cwiseAbs().maxCoeff() < 1e-14);

  d.retired = true;
  CHECK_THROWS_AS(wm::distill_step(d, obs, d.forward(obs)), ContractViolation);
}

TEST_CASE("distillation on a fixed replay set retires the teacher and generalizes") {
  Fixture fx(15);
  env::EnvSpec spec = env::make_distractor_variant(env::make_spec(env::Kind::kPendulum), 2);
  env::GroundingOracle oracle(3, 5, 4, 15);
  WorldModel wm(small_config(), &oracle, fx.rng);
  auto collect = [&](int n, Rng& r) {
    env::Env e(spec);
    Tensor obs(n, spec.obs_dim()), sem(n, 3);
    env::Observation o = e.reset(r);
    for (int i = 0; i < n; ++i) {
      obs.row(i) = o.full().transpose();
      sem.row(i) = o.semantic.transpose();
      auto s = e.step(uniform_matrix(r, 1, 1, -2.0, 2.0), r);
      o = s.done ? e.reset(r) : s.obs;
    }
    return std::pair{obs, sem};
  };
  Rng data = make_rng(15, "data");
  auto [obs, sem] = collect(2000, data);
  Tensor target = wm::distill_target(wm, oracle, sem);
  Rng init = make_rng(15, "student");
  wm::Distiller d("student", spec.obs_dim(), 32, 4, 0.05, init, {3e-3, 0.9, 0.999, 1e-8, 100.0});
  Rng pick = make_rng(15, "pick");
  std::uniform_int_distribution<int> u(0, 1999);
  for (int s = 0; s < 20000 && !d.retired; ++s) {
    Tensor bo(64, spec.obs_dim()), bt(64, 4);
    for (int b = 0; b < 64; ++b) {
      const int i = u(pick);
      bo.row(b) = obs.row(i);
      bt.row(b) = target.row(i);
    }
    wm::distill_step(d, bo, bt);
  }
  REQUIRE(d.retired);
  CHECK(d.running_loss < 0.05);
  Rng held = make_rng(16, "held");
  auto [ho, hs] = collect(1000, held);
  CHECK(wm::distill_loss(d, ho, wm::distill_target(wm, oracle, hs)) < 2 * 0.05);
}
