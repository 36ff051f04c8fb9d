#include "girl/imagination.hpp"

#include "girl/error.hpp"

#include <cmath>
#include <numbers>

namespace girl::img {

namespace {

const double kHalfLog2PiE = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);

Var squash_action_log_std(Var raw) {
  return ad::add_scalar(ad::scale(ad::sigmoid(raw), kActionLogStdMax - kActionLogStdMin),
                        kActionLogStdMin);
}

Tensor squash_action_log_std(const Tensor& raw) {
  return (nn::activate(raw, nn::Activation::kSigmoid) * (kActionLogStdMax - kActionLogStdMin))
             .array() +
         kActionLogStdMin;
}

}  // namespace

ActorCritic::ActorCritic(const ActorCriticConfig& c, int feat_dim, int action_dim, Rng& rng)
    : cfg(c) {
  require(action_dim >= 1, "ActorCritic: action_dim must be >= 1");
  actor = nn::Mlp("ac.actor", {feat_dim, c.hidden, c.hidden, 2 * action_dim}, nn::Activation::kElu,
                  nn::Activation::kIdentity, rng);
  critic = nn::Mlp("ac.critic", {feat_dim, c.hidden, c.hidden, 1}, nn::Activation::kElu,
                   nn::Activation::kIdentity, rng);
  target = critic;
  for (size_t i = 0; i < target.depth(); ++i) {
    auto& l = target.layer(i);
    l.weight.name = "ac.target.l" + std::to_string(i) + ".w";
    l.bias.name = "ac.target.l" + std::to_string(i) + ".b";
  }
  actor_opt = nn::AdamState(actor.params(), {c.actor_lr, 0.9, 0.999, 1e-8, c.grad_clip});
  critic_opt = nn::AdamState(critic.params(), {c.critic_lr, 0.9, 0.999, 1e-8, c.grad_clip});
}

ad::ParamRefs ActorCritic::all_params() {
  ad::ParamRefs r;
  actor.collect(r);
  critic.collect(r);
  target.collect(r);
  return r;
}

std::pair<Var, Var> ActorCritic::act(Tape& t, Var feat, const Tensor& noise) {
  const int a = action_dim();
  Var out = actor.forward(t, feat);
  Var mean = ad::slice_cols(out, 0, a);
  Var log_std = squash_action_log_std(ad::slice_cols(out, a, a));
  Var pre = ad::add(mean, ad::mul(ad::exp(log_std), t.constant(noise)));
  Var action = ad::scale(ad::tanh(pre), cfg.action_bound);
  Var entropy = ad::add_scalar(ad::row_sum(log_std), a * kHalfLog2PiE);
  return {action, entropy};
}

Tensor ActorCritic::act(const Tensor& feat, const Tensor& noise) const {
  const int a = action_dim();
  Tensor out = actor.forward(feat);
  Tensor std = squash_action_log_std(out.rightCols(a)).array().exp();
  Tensor pre = out.leftCols(a) + std.cwiseProduct(noise);
  return pre.array().tanh() * cfg.action_bound;
}

Tensor ActorCritic::act_deterministic(const Tensor& feat) const {
  Tensor out = actor.forward(feat);
  return out.leftCols(action_dim()).array().tanh() * cfg.action_bound;
}

void ActorCritic::update_target() {
  for (size_t i = 0; i < critic.depth(); ++i) {
    auto& dst = target.layer(i);
    const auto& src = critic.layer(i);
    dst.weight.value += cfg.target_rate * (src.weight.value - dst.weight.value);
    dst.bias.value += cfg.target_rate * (src.bias.value - dst.bias.value);
  }
}

std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double bootstrap,
                                   double gamma, double lam) {
  require_dims(rewards.size() == values.size(), "lambda_returns: length mismatch");
  std::vector<double> g(rewards.size());
  double next = bootstrap;
  for (size_t i = rewards.size(); i-- > 0;) {
    next = rewards[i] + gamma * ((1.0 - lam) * values[i] + lam * next);
    g[i] = next;
  }
  return g;
}

std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values,
                                Var bootstrap, double gamma, double lam) {
  require_dims(rewards.size() == values.size(), "lambda_returns: length mismatch");
  std::vector<Var> g(rewards.size());
  Var next = bootstrap;
  for (size_t i = rewards.size(); i-- > 0;) {
    next = ad::add(rewards[i],
                   ad::scale(ad::add(ad::scale(values[i], 1.0 - lam), ad::scale(next, lam)), gamma));
    g[i] = next;
  }
  return g;
}

double intrinsic_bonus(double eig_t, double alpha) {
  require(alpha >= 0.0, "intrinsic_bonus: alpha must be non-negative");
  return alpha * eig_t;
}

Tensor ensemble_eig(const std::vector<wm::GaussianParams>& members, int n_samples, uint64_t seed) {
  require(!members.empty(), "ensemble_eig: no members");
  const Eigen::Index rows = members.front().mean.rows();
  Tensor out(rows, 1);
  for (Eigen::Index b = 0; b < rows; ++b) {
    std::vector<GaussianDiag> comps;
    double mean_entropy = 0.0;
    for (const auto& m : members) {
      comps.push_back(m.row(b));
      mean_entropy += entropy_diag(comps.back());
    }
    mean_entropy /= static_cast<double>(comps.size());
    out(b, 0) = comps.size() == 1
                    ? 0.0
                    : mc_mixture_entropy(GaussianMixture(std::move(comps)), n_samples,
                                         splitmix64(seed ^ static_cast<uint64_t>(b))) -
                          mean_entropy;
  }
  return out;
}

TapedRollout imagine_taped(Tape& t, wm::WorldModel& wm, ActorCritic& ac, const Tensor& z0,
                           const Tensor& h0, const ImagineOptions& opt, Rng& rng) {
  require(opt.horizon >= 0, "imagine: horizon must be >= 0");
  require_dims(z0.rows() == h0.rows(), "imagine: start batch sizes differ");
  require_dims(z0.cols() == wm.cfg.latent && h0.cols() == wm.cfg.deter, "imagine: start dims");
  const Eigen::Index B = z0.rows();
  const int a_dim = ac.action_dim();
  const int K = wm.K();
  std::uniform_int_distribution<int> pick(0, K - 1);

  TapedRollout r;
  Var h = t.constant(h0), z = t.constant(z0);
  r.feat.push_back(ad::concat_cols({h, z}));
  for (int i = 0; i < opt.horizon; ++i) {
    Tensor noise = opt.deterministic_actor ? Tensor::Zero(B, a_dim) : standard_normal(rng, B, a_dim);
    auto [action, entropy] = ac.act(t, r.feat.back(), noise);
    r.entropy.push_back(entropy);

    Tape::FrozenScope frozen(t);
    Var h_next = wm.gru.step(t, h, ad::concat_cols({z, action}));
    Var c_hat = wm.predict_grounding(t, h_next);
    std::vector<Var> means, log_stds;
    std::vector<wm::GaussianParams> plain;
    for (int k = 0; k < K; ++k) {
      GaussianVar p = wm.prior(t, k, h_next, c_hat);
      means.push_back(p.mean);
      log_stds.push_back(p.log_std);
      plain.push_back({p.mean.value(), p.log_std.value()});
    }
    std::vector<int> choice(static_cast<size_t>(B));
    for (auto& c : choice) c = pick(rng);
    GaussianVar chosen{ad::select_rows(means, choice), ad::select_rows(log_stds, choice)};
    Tensor eps = standard_normal(rng, B, wm.cfg.latent) * opt.latent_noise;
    Var z_next = sample_reparam(chosen, eps);

    Var rew = wm.predict_reward(t, z_next);
    if (opt.intrinsic && opt.alpha > 0.0 && K > 1) {
      Tensor bonus = ensemble_eig(plain, opt.intrinsic_samples, rng()) * opt.alpha;
      rew = ad::add(rew, t.constant(bonus));
    }
    Var feat_next = ad::concat_cols({h_next, z_next});
    Var v = ac.target.forward(t, feat_next);

    r.reward.push_back(rew);
    r.value.push_back(v);
    r.feat.push_back(feat_next);
    r.traj.h.push_back(h.value());
    r.traj.z.push_back(z.value());
    r.traj.action.push_back(action.value());
    r.traj.reward.push_back(rew.value());
    r.traj.ground.push_back(c_hat.value());
    r.traj.value.push_back(v.value());
    h = h_next;
    z = z_next;
  }
  r.traj.h_last = h.value();
  r.traj.z_last = z.value();
  return r;
}

ImaginedTrajectory imagine_rollout(wm::WorldModel& wm, ActorCritic& ac, const Tensor& z0,
                                   const Tensor& h0, const ImagineOptions& opt, Rng& rng) {
  Tape t;
  Tape::FrozenScope frozen(t);
  return imagine_taped(t, wm, ac, z0, h0, opt, rng).traj;
}

Var actor_loss(Tape& t, const TapedRollout& r, const ActorCritic& ac) {
  require(!r.reward.empty(), "actor_loss: empty trajectory");
  auto returns = lambda_returns(r.reward, r.value, r.value.back(), ac.cfg.gamma, ac.cfg.lambda);
  std::vector<Var> terms;
  for (size_t i = 0; i < returns.size(); ++i)
    terms.push_back(ad::add(ad::mean(returns[i]), ad::scale(ad::mean(r.entropy[i]), ac.cfg.entropy_coef)));
  Var total = terms.front();
  for (size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  (void)t;
  return ad::scale(total, -1.0 / static_cast<double>(terms.size()));
}

ActorCriticLosses actor_critic_update(wm::WorldModel& wm, ActorCritic& ac, const Tensor& z0,
                                      const Tensor& h0, const ImagineOptions& opt, Rng& rng) {
  require(opt.horizon >= 1, "actor_critic_update: horizon must be >= 1");
  ActorCriticLosses out;
  std::vector<Tensor> feats, targets;
  {
    Tape t;
    TapedRollout r = imagine_taped(t, wm, ac, z0, h0, opt, rng);
    Var loss = actor_loss(t, r, ac);
    auto params = ac.actor_params();
    ad::zero_grads(params);
    t.backward(loss);
    nn::adam_step(ac.actor_opt, params);
    if (ac.cfg.spectral_norm) ac.actor.project_final_spectral_norm();
    out.actor = loss.scalar();

    auto returns = lambda_returns(r.reward, r.value, r.value.back(), ac.cfg.gamma, ac.cfg.lambda);
    for (size_t i = 0; i < returns.size(); ++i) {
      feats.push_back(r.feat[i].value());
      targets.push_back(returns[i].value());
    }
  }
  {
    Tape t;
    Tensor x(feats.size() * feats[0].rows(), feats[0].cols());
    Tensor y(x.rows(), 1);
    for (size_t i = 0; i < feats.size(); ++i) {
      x.middleRows(i * feats[0].rows(), feats[0].rows()) = feats[i];
      y.middleRows(i * feats[0].rows(), feats[0].rows()) = targets[i];
    }
    Var v = ac.critic.forward(t, t.constant(x));
    Var loss = ad::mean(ad::square(ad::sub(v, t.constant(y))));
    auto params = ac.critic_params();
    ad::zero_grads(params);
    t.backward(loss);
    nn::adam_step(ac.critic_opt, params);
    if (ac.cfg.spectral_norm) ac.critic.project_final_spectral_norm();
    out.critic = loss.scalar();
  }
  ac.update_target();
  return out;
}

}  // namespace girl::img
