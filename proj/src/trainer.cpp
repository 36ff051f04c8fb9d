#include "girl/trainer.hpp"

#include "girl/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace girl {

using ad::Tape;
using ad::Var;

void ReplayBuffer::add(ReplayStep s) {
  steps_.push_back(std::move(s));
  while (steps_.size() > capacity_) steps_.pop_front();
}

namespace {

Tensor row_stack(const std::vector<const Vec*>& rows) {
  if (rows.empty() || rows.front()->size() == 0) return Tensor(static_cast<Eigen::Index>(rows.size()), 0);
  Tensor m(rows.size(), rows.front()->size());
  for (size_t i = 0; i < rows.size(); ++i) m.row(i) = rows[i]->transpose();
  return m;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

SeqBatch ReplayBuffer::sample(Rng& rng, int B, int T) const {
  require(B >= 1 && T >= 1, "ReplayBuffer::sample: empty batch shape");
  if (steps_.size() < static_cast<size_t>(T))
    throw ContractViolation("replay buffer underflow: " + std::to_string(steps_.size()) +
                            " steps stored, " + std::to_string(T) + " needed");
  std::uniform_int_distribution<size_t> pick(0, steps_.size() - static_cast<size_t>(T));
  std::vector<size_t> starts(B);
  for (auto& s : starts) s = pick(rng);
  SeqBatch b;
  b.T = T;
  b.B = B;
  for (int i = 0; i < T; ++i) {
    std::vector<const Vec*> obs, sem, feat, win, act;
    Tensor rew(B, 1), first(B, 1);
    for (int r = 0; r < B; ++r) {
      const auto& s = steps_[starts[r] + i];
      obs.push_back(&s.obs);
      sem.push_back(&s.semantic);
      feat.push_back(&s.feat);
      win.push_back(&s.window);
      act.push_back(&s.prev_action);
      rew(r, 0) = s.reward;
      first(r, 0) = (s.first || i == 0) ? 1.0 : 0.0;
    }
    b.obs.push_back(row_stack(obs));
    b.semantic.push_back(row_stack(sem));
    b.feat.push_back(row_stack(feat));
    b.window.push_back(row_stack(win));
    b.prev_action.push_back(row_stack(act));
    b.reward.push_back(rew);
    b.first.push_back(first);
  }
  return b;
}

std::string metrics_row(const IterationMetrics& m) {
  return std::to_string(m.step) + "," + fmt(m.episodic_return) + "," + fmt(m.mean_drift) + "," +
         fmt(m.delta) + "," + fmt(m.beta) + "," + fmt(m.eig) + "," + fmt(m.rpl) + "," +
         fmt(m.wm_loss) + "," + fmt(m.actor_loss) + "," + fmt(m.critic_loss);
}

wm::WorldModelConfig world_model_config(const RunConfig& cfg) {
  wm::WorldModelConfig w;
  w.obs_dim = cfg.env.obs_dim();
  w.action_dim = cfg.env.action_dim;
  w.semantic_dim = cfg.env.semantic_dim();
  w.latent = cfg.d;
  w.deter = cfg.recurrent_dim;
  w.hidden = cfg.desk.hidden;
  w.d_g = cfg.d_g;
  w.ensemble = cfg.K;
  w.n_feat = cfg.desk.n_feat;
  w.msae_window = cfg.msae_W;
  w.msae_mask_rate = cfg.msae_mask_rate;
  w.msae_attention = cfg.desk.msae_attention;
  w.student_hidden = cfg.desk.student_hidden;
  if (cfg.ablation.no_ground) w.grounding = wm::GroundingMode::kConstant;
  if (cfg.ablation.vae_style) w.grounding = wm::GroundingMode::kLearned;
  if (cfg.ablation.proprio_msae) w.grounding = wm::GroundingMode::kMsae;
  return w;
}

namespace {

img::ActorCriticConfig ac_config(const RunConfig& c) {
  img::ActorCriticConfig a;
  a.hidden = c.desk.hidden;
  a.actor_lr = c.actor_lr;
  a.critic_lr = c.critic_lr;
  a.grad_clip = c.grad_clip;
  a.entropy_coef = c.entropy_coef;
  a.target_rate = c.target_rate;
  a.gamma = c.gamma;
  a.lambda = c.lambda;
  a.action_bound = c.env.action_bound;
  a.spectral_norm = c.desk.spectral_norm;
  return a;
}

tr::TrustRegionState initial_trust_region(const RunConfig& c) {
  tr::TrustRegionState s;
  s.cfg = {c.delta_min, c.delta_max, c.beta_min, c.beta_max,
           c.eta_delta, c.eta_beta,  c.tau_EIG,   c.tau_RPL};
  s.cfg.validate();
  s.beta = c.beta0;
  s.delta = c.delta0 >= 0 ? c.delta0 : std::clamp(0.5, c.delta_min, c.delta_max);
  return s;
}

Tensor zeros(Eigen::Index r, Eigen::Index c) { return Tensor::Zero(r, c); }

}  // namespace

Trainer::Trainer(RunConfig cfg)
    : cfg_(std::move(cfg)), buffer_(static_cast<size_t>(cfg_.replay_capacity)), agent_{env::Env(cfg_.env), true, {}, {}, {}, {}, 0.0} {
  cfg_.validate();
  oracle_ = env::GroundingOracle(cfg_.env.semantic_dim(), cfg_.desk.n_feat, cfg_.d_g,
                                 derive_seed(cfg_.seed, "oracle"));
  Rng init = make_rng(cfg_.seed, "init");
  wm_ = wm::WorldModel(world_model_config(cfg_), &oracle_, init);
  ac_ = img::ActorCritic(ac_config(cfg_), cfg_.recurrent_dim + cfg_.d, cfg_.env.action_dim, init);
  wm_opt_ = nn::AdamState(wm_.params(), {cfg_.lr, 0.9, 0.999, 1e-8, cfg_.grad_clip});
  tr_ = initial_trust_region(cfg_);
}

Vec Trainer::features(const Vec& semantic) const { return oracle_.features(semantic); }

Vec Trainer::window_of(const std::deque<Vec>& history) const {
  const int W = cfg_.msae_W;
  const int ds = cfg_.env.semantic_dim();
  Vec w(W * ds);
  const int have = static_cast<int>(history.size());
  for (int p = 0; p < W; ++p) {
    const int idx = std::max(0, have - W + p);
    w.segment(p * ds, ds) = history[static_cast<size_t>(idx)];
  }
  return w;
}

Tensor Trainer::ground(const Vec& obs, const Vec& semantic, const Vec& window) const {
  if (distiller_ && distiller_->retired) return distiller_->grounding(wm_, obs.transpose());
  switch (wm_.cfg.grounding) {
    case wm::GroundingMode::kOracle: return wm_.ground_from_features(features(semantic).transpose());
    case wm::GroundingMode::kConstant: return wm_.ground_constant(1);
    case wm::GroundingMode::kLearned: return wm_.ground_learned(obs.transpose());
    case wm::GroundingMode::kMsae: return wm_.ground_msae(window.transpose());
  }
  return {};
}

void Trainer::collect(int steps, bool random_policy, Rng& rng) {
  auto& a = agent_;
  const int ad_ = cfg_.env.action_dim;
  std::uniform_real_distribution<double> u(-cfg_.env.action_bound, cfg_.env.action_bound);
  auto store = [&](const env::Observation& o, const Vec& prev, double r, bool first) {
    ReplayStep s;
    s.obs = o.full();
    s.semantic = o.semantic;
    s.feat = features(o.semantic);
    if (wm_.cfg.grounding == wm::GroundingMode::kMsae) s.window = window_of(a.history);
    s.prev_action = prev;
    s.reward = r;
    s.first = first;
    buffer_.add(std::move(s));
  };
  for (int n = 0; n < steps; ++n) {
    if (a.needs_reset) {
      env::Observation o = a.env.reset(rng);
      a.history.assign(1, o.semantic);
      store(o, Vec::Zero(ad_), 0.0, true);
      a.h = wm_.gru_step(zeros(1, cfg_.recurrent_dim), zeros(1, cfg_.d), zeros(1, ad_));
      auto post = wm_.posterior(a.h, o.full().transpose());
      a.z = post.mean + post.log_std.array().exp().matrix().cwiseProduct(standard_normal(rng, 1, cfg_.d));
      a.episode_return = 0.0;
      a.needs_reset = false;
    }
    Vec action(ad_);
    if (random_policy) {
      for (int i = 0; i < ad_; ++i) action(i) = u(rng);
    } else {
      Tensor feat(1, cfg_.recurrent_dim + cfg_.d);
      feat << a.h, a.z;
      action = ac_.act(feat, standard_normal(rng, 1, ad_)).row(0).transpose();
    }
    env::StepResult res = a.env.step(action, rng);
    ++env_steps_;
    a.episode_return += res.reward;
    a.history.push_back(res.obs.semantic);
    while (static_cast<int>(a.history.size()) > cfg_.msae_W) a.history.pop_front();
    Vec clipped = action.cwiseMax(-cfg_.env.action_bound).cwiseMin(cfg_.env.action_bound);
    store(res.obs, clipped, res.reward, false);
    if (res.done) {
      last_return_ = a.episode_return;
      a.needs_reset = true;
    } else {
      a.a = clipped.transpose();
      a.h = wm_.gru_step(a.h, a.z, a.a);
      auto post = wm_.posterior(a.h, res.obs.full().transpose());
      a.z = post.mean + post.log_std.array().exp().matrix().cwiseProduct(standard_normal(rng, 1, cfg_.d));
    }
  }
}

void Trainer::pretrain_msae() {
  auto& m = wm_.msae;
  ad::ParamRefs params;
  m.collect(params);
  nn::AdamState opt(params, {cfg_.msae_lr, 0.9, 0.999, 1e-8, cfg_.grad_clip});
  Rng rng = make_rng(cfg_.seed, "msae.pretrain");
  std::uniform_int_distribution<size_t> pick(0, buffer_.size() - 1);
  for (int s = 0; s < cfg_.desk.msae_pretrain_steps; ++s) {
    std::vector<const Vec*> rows;
    for (int b = 0; b < cfg_.desk.msae_batch; ++b) rows.push_back(&buffer_.at(pick(rng)).window);
    Tensor windows = row_stack(rows);
    Tensor mask = wm::random_mask(rng, cfg_.desk.msae_batch, cfg_.msae_W, cfg_.msae_mask_rate);
    Tape t;
    Var loss = m.loss(t, t.constant(windows), mask);
    if (mask.sum() == 0.0) continue;
    ad::zero_grads(params);
    t.backward(loss);
    nn::adam_step(opt, params);
  }
}

void Trainer::prefill() {
  Rng rng = make_rng(cfg_.seed, "prefill");
  collect(cfg_.desk.prefill_steps, true, rng);
  if (wm_.cfg.grounding == wm::GroundingMode::kMsae) pretrain_msae();
}

Var Trainer::ground_taped(Tape& t, const SeqBatch& b, int i) {
  if (distiller_ && distiller_->retired) return distiller_->grounding(t, wm_, t.constant(b.obs[i]));
  switch (wm_.cfg.grounding) {
    case wm::GroundingMode::kOracle: return wm_.ground_from_features(t, t.constant(b.feat[i]));
    case wm::GroundingMode::kConstant: return wm_.ground_constant(t, b.B);
    case wm::GroundingMode::kLearned: return wm_.ground_learned(t, t.constant(b.obs[i]));
    case wm::GroundingMode::kMsae: {
      Tape::FrozenScope frozen(t);
      return wm_.ground_msae(t, t.constant(b.window[i]));
    }
  }
  return {};
}

Trainer::WmStats Trainer::train_world_model(Rng& rng, bool update_controller) {
  const int B = cfg_.batch_sequences, T = cfg_.batch_length, K = wm_.K();
  const int d = cfg_.d, H = cfg_.recurrent_dim, A = cfg_.env.action_dim;
  SeqBatch batch = buffer_.sample(rng, B, T);
  Tape t;
  Var h = t.constant(zeros(B, H)), z = t.constant(zeros(B, d));
  std::vector<Var> nll_terms, drift_terms, cm_terms, psi_terms;
  std::vector<GaussianVar> posts;
  std::vector<std::vector<GaussianVar>> priors;
  WmStats st;
  for (int i = 0; i < T; ++i) {
    Tensor keep = Tensor::Ones(B, 1) - batch.first[i];
    Var h_in = ad::mul(h, t.constant(keep.replicate(1, H)));
    Var x = ad::concat_cols({ad::mul(z, t.constant(keep.replicate(1, d))),
                             t.constant(batch.prev_action[i].cwiseProduct(keep.replicate(1, A)))});
    h = wm_.gru.step(t, h_in, x);
    Var c = ground_taped(t, batch, i);
    Var o = t.constant(batch.obs[i]);
    GaussianVar post = wm_.posterior(t, h, o);
    z = sample_reparam(post, standard_normal(rng, B, d));
    std::vector<GaussianVar> ps;
    Var drift;
    for (int k = 0; k < K; ++k) {
      ps.push_back(wm_.prior(t, k, h, c));
      Var kl = kl_diag(post, ps.back());
      drift = k == 0 ? kl : ad::add(drift, kl);
    }
    drift = ad::scale(drift, 1.0 / K);
    auto [lo, lr] = wm_.log_likelihoods(t, z, o, t.constant(batch.reward[i]));
    nll_terms.push_back(ad::neg(ad::mean(ad::add(lo, lr))));
    drift_terms.push_back(ad::mean(drift));
    cm_terms.push_back(wm::consistency_loss(wm_, t, z, c));
    Var psi = wm_.predict_grounding(t, ad::stop_gradient(h));
    psi_terms.push_back(ad::mean(ad::row_sum(ad::square(ad::sub(psi, ad::stop_gradient(c))))));
    posts.push_back(post);
    priors.push_back(std::move(ps));
    st.h.push_back(h.value());
    st.z.push_back(z.value());
  }

  double drift_sum = 0.0;
  for (auto& v : drift_terms) drift_sum += v.scalar();
  st.mean_drift = std::max(0.0, drift_sum / T);

  // Disagreement and miscalibration on a random subset of positions.
  const int P = cfg_.desk.eig_positions;
  std::uniform_int_distribution<int> pi(0, T - 1), pb(0, B - 1);
  for (int p = 0; p < P; ++p) {
    const int i = pi(rng), b = pb(rng);
    std::vector<GaussianDiag> comps;
    for (int k = 0; k < K; ++k) comps.push_back(priors[i][k].row(b));
    GaussianMixture mix(std::move(comps));
    const uint64_t s = derive_seed(cfg_.seed, "eig", static_cast<uint64_t>(p), iteration_);
    st.eig += tr::eig(mix, cfg_.desk.eig_samples, s) / P;
    st.rpl += tr::rpl(posts[i].row(b), mix, cfg_.desk.eig_samples, s ^ 0x5bd1e995ULL) / P;
  }

  if (update_controller) {
    const bool warming =
        cfg_.delta0 < 0 && env_steps_ - cfg_.desk.prefill_steps <= cfg_.delta_warmup_steps;
    if (warming) {
      warmup_drift_sum_ += st.mean_drift;
      ++warmup_count_;
      tr_.delta = std::clamp(warmup_drift_sum_ / warmup_count_, tr_.cfg.delta_min, tr_.cfg.delta_max);
    } else {
      tr_ = tr::update_delta(tr_, st.eig, st.rpl);
      if (!cfg_.ablation.fixed_beta) tr_ = tr::update_beta(tr_, st.mean_drift);
    }
  }

  Var nll = nll_terms.front(), drift = drift_terms.front(), cm = cm_terms.front(), psi = psi_terms.front();
  for (int i = 1; i < T; ++i) {
    nll = ad::add(nll, nll_terms[i]);
    drift = ad::add(drift, drift_terms[i]);
    cm = ad::add(cm, cm_terms[i]);
    psi = ad::add(psi, psi_terms[i]);
  }
  const double inv_t = 1.0 / T;
  Var objective = ad::scale(ad::add(ad::add(nll, ad::scale(drift, tr_.beta)), ad::scale(cm, cfg_.mu)), inv_t);
  Var loss = ad::add(objective, ad::scale(psi, inv_t));
  auto params = wm_.params();
  ad::zero_grads(params);
  t.backward(loss);
  nn::adam_step(wm_opt_, params);
  st.loss = objective.scalar();
  return st;
}

double Trainer::world_model_step() {
  Rng rng = make_rng(cfg_.seed, "wm.extra", 0, static_cast<uint64_t>(wm_opt_.step));
  return train_world_model(rng, false).loss;
}

bool Trainer::run_distillation(int max_steps) {
  require(wm_.cfg.grounding == wm::GroundingMode::kOracle, "distillation needs the oracle grounding path");
  if (!wm_.proj_frozen) {
    wm_.proj_frozen = true;
    // The projection sits last in the parameter list; drop its moments.
    wm_opt_.m.resize(wm_opt_.m.size() - 2);
    wm_opt_.v.resize(wm_opt_.v.size() - 2);
  }
  if (!distiller_) {
    Rng init = make_rng(cfg_.seed, "distill.init");
    distiller_.emplace("distill.student", cfg_.env.obs_dim(), cfg_.desk.student_hidden, cfg_.d_g,
                       cfg_.tau_distill, init, nn::AdamConfig{cfg_.distill_lr, 0.9, 0.999, 1e-8, cfg_.grad_clip});
  }
  if (distiller_->retired) return true;
  Rng rng = make_rng(cfg_.seed, "distill.batches", 0, static_cast<uint64_t>(distiller_->steps));
  std::uniform_int_distribution<size_t> pick(0, buffer_.size() - 1);
  for (int s = 0; s < max_steps && !distiller_->retired; ++s) {
    std::vector<const Vec*> obs, sem;
    for (int b = 0; b < cfg_.desk.distill_batch; ++b) {
      const auto& st = buffer_.at(pick(rng));
      obs.push_back(&st.obs);
      sem.push_back(&st.semantic);
    }
    Tensor target = wm::distill_target(wm_, oracle_, row_stack(sem));
    wm::distill_step(*distiller_, row_stack(obs), target);
  }
  return distiller_->retired;
}

void Trainer::maybe_distill() {
  if (!cfg_.ablation.distill || env_steps_ < cfg_.distill_start_steps) return;
  if (distiller_ && distiller_->retired) return;
  run_distillation(cfg_.desk.distill_max_steps);
}

IterationMetrics Trainer::iterate() {
  ++iteration_;
  const auto it = static_cast<uint64_t>(iteration_);
  Rng collect_rng = make_rng(cfg_.seed, "collect", 0, it);
  collect(cfg_.desk.env_steps_per_iter, false, collect_rng);
  maybe_distill();

  Rng wm_rng = make_rng(cfg_.seed, "wm", 0, it);
  WmStats st = train_world_model(wm_rng, true);

  img::ImagineOptions opt;
  opt.horizon = cfg_.H;
  opt.intrinsic = !cfg_.ablation.no_intrinsic;
  opt.alpha = cfg_.alpha;
  opt.intrinsic_samples = cfg_.desk.intrinsic_samples;
  const int S = cfg_.desk.imagination_starts;
  const int pool = static_cast<int>(st.h.size()) * cfg_.batch_sequences;
  img::ActorCriticLosses losses;
  for (int m = 0; m < cfg_.desk.imagination_phases; ++m) {
    Rng rng = make_rng(cfg_.seed, "imagine", static_cast<uint64_t>(m), it);
    std::uniform_int_distribution<int> pick(0, pool - 1);
    Tensor z0(S, cfg_.d), h0(S, cfg_.recurrent_dim);
    for (int s = 0; s < S; ++s) {
      const int idx = pick(rng);
      const int i = idx / cfg_.batch_sequences, b = idx % cfg_.batch_sequences;
      z0.row(s) = st.z[i].row(b);
      h0.row(s) = st.h[i].row(b);
    }
    auto l = img::actor_critic_update(wm_, ac_, z0, h0, opt, rng);
    losses.actor += l.actor / cfg_.desk.imagination_phases;
    losses.critic += l.critic / cfg_.desk.imagination_phases;
  }

  IterationMetrics m;
  m.step = env_steps_;
  m.episodic_return = last_return_;
  m.mean_drift = st.mean_drift;
  m.delta = tr_.delta;
  m.beta = tr_.beta;
  m.eig = st.eig;
  m.rpl = st.rpl;
  m.wm_loss = st.loss;
  m.actor_loss = losses.actor;
  m.critic_loss = losses.critic;
  for (double v : {m.mean_drift, m.eig, m.rpl, m.wm_loss, m.actor_loss, m.critic_loss})
    if (!std::isfinite(v)) throw NumericError("non-finite training metric at iteration " + std::to_string(iteration_));
  return m;
}

namespace {

// Filtering state for running the policy in a real episode.
struct Runner {
  const wm::WorldModel& wm;
  Tensor h, z;
  void start(const Vec& obs, int deter, int d, int a) {
    h = wm.gru_step(Tensor::Zero(1, deter), Tensor::Zero(1, d), Tensor::Zero(1, a));
    z = wm.posterior(h, obs.transpose()).mean;
  }
  void advance(const Vec& action, const Vec& obs) {
    h = wm.gru_step(h, z, action.transpose());
    z = wm.posterior(h, obs.transpose()).mean;
  }
  Tensor feat() const {
    Tensor f(1, h.cols() + z.cols());
    f << h, z;
    return f;
  }
};

}  // namespace

std::vector<double> Trainer::evaluate(int episodes, uint64_t salt) const {
  require(episodes >= 1, "evaluate: episodes must be >= 1");
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) {
    Rng rng = make_rng(cfg_.seed, "eval", salt, static_cast<uint64_t>(e));
    env::Env env(cfg_.env);
    env::Observation o = env.reset(rng);
    Runner run{wm_, {}, {}};
    run.start(o.full(), cfg_.recurrent_dim, cfg_.d, cfg_.env.action_dim);
    double ret = 0.0;
    for (;;) {
      Vec action = ac_.act_deterministic(run.feat()).row(0).transpose();
      env::StepResult r = env.step(action, rng);
      ret += r.reward;
      if (r.done) break;
      run.advance(action.cwiseMax(-cfg_.env.action_bound).cwiseMin(cfg_.env.action_bound), r.obs.full());
    }
    returns.push_back(ret);
  }
  return returns;
}

std::vector<metrics::RealTrajectory> Trainer::real_trajectories(int n, uint64_t salt) const {
  const bool goal_path = cfg_.desk.dfm_policy == "goal-path";
  std::vector<metrics::RealTrajectory> out;
  for (int e = 0; e < n; ++e) {
    Rng rng = make_rng(cfg_.seed, "dfm.traj", salt, static_cast<uint64_t>(e));
    env::Env env(cfg_.env);
    env::Observation o = env.reset(rng);
    std::deque<Vec> history{o.semantic};
    Runner run{wm_, {}, {}};
    run.start(o.full(), cfg_.recurrent_dim, cfg_.d, cfg_.env.action_dim);
    metrics::RealTrajectory tr;
    for (;;) {
      tr.obs.push_back(o.full().transpose());
      tr.ground.push_back(ground(o.full(), o.semantic, window_of(history)));
      Vec action = goal_path ? Vec::Constant(cfg_.env.action_dim, cfg_.env.action_bound)
                             : Vec(ac_.act(run.feat(), standard_normal(rng, 1, cfg_.env.action_dim)).row(0).transpose());
      tr.action.push_back(action.transpose());
      env::StepResult r = env.step(action, rng);
      o = r.obs;
      history.push_back(o.semantic);
      while (static_cast<int>(history.size()) > cfg_.msae_W) history.pop_front();
      if (r.done) {
        tr.obs.push_back(o.full().transpose());
        tr.ground.push_back(ground(o.full(), o.semantic, window_of(history)));
        break;
      }
      run.advance(action, o.full());
    }
    out.push_back(std::move(tr));
  }
  return out;
}

metrics::DfmReport Trainer::dfm(int L, int particles, int n_traj, uint64_t salt) const {
  std::vector<metrics::RealTrajectory> usable;
  for (auto& tr : real_trajectories(n_traj, salt))
    if (tr.length() >= L + 1) usable.push_back(std::move(tr));
  require(!usable.empty(), "dfm: no real trajectory reaches length L + 1");
  return metrics::dfm(wm_, usable, L, particles, derive_seed(cfg_.seed, "dfm", salt),
                      cfg_.desk.dfm_starts);
}

void Trainer::save(const std::string& stem) {
  ad::ParamRefs params = wm_.all_params();
  for (auto* p : ac_.all_params()) params.push_back(p);
  if (distiller_)
    for (auto* p : distiller_->student.params()) params.push_back(p);
  nn::save_checkpoint(stem, params);
  nlohmann::json state = {{"delta", tr_.delta},
                          {"beta", tr_.beta},
                          {"iteration", iteration_},
                          {"env_steps", env_steps_},
                          {"proj_frozen", wm_.proj_frozen},
                          {"distiller", distiller_.has_value()},
                          {"retired", distiller_ && distiller_->retired}};
  std::ofstream(stem + ".state.json") << state.dump(2) << "\n";
}

void Trainer::load(const std::string& stem) {
  std::ifstream in(stem + ".state.json");
  require(in.good(), "cannot open trainer state '" + stem + ".state.json'");
  nlohmann::json state;
  in >> state;
  if (state.at("distiller").get<bool>() && !distiller_) {
    Rng init = make_rng(cfg_.seed, "distill.init");
    distiller_.emplace("distill.student", cfg_.env.obs_dim(), cfg_.desk.student_hidden, cfg_.d_g,
                       cfg_.tau_distill, init, nn::AdamConfig{cfg_.distill_lr, 0.9, 0.999, 1e-8, cfg_.grad_clip});
  }
  ad::ParamRefs params = wm_.all_params();
  for (auto* p : ac_.all_params()) params.push_back(p);
  if (distiller_)
    for (auto* p : distiller_->student.params()) params.push_back(p);
  nn::load_checkpoint(stem, params);
  tr_.delta = state.at("delta").get<double>();
  tr_.beta = state.at("beta").get<double>();
  iteration_ = state.at("iteration").get<long>();
  env_steps_ = state.at("env_steps").get<long>();
  if (state.at("proj_frozen").get<bool>() && !wm_.proj_frozen) {
    wm_.proj_frozen = true;
    wm_opt_.m.resize(wm_opt_.m.size() - 2);
    wm_opt_.v.resize(wm_opt_.v.size() - 2);
  }
  if (distiller_) distiller_->retired = state.at("retired").get<bool>();
}

}  // namespace girl
