#include "girl/world_model.hpp"

#include "girl/error.hpp"

#include <cmath>
#include <numbers>

namespace girl::wm {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Tensor sigmoid(const Tensor& x) { return nn::activate(x, Activation::kSigmoid); }

Tensor layer_norm_rows(const Tensor& x, double eps = 1e-5) {
  Tensor y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    y.row(i) = (x.row(i).array() - mu) / std::sqrt(var + eps);
  }
  return y;
}

GaussianVar split_gaussian(Var out, int d) {
  return {ad::slice_cols(out, 0, d), squash_log_std(ad::slice_cols(out, d, d))};
}

GaussianParams split_gaussian(const Tensor& out, int d) {
  return {out.leftCols(d), squash_log_std(out.middleCols(d, d))};
}

// B x W mask -> B x (W * d_s), each position repeated over its state dims.
Tensor expand_mask(const Tensor& mask, int state_dim) {
  Tensor m(mask.rows(), mask.cols() * state_dim);
  for (Eigen::Index w = 0; w < mask.cols(); ++w)
    for (int j = 0; j < state_dim; ++j) m.col(w * state_dim + j) = mask.col(w);
  return m;
}

}  // namespace

GroundingMode grounding_mode_from_string(const std::string& s) {
  if (s == "oracle") return GroundingMode::kOracle;
  if (s == "constant") return GroundingMode::kConstant;
  if (s == "learned") return GroundingMode::kLearned;
  if (s == "msae") return GroundingMode::kMsae;
  throw ContractViolation("unknown grounding mode '" + s + "'");
}

std::string to_string(GroundingMode m) {
  switch (m) {
    case GroundingMode::kOracle: return "oracle";
    case GroundingMode::kConstant: return "constant";
    case GroundingMode::kLearned: return "learned";
    case GroundingMode::kMsae: return "msae";
  }
  return "?";
}

Var squash_log_std(Var raw) {
  return ad::add_scalar(ad::scale(ad::sigmoid(raw), kLatentLogStdMax - kLatentLogStdMin),
                        kLatentLogStdMin);
}

Tensor squash_log_std(const Tensor& raw) {
  return (sigmoid(raw) * (kLatentLogStdMax - kLatentLogStdMin)).array() + kLatentLogStdMin;
}

// ---------------------------------------------------------------- MSAE

Msae::Msae(const std::string& name, int state_dim, int window, int hidden, int d_g,
           bool attention, Rng& rng)
    : state_dim_(state_dim), window_(window), attention_(attention) {
  require(window >= 1, "Msae: window must be >= 1");
  require(state_dim >= 1, "Msae: state_dim must be >= 1");
  token_ = Parameter(name + ".mask_token", standard_normal(rng, 1, state_dim));
  int body_in = window * state_dim;
  if (attention) {
    const int da = std::max(4, state_dim);
    wq_ = nn::Linear(name + ".q", state_dim, da, rng);
    wk_ = nn::Linear(name + ".k", state_dim, da, rng);
    wv_ = nn::Linear(name + ".v", state_dim, da, rng);
    body_in = window * da;
  }
  body_ = nn::Mlp(name + ".body", {body_in, hidden, hidden}, Activation::kElu, Activation::kElu, rng);
  recon_ = nn::Linear(name + ".recon", hidden, window * state_dim, rng);
  proj_ = nn::Linear(name + ".proj", hidden, d_g, rng);
}

void Msae::collect(ParamRefs& out) {
  out.push_back(&token_);
  if (attention_) {
    wq_.collect(out);
    wk_.collect(out);
    wv_.collect(out);
  }
  body_.collect(out);
  recon_.collect(out);
  proj_.collect(out);
}

Var Msae::attend(Tape& t, Var x) {
  const auto d = static_cast<Eigen::Index>(state_dim_);
  std::vector<Var> rows;
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    Var seq = ad::reshape(ad::slice_rows(x, b, 1), window_, d);
    Var q = wq_.forward(t, seq), k = wk_.forward(t, seq), v = wv_.forward(t, seq);
    Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(double(q.cols()))));
    Var o = ad::matmul(att, v);
    rows.push_back(ad::reshape(o, 1, o.rows() * o.cols()));
  }
  return ad::concat_rows(rows);
}

Tensor Msae::attend(const Tensor& x) const {
  const Eigen::Index d = state_dim_;
  const Eigen::Index da = wq_.out_dim();
  Tensor out(x.rows(), window_ * da);
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    Tensor seq(window_, d);
    for (int w = 0; w < window_; ++w) seq.row(w) = x.block(b, w * d, 1, d);
    Tensor q = wq_.forward(seq), k = wk_.forward(seq), v = wv_.forward(seq);
    Tensor s = q * k.transpose() / std::sqrt(double(da));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      s.row(i).array() -= s.row(i).maxCoeff();
      s.row(i) = s.row(i).array().exp();
      s.row(i) /= s.row(i).sum();
    }
    Tensor o = s * v;
    for (int w = 0; w < window_; ++w) out.block(b, w * da, 1, da) = o.row(w);
  }
  return out;
}

Var Msae::encode(Tape& t, Var windows, const Tensor& mask) {
  require_dims(windows.cols() == window_ * state_dim_, "Msae: window width mismatch");
  require_dims(mask.rows() == windows.rows() && mask.cols() == window_, "Msae: mask shape mismatch");
  Tensor m = expand_mask(mask, state_dim_);
  Tensor keep = Tensor::Ones(m.rows(), m.cols()) - m;
  Var filled = ad::add(ad::mul(windows, t.constant(keep)),
                       ad::mul(t.constant(m), ad::tile_cols(t.param(token_), window_)));
  if (attention_) filled = attend(t, filled);
  return body_.forward(t, filled);
}

Tensor Msae::encode(const Tensor& windows, const Tensor& mask) const {
  require_dims(windows.cols() == window_ * state_dim_, "Msae: window width mismatch");
  require_dims(mask.rows() == windows.rows() && mask.cols() == window_, "Msae: mask shape mismatch");
  Tensor m = expand_mask(mask, state_dim_);
  Tensor tok = token_.value.replicate(windows.rows(), window_);
  Tensor filled = windows.cwiseProduct(Tensor::Ones(m.rows(), m.cols()) - m) + m.cwiseProduct(tok);
  if (attention_) filled = attend(filled);
  return body_.forward(filled);
}

Var Msae::embed(Tape& t, Var windows, const Tensor& mask) {
  return proj_.forward(t, encode(t, windows, mask));
}

Tensor Msae::embed(const Tensor& windows, const Tensor& mask) const {
  return proj_.forward(encode(windows, mask));
}

Var Msae::reconstruct(Tape& t, Var windows, const Tensor& mask) {
  return recon_.forward(t, encode(t, windows, mask));
}

Var Msae::loss(Tape& t, Var windows, const Tensor& mask) {
  const double count = mask.sum();
  if (count == 0.0) return t.constant(Tensor::Zero(1, 1));
  Var recon = reconstruct(t, windows, mask);
  Var target = ad::stop_gradient(windows);
  Var sq = ad::mul(ad::square(ad::sub(recon, target)), t.constant(expand_mask(mask, state_dim_)));
  return ad::scale(ad::sum(sq), 1.0 / (count * state_dim_));
}

double msae_loss_value(const Tensor& recon, const Tensor& windows, const Tensor& mask,
                       int state_dim) {
  const double count = mask.sum();
  if (count == 0.0) return 0.0;
  Tensor sq = (recon - windows).array().square().matrix().cwiseProduct(expand_mask(mask, state_dim));
  return sq.sum() / (count * state_dim);
}

Tensor random_mask(Rng& rng, int batch, int window, double rate) {
  require(rate >= 0.0 && rate < 1.0, "random_mask: rate must lie in [0, 1)");
  std::bernoulli_distribution bern(rate);
  Tensor m(batch, window);
  for (int b = 0; b < batch; ++b)
    for (int w = 0; w < window; ++w) m(b, w) = bern(rng) ? 1.0 : 0.0;
  return m;
}

// ---------------------------------------------------------- WorldModel

WorldModel::WorldModel(const WorldModelConfig& c, const env::GroundingOracle* oracle, Rng& rng)
    : cfg(c) {
  require(c.ensemble >= 1, "WorldModel: ensemble size must be >= 1");
  require(c.latent >= 1 && c.deter >= 1 && c.hidden >= 1 && c.d_g >= 2,
          "WorldModel: bad dimensions");
  const int d = c.latent;
  gru = nn::Gru("wm.gru", d + c.action_dim, c.deter, rng);
  encoder = nn::Mlp("wm.enc", {c.deter + c.obs_dim, c.hidden, 2 * d}, c.act, Activation::kIdentity, rng);
  for (int k = 0; k < c.ensemble; ++k) {
    const std::string n = "wm.prior" + std::to_string(k);
    prior_base.emplace_back(n + ".base", std::vector<int>{c.deter, c.hidden, 2 * d}, c.act,
                            Activation::kIdentity, rng);
    const double lim = std::sqrt(6.0 / (d + c.d_g));
    gate_wg.emplace_back(n + ".wg", uniform_matrix(rng, d, c.d_g, -lim, lim));
    gate_c.emplace_back(n + ".wc", c.d_g, c.d_g, rng);
  }
  decoder = nn::Mlp("wm.dec", {d, c.hidden, c.obs_dim}, c.act, Activation::kIdentity, rng);
  reward = nn::Mlp("wm.rew", {d, c.hidden, 1}, c.act, Activation::kIdentity, rng);
  projector = nn::Mlp("wm.f", {d, c.hidden, c.d_g}, Activation::kRelu, Activation::kIdentity, rng);
  grounding_head = nn::Mlp("wm.psi", {c.deter, c.hidden, c.d_g}, c.act, Activation::kIdentity, rng);
  proj = nn::Linear("wm.proj", c.n_feat, c.d_g, rng);
  if (oracle) {
    require_dims(oracle->d_g() == c.d_g && oracle->n_feat() == c.n_feat,
                 "WorldModel: oracle dims differ from config");
    proj.weight.value = oracle->w_proj;
    proj.bias.value = oracle->b_proj.transpose();
  }
  const_c = Parameter("wm.const_c", standard_normal(rng, 1, c.d_g));
  learned_ground = nn::Mlp("wm.lground", {c.obs_dim, c.hidden, c.d_g}, c.act, Activation::kIdentity, rng);
  msae = Msae("wm.msae", c.semantic_dim, c.msae_window, c.hidden, c.d_g, c.msae_attention, rng);
}

ParamRefs WorldModel::params() {
  ParamRefs r;
  gru.collect(r);
  encoder.collect(r);
  for (int k = 0; k < K(); ++k) {
    prior_base[k].collect(r);
    r.push_back(&gate_wg[k]);
    gate_c[k].collect(r);
  }
  decoder.collect(r);
  reward.collect(r);
  projector.collect(r);
  grounding_head.collect(r);
  switch (cfg.grounding) {
    case GroundingMode::kOracle:
      if (!proj_frozen) proj.collect(r);
      break;
    case GroundingMode::kConstant: r.push_back(&const_c); break;
    case GroundingMode::kLearned: learned_ground.collect(r); break;
    case GroundingMode::kMsae: break;
  }
  return r;
}

ParamRefs WorldModel::all_params() {
  bool saved = proj_frozen;
  proj_frozen = false;
  ParamRefs r = params();
  proj_frozen = saved;
  if (cfg.grounding != GroundingMode::kOracle) proj.collect(r);
  if (cfg.grounding != GroundingMode::kConstant) r.push_back(&const_c);
  if (cfg.grounding != GroundingMode::kLearned) learned_ground.collect(r);
  msae.collect(r);
  return r;
}

GaussianVar WorldModel::posterior(Tape& t, Var h, Var o) {
  require_dims(h.cols() == cfg.deter && o.cols() == cfg.obs_dim, "posterior: input dims");
  return split_gaussian(encoder.forward(t, ad::concat_cols({h, o})), cfg.latent);
}

Var WorldModel::prior_base_mean(Tape& t, int k, Var h) {
  require(k >= 0 && k < K(), "prior: member index out of range");
  return ad::slice_cols(prior_base[k].forward(t, h), 0, cfg.latent);
}

Var WorldModel::gate_residual(Tape& t, int k, Var c) {
  require(k >= 0 && k < K(), "prior: member index out of range");
  require_dims(c.cols() == cfg.d_g, "prior: grounding dim mismatch");
  Var gate = ad::sigmoid(gate_c[k].forward(t, c));
  return ad::matmul_nt(gate, t.param(gate_wg[k]));
}

GaussianVar WorldModel::prior(Tape& t, int k, Var h, Var c) {
  require(k >= 0 && k < K(), "prior: member index out of range");
  require_dims(h.cols() == cfg.deter, "prior: h dim mismatch");
  GaussianVar base = split_gaussian(prior_base[k].forward(t, h), cfg.latent);
  return {ad::add(base.mean, gate_residual(t, k, c)), base.log_std};
}

Var WorldModel::decode(Tape& t, Var z) { return decoder.forward(t, z); }
Var WorldModel::predict_reward(Tape& t, Var z) { return reward.forward(t, z); }
Var WorldModel::predict_grounding(Tape& t, Var h) { return grounding_head.forward(t, h); }
Var WorldModel::project(Tape& t, Var z) { return projector.forward(t, z); }

std::pair<Var, Var> WorldModel::log_likelihoods(Tape& t, Var z, Var o, Var r) {
  require_dims(z.cols() == cfg.latent && o.cols() == cfg.obs_dim && r.cols() == 1,
               "log_likelihoods: input dims");
  Var lo = ad::add_scalar(ad::scale(ad::row_sum(ad::square(ad::sub(decode(t, z), o))), -0.5),
                          -0.5 * cfg.obs_dim * kLog2Pi);
  Var lr = ad::add_scalar(ad::scale(ad::square(ad::sub(predict_reward(t, z), r)), -0.5),
                          -0.5 * kLog2Pi);
  return {lo, lr};
}

Var WorldModel::ground_from_features(Tape& t, Var feat) {
  return ad::layer_norm_rows(proj.forward(t, feat));
}

Var WorldModel::ground_constant(Tape& t, Eigen::Index batch) {
  return ad::layer_norm_rows(ad::concat_rows(std::vector<Var>(batch, t.param(const_c))));
}

Var WorldModel::ground_learned(Tape& t, Var obs) {
  return ad::layer_norm_rows(learned_ground.forward(t, obs));
}

Var WorldModel::ground_msae(Tape& t, Var windows) {
  Tensor none = Tensor::Zero(windows.rows(), msae.window());
  return ad::layer_norm_rows(msae.embed(t, windows, none));
}

GaussianParams WorldModel::posterior(const Tensor& h, const Tensor& o) const {
  require_dims(h.cols() == cfg.deter && o.cols() == cfg.obs_dim, "posterior: input dims");
  Tensor in(h.rows(), h.cols() + o.cols());
  in << h, o;
  return split_gaussian(encoder.forward(in), cfg.latent);
}

GaussianParams WorldModel::prior(int k, const Tensor& h, const Tensor& c) const {
  require(k >= 0 && k < K(), "prior: member index out of range");
  require_dims(h.cols() == cfg.deter && c.cols() == cfg.d_g, "prior: input dims");
  GaussianParams g = split_gaussian(prior_base[k].forward(h), cfg.latent);
  g.mean += sigmoid(gate_c[k].forward(c)) * gate_wg[k].value.transpose();
  return g;
}

Tensor WorldModel::predict_grounding(const Tensor& h) const { return grounding_head.forward(h); }
Tensor WorldModel::predict_reward(const Tensor& z) const { return reward.forward(z); }

Tensor WorldModel::ground_from_features(const Tensor& feat) const {
  return layer_norm_rows(proj.forward(feat));
}

Tensor WorldModel::ground_constant(Eigen::Index batch) const {
  return layer_norm_rows(const_c.value.replicate(batch, 1));
}

Tensor WorldModel::ground_learned(const Tensor& obs) const {
  return layer_norm_rows(learned_ground.forward(obs));
}

Tensor WorldModel::ground_msae(const Tensor& windows) const {
  return layer_norm_rows(msae.embed(windows, Tensor::Zero(windows.rows(), msae.window())));
}

Tensor WorldModel::gru_step(const Tensor& h, const Tensor& z, const Tensor& a) const {
  Tensor x(z.rows(), z.cols() + a.cols());
  x << z, a;
  return gru.step(h, x);
}

Var consistency_loss(WorldModel& wm, Tape& t, Var z, Var c) {
  require_dims(z.rows() == c.rows(), "consistency_loss: batch sizes differ");
  require_dims(c.cols() == wm.cfg.d_g, "consistency_loss: grounding dim mismatch");
  return ad::mean(ad::row_sum(ad::square(ad::sub(wm.project(t, z), ad::stop_gradient(c)))));
}

// ---------------------------------------------------------- Distiller

Distiller::Distiller(const std::string& name, int obs_dim, int hidden, int d_g, double tau_,
                     Rng& rng, nn::AdamConfig adam)
    : student(name, {obs_dim, hidden, d_g}, Activation::kTanh, Activation::kIdentity, rng),
      tau(tau_) {
  opt = nn::AdamState(student.params(), adam);
}

Tensor Distiller::forward(const Tensor& obs) const { return student.forward(obs); }

Tensor Distiller::grounding(const WorldModel& wm, const Tensor& obs) const {
  Tensor y = forward(obs);
  y.rowwise() += wm.proj.bias.value.row(0);
  return layer_norm_rows(y);
}

Var Distiller::grounding(Tape& t, WorldModel& wm, Var obs) {
  Tape::FrozenScope frozen(t);
  return ad::layer_norm_rows(ad::add(student.forward(t, obs), t.param(wm.proj.bias)));
}

Tensor distill_target(const WorldModel& wm, const env::GroundingOracle& oracle,
                      const Tensor& semantic) {
  Tensor feat(semantic.rows(), oracle.n_feat());
  for (Eigen::Index b = 0; b < semantic.rows(); ++b)
    feat.row(b) = oracle.features(semantic.row(b).transpose()).transpose();
  return feat * wm.proj.weight.value.transpose();
}

double distill_loss(const Distiller& d, const Tensor& obs, const Tensor& target) {
  require_dims(obs.rows() == target.rows(), "distill_loss: batch sizes differ");
  return (d.forward(obs) - target).rowwise().squaredNorm().mean();
}

double distill_step(Distiller& d, const Tensor& obs, const Tensor& target) {
  require(!d.retired, "distill_step called after the teacher was retired");
  require_dims(obs.rows() == target.rows() && target.cols() == d.student.out_dim(),
               "distill_step: batch shape mismatch");
  Tape t;
  Var pred = d.student.forward(t, t.constant(obs));
  Var loss = ad::mean(ad::row_sum(ad::square(ad::sub(pred, ad::stop_gradient(t.constant(target))))));
  auto params = d.student.params();
  ad::zero_grads(params);
  t.backward(loss);
  nn::adam_step(d.opt, params);
  const double l = loss.scalar();
  d.running_loss = d.running_loss < 0 ? l : (1.0 - d.ema_rate) * d.running_loss + d.ema_rate * l;
  ++d.steps;
  if (d.running_loss < d.tau) d.retired = true;
  return l;
}

}  // namespace girl::wm
