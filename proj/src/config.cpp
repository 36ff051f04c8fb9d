#include "girl/config.hpp"

#include "girl/error.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace girl {

namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
    require(j_.is_object(), scope_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ContractViolation(scope_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      require(seen_.count(k) != 0, "unknown config key '" + scope_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string scope_;
  std::set<std::string> seen_;
};

void read_ablations(const json& j, Ablations& a) {
  Reader r(j, "ablation");
  r.get("no_ground", a.no_ground);
  r.get("fixed_beta", a.fixed_beta);
  r.get("no_intrinsic", a.no_intrinsic);
  r.get("vae_style", a.vae_style);
  r.get("proprio_msae", a.proprio_msae);
  r.get("distill", a.distill);
  r.finish();
}

void read_desk(const json& j, DeskConfig& d) {
  Reader r(j, "desk");
  r.get("hidden", d.hidden);
  r.get("n_feat", d.n_feat);
  r.get("student_hidden", d.student_hidden);
  r.get("iterations", d.iterations);
  r.get("prefill_steps", d.prefill_steps);
  r.get("env_steps_per_iter", d.env_steps_per_iter);
  r.get("imagination_phases", d.imagination_phases);
  r.get("imagination_starts", d.imagination_starts);
  r.get("eig_samples", d.eig_samples);
  r.get("eig_positions", d.eig_positions);
  r.get("intrinsic_samples", d.intrinsic_samples);
  r.get("msae_pretrain_steps", d.msae_pretrain_steps);
  r.get("msae_batch", d.msae_batch);
  r.get("distill_batch", d.distill_batch);
  r.get("distill_max_steps", d.distill_max_steps);
  r.get("eval_episodes", d.eval_episodes);
  r.get("dfm_horizon", d.dfm_horizon);
  r.get("dfm_particles", d.dfm_particles);
  r.get("dfm_starts", d.dfm_starts);
  r.get("dfm_trajectories", d.dfm_trajectories);
  r.get("dfm_policy", d.dfm_policy);
  r.get("checkpoint_every", d.checkpoint_every);
  r.get("msae_attention", d.msae_attention);
  r.get("spectral_norm", d.spectral_norm);
  r.finish();
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  require(d >= 1, "config.d must be >= 1");
  require(recurrent_dim >= 1, "config.recurrent_dim must be >= 1");
  require(d_g >= 2, "config.d_g must be >= 2");
  require(msae_W >= 1, "config.msae_W must be >= 1");
  require(msae_mask_rate >= 0 && msae_mask_rate < 1, "config.msae_mask_rate must lie in [0, 1)");
  require(K >= 1, "config.K must be >= 1");
  require(H >= 1, "config.H must be >= 1");
  require(lambda >= 0 && lambda <= 1, "config.lambda must lie in [0, 1]");
  require(gamma > 0 && gamma < 1, "config.gamma must lie in (0, 1)");
  require(0 < beta_min && beta_min <= beta_max, "config.beta bounds out of order");
  require(0 < delta_min && delta_min <= delta_max, "config.delta bounds out of order");
  require(eta_delta > 0 && eta_beta > 0, "config.eta_* must be positive");
  require(tau_EIG > 0 && tau_RPL > 0, "config.tau_* must be positive");
  require(mu >= 0 && alpha >= 0, "config.mu and config.alpha must be non-negative");
  require(replay_capacity >= 1, "config.replay_capacity must be >= 1");
  require(batch_sequences >= 1 && batch_length >= 2, "config batch shape too small");
  require(lr >= 0 && actor_lr >= 0 && critic_lr >= 0 && msae_lr >= 0 && distill_lr >= 0,
          "config learning rates must be non-negative");
  require(seeds >= 1 && N_bs >= 1, "config.seeds and config.N_bs must be >= 1");
  require(tau_distill > 0, "config.tau_distill must be positive");
  require(beta0 >= beta_min && beta0 <= beta_max, "config.beta0 outside [beta_min, beta_max]");
  require(delta0 < 0 || (delta0 >= delta_min && delta0 <= delta_max),
          "config.delta0 outside [delta_min, delta_max]");
  require(entropy_coef >= 0, "config.entropy_coef must be non-negative");
  require(target_rate > 0 && target_rate <= 1, "config.target_rate must lie in (0, 1]");
  int grounding_modes = ablation.no_ground + ablation.vae_style + ablation.proprio_msae;
  require(grounding_modes <= 1, "ablations no_ground, vae_style, proprio_msae are exclusive");
  require(!ablation.distill || grounding_modes == 0,
          "ablation.distill needs the oracle grounding path");
  require(desk.hidden >= 1 && desk.n_feat >= 1 && desk.student_hidden >= 1, "desk widths");
  require(desk.iterations >= 0 && desk.prefill_steps >= batch_length, "desk.prefill_steps < batch_length");
  require(desk.env_steps_per_iter >= 1 && desk.imagination_phases >= 0, "desk loop sizes");
  require(desk.imagination_starts >= 1 && desk.eig_samples >= 1 && desk.eig_positions >= 1,
          "desk sample counts");
  require(desk.eval_episodes >= 1, "desk.eval_episodes must be >= 1");
  require(desk.dfm_horizon >= 1 && desk.dfm_particles >= 1 && desk.dfm_starts >= 1 &&
              desk.dfm_trajectories >= 1,
          "desk dfm settings");
  require(desk.dfm_policy == "agent" || desk.dfm_policy == "goal-path",
          "desk.dfm_policy must be agent or goal-path");
  require(desk.dfm_policy == "agent" || env.kind == env::Kind::kSparseChain,
          "desk.dfm_policy goal-path needs the sparse-chain env");
  require(env.horizon >= desk.dfm_horizon, "env.horizon must be >= desk.dfm_horizon");
  require(replay_capacity >= batch_length, "config.replay_capacity < batch_length");
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "config");
  if (r.has("env")) c.env_json = j.at("env");
  r.get("seed", c.seed);
  r.get("d", c.d);
  r.get("recurrent_dim", c.recurrent_dim);
  r.get("d_g", c.d_g);
  r.get("msae_W", c.msae_W);
  r.get("msae_mask_rate", c.msae_mask_rate);
  r.get("K", c.K);
  r.get("H", c.H);
  r.get("lambda", c.lambda);
  r.get("gamma", c.gamma);
  r.get("beta_min", c.beta_min);
  r.get("beta_max", c.beta_max);
  r.get("delta_min", c.delta_min);
  r.get("delta_max", c.delta_max);
  r.get("eta_delta", c.eta_delta);
  r.get("eta_beta", c.eta_beta);
  r.get("tau_EIG", c.tau_EIG);
  r.get("tau_RPL", c.tau_RPL);
  r.get("mu", c.mu);
  r.get("alpha", c.alpha);
  r.get("replay_capacity", c.replay_capacity);
  r.get("batch_sequences", c.batch_sequences);
  r.get("batch_length", c.batch_length);
  r.get("lr", c.lr);
  r.get("seeds", c.seeds);
  r.get("N_bs", c.N_bs);
  r.get("tau_distill", c.tau_distill);
  r.get("actor_lr", c.actor_lr);
  r.get("critic_lr", c.critic_lr);
  r.get("msae_lr", c.msae_lr);
  r.get("distill_lr", c.distill_lr);
  r.get("grad_clip", c.grad_clip);
  r.get("entropy_coef", c.entropy_coef);
  r.get("target_rate", c.target_rate);
  r.get("beta0", c.beta0);
  r.get("delta0", c.delta0);
  r.get("delta_warmup_steps", c.delta_warmup_steps);
  r.get("distill_start_steps", c.distill_start_steps);
  if (r.has("ablation")) read_ablations(j.at("ablation"), c.ablation);
  if (r.has("desk")) read_desk(j.at("desk"), c.desk);
  r.finish();
  // The task itself does not depend on the agent seed: paired seeds share it.
  c.env = env::spec_from_json(c.env_json, 0);
  c.env_json = env::spec_to_json(c.env);
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ContractViolation("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
  const auto& a = c.ablation;
  const auto& d = c.desk;
  return {
      {"env", env::spec_to_json(c.env)},
      {"seed", c.seed},
      {"d", c.d},
      {"recurrent_dim", c.recurrent_dim},
      {"d_g", c.d_g},
      {"msae_W", c.msae_W},
      {"msae_mask_rate", c.msae_mask_rate},
      {"K", c.K},
      {"H", c.H},
      {"lambda", c.lambda},
      {"gamma", c.gamma},
      {"beta_min", c.beta_min},
      {"beta_max", c.beta_max},
      {"delta_min", c.delta_min},
      {"delta_max", c.delta_max},
      {"eta_delta", c.eta_delta},
      {"eta_beta", c.eta_beta},
      {"tau_EIG", c.tau_EIG},
      {"tau_RPL", c.tau_RPL},
      {"mu", c.mu},
      {"alpha", c.alpha},
      {"replay_capacity", c.replay_capacity},
      {"batch_sequences", c.batch_sequences},
      {"batch_length", c.batch_length},
      {"lr", c.lr},
      {"seeds", c.seeds},
      {"N_bs", c.N_bs},
      {"tau_distill", c.tau_distill},
      {"actor_lr", c.actor_lr},
      {"critic_lr", c.critic_lr},
      {"msae_lr", c.msae_lr},
      {"distill_lr", c.distill_lr},
      {"grad_clip", c.grad_clip},
      {"entropy_coef", c.entropy_coef},
      {"target_rate", c.target_rate},
      {"beta0", c.beta0},
      {"delta0", c.delta0},
      {"delta_warmup_steps", c.delta_warmup_steps},
      {"distill_start_steps", c.distill_start_steps},
      {"ablation",
       {{"no_ground", a.no_ground},
        {"fixed_beta", a.fixed_beta},
        {"no_intrinsic", a.no_intrinsic},
        {"vae_style", a.vae_style},
        {"proprio_msae", a.proprio_msae},
        {"distill", a.distill}}},
      {"desk",
       {{"hidden", d.hidden},
        {"n_feat", d.n_feat},
        {"student_hidden", d.student_hidden},
        {"iterations", d.iterations},
        {"prefill_steps", d.prefill_steps},
        {"env_steps_per_iter", d.env_steps_per_iter},
        {"imagination_phases", d.imagination_phases},
        {"imagination_starts", d.imagination_starts},
        {"eig_samples", d.eig_samples},
        {"eig_positions", d.eig_positions},
        {"intrinsic_samples", d.intrinsic_samples},
        {"msae_pretrain_steps", d.msae_pretrain_steps},
        {"msae_batch", d.msae_batch},
        {"distill_batch", d.distill_batch},
        {"distill_max_steps", d.distill_max_steps},
        {"eval_episodes", d.eval_episodes},
        {"dfm_horizon", d.dfm_horizon},
        {"dfm_particles", d.dfm_particles},
        {"dfm_starts", d.dfm_starts},
        {"dfm_trajectories", d.dfm_trajectories},
        {"dfm_policy", d.dfm_policy},
        {"checkpoint_every", d.checkpoint_every},
        {"msae_attention", d.msae_attention},
        {"spectral_norm", d.spectral_norm}}},
  };
}

std::string config_hash(const RunConfig& c) {
  const std::string s = config_to_json(c).dump();
  uint64_t h = 0xCBF29CE484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace girl
