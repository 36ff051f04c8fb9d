#pragma once

// Latent world model: recurrent state h, stochastic latent z, posterior
// q(z | h, o), an ensemble of gated priors p_k(z | h, c), unit-variance
// observation and reward heads, the consistency projector f, the imagined
// grounding head Psi(h), and the grounding sources (frozen oracle features,
// learned constant, learned encoder, masked state autoencoder, distilled
// student).

#include "girl/autodiff.hpp"
#include "girl/envs.hpp"
#include "girl/gaussian.hpp"
#include "girl/nn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace girl::wm {

using ad::ParamRefs;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using nn::Activation;

// Learned latents keep log-std inside this band through a sigmoid squash,
// which is always inside the GaussianDiag clamp.
inline constexpr double kLatentLogStdMin = -3.0;
inline constexpr double kLatentLogStdMax = 1.0;

enum class GroundingMode {
  kOracle,    // LN(W_proj Phi(semantic) + b_proj), Phi frozen
  kConstant,  // learned constant embedding (no-ground ablation)
  kLearned,   // LN(encoder(obs)), trained jointly (vae-style ablation)
  kMsae,      // LN(MSAE(window of semantic states)), pretrained then frozen
};

GroundingMode grounding_mode_from_string(const std::string& s);
std::string to_string(GroundingMode m);

struct WorldModelConfig {
  int obs_dim = 4;
  int action_dim = 2;
  int semantic_dim = 4;
  int latent = 32;   // d
  int deter = 64;    // recurrent width
  int hidden = 64;   // MLP width
  int d_g = 128;     // grounding width
  int ensemble = 5;  // K
  int n_feat = 64;   // frozen feature width of the oracle backbone
  GroundingMode grounding = GroundingMode::kOracle;
  int msae_window = 16;
  double msae_mask_rate = 0.4;
  bool msae_attention = false;
  int student_hidden = 64;
  Activation act = Activation::kElu;
};

struct GaussianParams {
  Tensor mean;     // B x d
  Tensor log_std;  // B x d

  GaussianDiag row(Eigen::Index b) const {
    return GaussianDiag(mean.row(b).transpose(), log_std.row(b).transpose());
  }
};

// Masked state autoencoder over windows of W semantic states. Windows are
// flattened row-major (position-major), B x (W * d_s); masks are B x W with
// 1 marking a masked position.
class Msae {
 public:
  Msae() = default;
  Msae(const std::string& name, int state_dim, int window, int hidden, int d_g, bool attention,
       Rng& rng);

  int window() const { return window_; }
  int state_dim() const { return state_dim_; }
  int d_g() const { return proj_.out_dim(); }
  bool attention() const { return attention_; }

  // Embedding from the unmasked positions, masked ones replaced by the
  // learned token: B x d_g.
  Var embed(Tape& t, Var windows, const Tensor& mask);
  Tensor embed(const Tensor& windows, const Tensor& mask) const;
  // Reconstruction of the full window, B x (W * d_s).
  Var reconstruct(Tape& t, Var windows, const Tensor& mask);
  Var loss(Tape& t, Var windows, const Tensor& mask);

  Parameter& mask_token() { return token_; }
  void collect(ParamRefs& out);

 private:
  Var encode(Tape& t, Var windows, const Tensor& mask);
  Tensor encode(const Tensor& windows, const Tensor& mask) const;
  Var attend(Tape& t, Var x);
  Tensor attend(const Tensor& x) const;

  int state_dim_ = 0;
  int window_ = 0;
  bool attention_ = false;
  Parameter token_;  // 1 x d_s
  nn::Linear wq_, wk_, wv_;
  nn::Mlp body_;
  nn::Linear recon_;
  nn::Linear proj_;
};

// Mean squared reconstruction error over masked positions; 0 when the mask
// is empty. `mask` is B x W.
double msae_loss_value(const Tensor& recon, const Tensor& windows, const Tensor& mask, int state_dim);
// Bernoulli(rate) mask, B x W.
Tensor random_mask(Rng& rng, int batch, int window, double rate);

struct WorldModel {
  WorldModelConfig cfg;

  nn::Gru gru;                 // input [z, a]
  nn::Mlp encoder;             // [h, o] -> (mean, raw log-std)
  std::vector<nn::Mlp> prior_base;  // h -> (mean0, raw log-std), per member
  std::vector<Parameter> gate_wg;   // d x d_g
  std::vector<nn::Linear> gate_c;   // d_g -> d_g (W_c, b_c)
  nn::Mlp decoder;             // z -> o
  nn::Mlp reward;              // z -> r
  nn::Mlp projector;           // f: z -> d_g
  nn::Mlp grounding_head;      // Psi: h -> d_g
  nn::Linear proj;             // W_proj, b_proj over oracle features
  Parameter const_c;           // 1 x d_g, constant grounding
  nn::Mlp learned_ground;      // obs -> d_g
  Msae msae;
  bool proj_frozen = false;

  WorldModel() = default;
  // `oracle` seeds W_proj, b_proj; may be null for modes that do not use it.
  WorldModel(const WorldModelConfig& cfg, const env::GroundingOracle* oracle, Rng& rng);

  int K() const { return static_cast<int>(prior_base.size()); }

  // Every trainable parameter of the model. Frozen pieces (the projection
  // once distillation starts, the pretrained MSAE) are excluded.
  ParamRefs params();
  // Every parameter including frozen ones, for checkpoints.
  ParamRefs all_params();

  // Taped pieces.
  GaussianVar posterior(Tape& t, Var h, Var o);
  GaussianVar prior(Tape& t, int k, Var h, Var c);
  Var prior_base_mean(Tape& t, int k, Var h);
  Var gate_residual(Tape& t, int k, Var c);
  Var decode(Tape& t, Var z);
  Var predict_reward(Tape& t, Var z);
  Var predict_grounding(Tape& t, Var h);
  Var project(Tape& t, Var z);
  // Per-row log N(o; decoder(z), I) and log N(r; reward(z), 1), each B x 1.
  std::pair<Var, Var> log_likelihoods(Tape& t, Var z, Var o, Var r);
  // Grounding from oracle features (B x n_feat): LN(W_proj feat + b_proj).
  Var ground_from_features(Tape& t, Var feat);
  Var ground_constant(Tape& t, Eigen::Index batch);
  Var ground_learned(Tape& t, Var obs);
  Var ground_msae(Tape& t, Var windows);

  // Plain-value pieces.
  GaussianParams posterior(const Tensor& h, const Tensor& o) const;
  GaussianParams prior(int k, const Tensor& h, const Tensor& c) const;
  Tensor predict_grounding(const Tensor& h) const;
  Tensor predict_reward(const Tensor& z) const;
  Tensor ground_from_features(const Tensor& feat) const;
  Tensor ground_constant(Eigen::Index batch) const;
  Tensor ground_learned(const Tensor& obs) const;
  Tensor ground_msae(const Tensor& windows) const;
  Tensor gru_step(const Tensor& h, const Tensor& z, const Tensor& a) const;
};

// Mean over the batch of |f(z) - sg(c)|^2 summed over grounding dims.
Var consistency_loss(WorldModel& wm, Tape& t, Var z, Var c);

// Squash raw outputs into [kLatentLogStdMin, kLatentLogStdMax].
Var squash_log_std(Var raw);
Tensor squash_log_std(const Tensor& raw);

// Student network replacing the teacher projection W_proj Phi(o).
struct Distiller {
  nn::Mlp student;  // obs -> d_g, tanh hidden layer
  double tau = 0.05;
  double ema_rate = 0.1;
  double running_loss = -1.0;  // < 0 until the first step
  long steps = 0;
  bool retired = false;
  nn::AdamState opt;

  Distiller() = default;
  Distiller(const std::string& name, int obs_dim, int hidden, int d_g, double tau, Rng& rng,
            nn::AdamConfig adam);

  // Plain projected output Phi_hat(o), B x d_g.
  Tensor forward(const Tensor& obs) const;
  // Grounding routed through the student: LN(Phi_hat(o) + b_proj).
  Tensor grounding(const WorldModel& wm, const Tensor& obs) const;
  Var grounding(Tape& t, WorldModel& wm, Var obs);
};

// Teacher target W_proj Phi(semantic) without bias, B x d_g.
Tensor distill_target(const WorldModel& wm, const env::GroundingOracle& oracle,
                      const Tensor& semantic);

// One gradient step on mean |student(o) - sg(target)|^2. Updates the running
// mean and retires the teacher once it drops below tau. Throws
// ContractViolation after retirement. Returns the batch loss.
double distill_step(Distiller& d, const Tensor& obs, const Tensor& target);
double distill_loss(const Distiller& d, const Tensor& obs, const Tensor& target);

}  // namespace girl::wm
