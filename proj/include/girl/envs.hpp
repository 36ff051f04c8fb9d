#pragma once

// Vector-observation toy environments with known dynamics, plus the frozen
// grounding oracle that stands in for a pretrained visual backbone.

#include "girl/rng.hpp"

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include <string>

namespace girl::env {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class Kind { kLinearGaussian, kPendulum, kSparseChain };

Kind kind_from_string(const std::string& s);
std::string to_string(Kind k);

struct EnvSpec {
  Kind kind = Kind::kLinearGaussian;
  int state_dim = 4;
  int action_dim = 2;
  int horizon = 100;
  int distractor_dim = 0;
  double action_bound = 1.0;

  // linear-gaussian: s' = A s + B a + noise * eps, reward
  // exp(-|s|^2 / (2 reward_width^2))
  Mat A;
  Mat B;
  double noise = 0.05;
  double reward_width = 1.0;

  // pendulum-like: explicit Euler, reward (1 + cos theta) / 2
  double length = 1.0;
  double gravity = 10.0;
  double max_torque = 2.0;
  double dt = 0.05;
  double max_speed = 8.0;

  // sparse-chain: position on [0, chain_length], moves at most `step_size`
  // per step, reward 1 iff position >= goal_index.
  double chain_length = 60.0;
  double goal_index = 50.0;
  double step_size = 1.0;
  double start_spread = 0.0;  // start position uniform in [0, start_spread]

  int semantic_dim() const;
  int obs_dim() const { return semantic_dim() + distractor_dim; }
  // Fewest steps that can reach the goal from position 0 (sparse-chain only).
  int shortest_solve_length() const;
  // Throws ContractViolation on malformed specs (e.g. spectral radius of A
  // above 1.05, wrong matrix shapes).
  void validate() const;
};

// Defaults for each kind; the linear system is drawn from `seed`.
EnvSpec make_spec(Kind kind, uint64_t seed = 0);
// Same dynamics and reward with a per-episode nuisance block appended to
// the observation. distractor_dim must be >= 1.
EnvSpec make_distractor_variant(const EnvSpec& spec, int distractor_dim);

EnvSpec spec_from_json(const nlohmann::json& j, uint64_t seed);
nlohmann::json spec_to_json(const EnvSpec& spec);

struct Observation {
  Vec semantic;
  Vec distractor;

  Vec full() const;
};

struct StepResult {
  Vec state;
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

// Single episode runner. Distractors are redrawn by reset() only.
class Env {
 public:
  explicit Env(EnvSpec spec);

  Observation reset(Rng& rng);
  StepResult step(const Vec& action, Rng& rng);

  const EnvSpec& spec() const { return spec_; }
  const Vec& state() const { return state_; }
  int t() const { return t_; }
  Observation observe() const;

 private:
  EnvSpec spec_;
  Vec state_;
  Vec distractor_;
  int t_ = 0;
};

// Pure transition: next state, reward and done flag for `t` steps elapsed
// after this one. Actions are clipped to the declared bound.
StepResult env_step(const EnvSpec& spec, const Vec& state, const Vec& action, int t_next,
                    const Vec& distractor, Rng& rng);
Vec semantic_of(const EnvSpec& spec, const Vec& state);

// Frozen random features of the semantic block followed by a projection and
// layer norm: c = LN(W_proj tanh(A_feat s) + b_proj).
struct GroundingOracle {
  Mat feat;    // n_feat x semantic_dim, frozen
  Mat w_proj;  // d_g x n_feat
  Vec b_proj;  // d_g

  GroundingOracle() = default;
  GroundingOracle(int semantic_dim, int n_feat, int d_g, uint64_t seed);

  int d_g() const { return static_cast<int>(w_proj.rows()); }
  int n_feat() const { return static_cast<int>(feat.rows()); }
  // tanh(A_feat s), the frozen backbone output.
  Vec features(const Vec& semantic) const;
  Vec grounding_vector(const Observation& obs) const;
  Vec grounding_vector(const Vec& semantic) const;
};

Vec layer_norm(const Vec& x, double eps = 1e-5);

}  // namespace girl::env
