#include "girl/envs.hpp"

#include "girl/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace girl::env {

Kind kind_from_string(const std::string& s) {
  if (s == "linear-gaussian") return Kind::kLinearGaussian;
  if (s == "pendulum-like") return Kind::kPendulum;
  if (s == "sparse-chain") return Kind::kSparseChain;
  throw ContractViolation("unknown env kind '" + s + "'");
}

std::string to_string(Kind k) {
  switch (k) {
    case Kind::kLinearGaussian: return "linear-gaussian";
    case Kind::kPendulum: return "pendulum-like";
    case Kind::kSparseChain: return "sparse-chain";
  }
  return "?";
}

int EnvSpec::semantic_dim() const {
  switch (kind) {
    case Kind::kLinearGaussian: return state_dim;
    case Kind::kPendulum: return 3;
    case Kind::kSparseChain: return 1;
  }
  return 0;
}

int EnvSpec::shortest_solve_length() const {
  require(kind == Kind::kSparseChain, "shortest_solve_length: not a sparse-chain spec");
  return static_cast<int>(std::ceil(goal_index / step_size - 1e-12));
}

void EnvSpec::validate() const {
  require(horizon >= 1, "env: horizon must be >= 1");
  require(distractor_dim >= 0, "env: distractor_dim must be >= 0");
  require(action_bound > 0, "env: action_bound must be positive");
  switch (kind) {
    case Kind::kLinearGaussian: {
      require(state_dim >= 1 && action_dim >= 1, "linear-gaussian: empty state or action");
      require(A.rows() == state_dim && A.cols() == state_dim, "linear-gaussian: A shape");
      require(B.rows() == state_dim && B.cols() == action_dim, "linear-gaussian: B shape");
      require(noise >= 0, "linear-gaussian: negative noise");
      require(reward_width > 0, "linear-gaussian: reward_width must be positive");
      double radius = A.eigenvalues().cwiseAbs().maxCoeff();
      require(radius <= 1.05 + 1e-12, "linear-gaussian: spectral radius of A exceeds 1.05");
      break;
    }
    case Kind::kPendulum:
      require(state_dim == 2 && action_dim == 1, "pendulum-like: state 2, action 1");
      require(length > 0 && dt > 0 && max_speed > 0, "pendulum-like: bad physical constants");
      break;
    case Kind::kSparseChain:
      require(state_dim == 1 && action_dim == 1, "sparse-chain: state 1, action 1");
      require(goal_index > 0 && goal_index <= chain_length, "sparse-chain: goal outside chain");
      require(step_size > 0, "sparse-chain: step_size must be positive");
      require(start_spread >= 0 && start_spread < goal_index, "sparse-chain: bad start_spread");
      break;
  }
}

EnvSpec make_spec(Kind kind, uint64_t seed) {
  EnvSpec s;
  s.kind = kind;
  switch (kind) {
    case Kind::kLinearGaussian: {
      s.state_dim = 4;
      s.action_dim = 2;
      s.horizon = 100;
      Rng rng = make_rng(seed, "env.linear");
      Eigen::HouseholderQR<Mat> qr(standard_normal(rng, 4, 4));
      Mat q = qr.householderQ();
      s.A = 0.95 * q;
      s.B = standard_normal(rng, 4, 2) * 0.5;
      s.noise = 0.05;
      break;
    }
    case Kind::kPendulum:
      s.state_dim = 2;
      s.action_dim = 1;
      s.horizon = 100;
      break;
    case Kind::kSparseChain:
      s.state_dim = 1;
      s.action_dim = 1;
      s.goal_index = 50.0;
      s.chain_length = 60.0;
      s.horizon = 100;
      break;
  }
  s.validate();
  return s;
}

EnvSpec make_distractor_variant(const EnvSpec& spec, int distractor_dim) {
  require(distractor_dim >= 1, "make_distractor_variant: distractor_dim must be >= 1");
  EnvSpec s = spec;
  s.distractor_dim = distractor_dim;
  return s;
}

namespace {

Mat mat_from_json(const nlohmann::json& j) {
  const auto rows = j.size();
  require(rows > 0, "env: empty matrix");
  Mat m(rows, j[0].size());
  for (size_t r = 0; r < rows; ++r) {
    require(j[r].size() == static_cast<size_t>(m.cols()), "env: ragged matrix");
    for (size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

nlohmann::json mat_to_json(const Mat& m) {
  auto j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

}  // namespace

EnvSpec spec_from_json(const nlohmann::json& j, uint64_t seed) {
  static const char* known[] = {"kind",       "horizon",      "distractor_dim", "action_bound",
                                "A",          "B",            "noise",          "reward_width", "length",
                                "gravity",    "max_torque",   "dt",             "max_speed",
                                "chain_length", "goal_index", "step_size",      "start_spread"};
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    require(ok, "env: unknown key '" + k + "'");
  }
  EnvSpec s = make_spec(kind_from_string(j.value("kind", std::string("linear-gaussian"))), seed);
  s.horizon = j.value("horizon", s.horizon);
  s.distractor_dim = j.value("distractor_dim", s.distractor_dim);
  s.action_bound = j.value("action_bound", s.action_bound);
  if (j.contains("A")) s.A = mat_from_json(j["A"]);
  if (j.contains("B")) s.B = mat_from_json(j["B"]);
  if (s.kind == Kind::kLinearGaussian) {
    s.state_dim = static_cast<int>(s.A.rows());
    s.action_dim = static_cast<int>(s.B.cols());
  }
  s.noise = j.value("noise", s.noise);
  s.reward_width = j.value("reward_width", s.reward_width);
  s.length = j.value("length", s.length);
  s.gravity = j.value("gravity", s.gravity);
  s.max_torque = j.value("max_torque", s.max_torque);
  s.dt = j.value("dt", s.dt);
  s.max_speed = j.value("max_speed", s.max_speed);
  s.chain_length = j.value("chain_length", s.chain_length);
  s.goal_index = j.value("goal_index", s.goal_index);
  s.step_size = j.value("step_size", s.step_size);
  s.start_spread = j.value("start_spread", s.start_spread);
  s.validate();
  return s;
}

nlohmann::json spec_to_json(const EnvSpec& s) {
  nlohmann::json j = {{"kind", to_string(s.kind)},
                      {"horizon", s.horizon},
                      {"distractor_dim", s.distractor_dim},
                      {"action_bound", s.action_bound}};
  switch (s.kind) {
    case Kind::kLinearGaussian:
      j["A"] = mat_to_json(s.A);
      j["B"] = mat_to_json(s.B);
      j["noise"] = s.noise;
      j["reward_width"] = s.reward_width;
      break;
    case Kind::kPendulum:
      j["length"] = s.length;
      j["gravity"] = s.gravity;
      j["max_torque"] = s.max_torque;
      j["dt"] = s.dt;
      j["max_speed"] = s.max_speed;
      break;
    case Kind::kSparseChain:
      j["chain_length"] = s.chain_length;
      j["goal_index"] = s.goal_index;
      j["step_size"] = s.step_size;
      j["start_spread"] = s.start_spread;
      break;
  }
  return j;
}

Vec Observation::full() const {
  Vec v(semantic.size() + distractor.size());
  v << semantic, distractor;
  return v;
}

Vec semantic_of(const EnvSpec& spec, const Vec& state) {
  switch (spec.kind) {
    case Kind::kLinearGaussian: return state;
    case Kind::kPendulum: {
      Vec v(3);
      v << std::cos(state(0)), std::sin(state(0)), state(1) / spec.max_speed;
      return v;
    }
    case Kind::kSparseChain: return state / spec.goal_index;
  }
  return state;
}

StepResult env_step(const EnvSpec& spec, const Vec& state, const Vec& action, int t_next,
                    const Vec& distractor, Rng& rng) {
  require_dims(action.size() == spec.action_dim, "env_step: action dimension mismatch");
  require_dims(state.size() == spec.state_dim, "env_step: state dimension mismatch");
  Vec a = action.cwiseMax(-spec.action_bound).cwiseMin(spec.action_bound);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::isnan(a(i))) a(i) = 0.0;
  StepResult r;
  switch (spec.kind) {
    case Kind::kLinearGaussian: {
      Vec eps = standard_normal(rng, spec.state_dim, 1);
      r.state = spec.A * state + spec.B * a + spec.noise * eps;
      r.reward = std::exp(-0.5 * r.state.squaredNorm() / (spec.reward_width * spec.reward_width));
      break;
    }
    case Kind::kPendulum: {
      const double th = state(0), om = state(1);
      const double acc = spec.gravity / spec.length * std::sin(th) + spec.max_torque * a(0);
      double om2 = std::clamp(om + spec.dt * acc, -spec.max_speed, spec.max_speed);
      double th2 = th + spec.dt * om;
      th2 = std::remainder(th2, 2.0 * std::numbers::pi);
      r.state = Vec(2);
      r.state << th2, om2;
      r.reward = 0.5 * (1.0 + std::cos(th2));
      break;
    }
    case Kind::kSparseChain: {
      r.state = Vec(1);
      r.state(0) = std::clamp(state(0) + spec.step_size * a(0), 0.0, spec.chain_length);
      r.reward = r.state(0) >= spec.goal_index ? 1.0 : 0.0;
      r.done = r.reward > 0.0;
      break;
    }
  }
  if (!r.state.allFinite()) throw NumericError("env_step: non-finite state");
  r.done = r.done || t_next >= spec.horizon;
  r.obs = Observation{semantic_of(spec, r.state), distractor};
  return r;
}

Env::Env(EnvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Observation Env::reset(Rng& rng) {
  t_ = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (spec_.kind) {
    case Kind::kLinearGaussian:
      state_ = standard_normal(rng, spec_.state_dim, 1);
      break;
    case Kind::kPendulum:
      state_ = Vec(2);
      state_ << std::numbers::pi * (2.0 * u(rng) - 1.0), 2.0 * u(rng) - 1.0;
      break;
    case Kind::kSparseChain:
      state_ = Vec::Constant(1, spec_.start_spread * u(rng));
      break;
  }
  distractor_ = standard_normal(rng, spec_.distractor_dim, 1);
  return observe();
}

StepResult Env::step(const Vec& action, Rng& rng) {
  ++t_;
  StepResult r = env_step(spec_, state_, action, t_, distractor_, rng);
  state_ = r.state;
  return r;
}

Observation Env::observe() const { return Observation{semantic_of(spec_, state_), distractor_}; }

Vec layer_norm(const Vec& x, double eps) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  return (x.array() - mu) / std::sqrt(var + eps);
}

GroundingOracle::GroundingOracle(int semantic_dim, int n_feat, int d_g, uint64_t seed) {
  require(semantic_dim >= 1 && n_feat >= 1 && d_g >= 2, "GroundingOracle: bad dimensions");
  Rng rng = make_rng(seed, "grounding.oracle");
  feat = standard_normal(rng, n_feat, semantic_dim) * (1.5 / std::sqrt(semantic_dim));
  w_proj = standard_normal(rng, d_g, n_feat) / std::sqrt(n_feat);
  b_proj = standard_normal(rng, d_g, 1) * 0.1;
}

Vec GroundingOracle::features(const Vec& semantic) const {
  require_dims(semantic.size() == feat.cols(), "GroundingOracle: semantic dimension mismatch");
  return (feat * semantic).array().tanh();
}

Vec GroundingOracle::grounding_vector(const Vec& semantic) const {
  return layer_norm(w_proj * features(semantic) + b_proj);
}

Vec GroundingOracle::grounding_vector(const Observation& obs) const {
  return grounding_vector(obs.semantic);
}

}  // namespace girl::env
