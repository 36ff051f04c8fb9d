#pragma once

#include "girl/autodiff.hpp"
#include "girl/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace girl::nn {

using ad::Parameter;
using ad::ParamRefs;
using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class Activation { kIdentity, kElu, kRelu, kTanh, kSigmoid };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

Var activate(Var x, Activation a);
Tensor activate(const Tensor& x, Activation a);

struct Linear {
  Parameter weight;  // out x in
  Parameter bias;    // 1 x out

  Linear() = default;
  // Glorot-uniform weights scaled by `gain`, zero bias.
  Linear(const std::string& name, int in, int out, Rng& rng, double gain = 1.0);

  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }
  Var forward(Tape& t, Var x);
  Tensor forward(const Tensor& x) const;
  void collect(ParamRefs& out) { out.push_back(&weight); out.push_back(&bias); }
};

// Layers are chained: layer i maps sizes[i] -> sizes[i+1]. Every layer but
// the last uses `hidden`; the last uses `output`.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<int>& sizes, Activation hidden, Activation output,
      Rng& rng, double out_gain = 1.0);

  Var forward(Tape& t, Var x);
  Tensor forward(const Tensor& x) const;

  int in_dim() const { return layers_.front().in_dim(); }
  int out_dim() const { return layers_.back().out_dim(); }
  size_t depth() const { return layers_.size(); }
  Linear& layer(size_t i) { return layers_[i]; }
  const Linear& layer(size_t i) const { return layers_[i]; }
  Activation activation(size_t i) const { return acts_[i]; }

  void collect(ParamRefs& out);
  ParamRefs params() {
    ParamRefs r;
    collect(r);
    return r;
  }

  // Rescales the final weight so its largest singular value is at most 1.
  void project_final_spectral_norm();

 private:
  std::vector<Linear> layers_;
  std::vector<Activation> acts_;
};

// Gated recurrent cell:
//   u = sigmoid(W_u x + U_u h + b_u), r = sigmoid(W_r x + U_r h + b_r)
//   n = tanh(W_n x + U_n (r * h) + b_n)
//   h' = (1 - u) * h + u * n
class Gru {
 public:
  Gru() = default;
  Gru(const std::string& name, int input, int hidden, Rng& rng);

  Var step(Tape& t, Var h_prev, Var x);
  Tensor step(const Tensor& h_prev, const Tensor& x) const;

  int hidden() const { return static_cast<int>(w_in_.value.rows() / 3); }
  int input() const { return static_cast<int>(w_in_.value.cols()); }

  Parameter& w_in() { return w_in_; }
  Parameter& bias() { return bias_; }
  Parameter& u_gates() { return u_gates_; }
  Parameter& u_cand() { return u_cand_; }

  void collect(ParamRefs& out);

 private:
  Parameter w_in_;     // 3H x in, rows [u; r; n]
  Parameter bias_;     // 1 x 3H
  Parameter u_gates_;  // 2H x H, rows [u; r]
  Parameter u_cand_;   // H x H
};

struct AdamConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 100.0;  // global-norm clipping; <= 0 disables
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  AdamState() = default;
  AdamState(const ParamRefs& params, AdamConfig cfg);
};

// One clipped Adam update using the grads stored on `params`. Returns the
// global gradient norm before clipping. Throws NumericError naming the
// first parameter with a non-finite gradient; nothing is updated then.
double adam_step(AdamState& s, const ParamRefs& params);

double global_grad_norm(const ParamRefs& params);

// Checkpoint: <stem>.json manifest (name, rows, cols, byte offset per
// tensor) plus <stem>.bin holding row-major little-endian doubles.
void save_checkpoint(const std::filesystem::path& stem, const ParamRefs& params);
// Loads tensors by name; throws on missing names or shape mismatch.
void load_checkpoint(const std::filesystem::path& stem, const ParamRefs& params);

}  // namespace girl::nn
