#include "girl/nn.hpp"

#include "girl/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace girl::nn {

namespace {

double sigmoid_scalar(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "elu") return Activation::kElu;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw ContractViolation("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kElu: return "elu";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "identity";
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kElu: return ad::elu(x);
    case Activation::kRelu: return ad::relu(x);
    case Activation::kTanh: return ad::tanh(x);
    case Activation::kSigmoid: return ad::sigmoid(x);
  }
  return x;
}

Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kElu: return x.unaryExpr([](double u) { return u > 0 ? u : std::expm1(u); });
    case Activation::kRelu: return x.cwiseMax(0.0);
    case Activation::kTanh: return x.array().tanh();
    case Activation::kSigmoid: return x.unaryExpr([](double u) { return sigmoid_scalar(u); });
  }
  return x;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng, double gain) {
  double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  weight = Parameter(name + ".w", uniform_matrix(rng, out, in, -limit, limit));
  bias = Parameter(name + ".b", Tensor::Zero(1, out));
}

Var Linear::forward(Tape& t, Var x) {
  return ad::linear(x, t.param(weight), t.param(bias));
}

Tensor Linear::forward(const Tensor& x) const {
  require_dims(x.cols() == weight.value.cols(), "Linear: input dim mismatch");
  Tensor y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Mlp::Mlp(const std::string& name, const std::vector<int>& sizes, Activation hidden,
         Activation output, Rng& rng, double out_gain) {
  require(sizes.size() >= 2, "Mlp needs at least input and output sizes");
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    bool last = i + 2 == sizes.size();
    layers_.emplace_back(name + ".l" + std::to_string(i), sizes[i], sizes[i + 1], rng,
                         last ? out_gain : 1.0);
    acts_.push_back(last ? output : hidden);
  }
}

Var Mlp::forward(Tape& t, Var x) {
  require_dims(x.cols() == in_dim(), "Mlp: input has " + std::to_string(x.cols()) +
                                         " features, expected " + std::to_string(in_dim()));
  for (size_t i = 0; i < layers_.size(); ++i) x = activate(layers_[i].forward(t, x), acts_[i]);
  return x;
}

Tensor Mlp::forward(const Tensor& x) const {
  require_dims(x.cols() == in_dim(), "Mlp: input has " + std::to_string(x.cols()) +
                                         " features, expected " + std::to_string(in_dim()));
  Tensor y = x;
  for (size_t i = 0; i < layers_.size(); ++i) y = activate(layers_[i].forward(y), acts_[i]);
  return y;
}

void Mlp::collect(ParamRefs& out) {
  for (auto& l : layers_) l.collect(out);
}

void Mlp::project_final_spectral_norm() {
  auto& w = layers_.back().weight.value;
  Eigen::JacobiSVD<Tensor> svd(w);
  double s = svd.singularValues()(0);
  if (s > 1.0) w /= s;
}

Gru::Gru(const std::string& name, int input, int hidden, Rng& rng) {
  double lim_in = std::sqrt(6.0 / static_cast<double>(input + hidden));
  double lim_h = std::sqrt(6.0 / static_cast<double>(2 * hidden));
  w_in_ = Parameter(name + ".w_in", uniform_matrix(rng, 3 * hidden, input, -lim_in, lim_in));
  bias_ = Parameter(name + ".b", Tensor::Zero(1, 3 * hidden));
  u_gates_ = Parameter(name + ".u_gates", uniform_matrix(rng, 2 * hidden, hidden, -lim_h, lim_h));
  u_cand_ = Parameter(name + ".u_cand", uniform_matrix(rng, hidden, hidden, -lim_h, lim_h));
}

Var Gru::step(Tape& t, Var h_prev, Var x) {
  const auto H = hidden();
  require_dims(h_prev.cols() == H, "Gru: hidden state has wrong size");
  require_dims(x.cols() == input(), "Gru: input has wrong size");
  require_dims(h_prev.rows() == x.rows(), "Gru: batch mismatch");
  Var gx = ad::linear(x, t.param(w_in_), t.param(bias_));
  Var gh = ad::matmul_nt(h_prev, t.param(u_gates_));
  Var u = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, H), ad::slice_cols(gh, 0, H)));
  Var r = ad::sigmoid(ad::add(ad::slice_cols(gx, H, H), ad::slice_cols(gh, H, H)));
  Var n = ad::tanh(
      ad::add(ad::slice_cols(gx, 2 * H, H), ad::matmul_nt(ad::mul(r, h_prev), t.param(u_cand_))));
  // h' = h + u * (n - h)
  return ad::add(h_prev, ad::mul(u, ad::sub(n, h_prev)));
}

Tensor Gru::step(const Tensor& h_prev, const Tensor& x) const {
  const auto H = hidden();
  require_dims(h_prev.cols() == H && x.cols() == input() && h_prev.rows() == x.rows(),
               "Gru: shape mismatch");
  Tensor gx = x * w_in_.value.transpose();
  gx.rowwise() += bias_.value.row(0);
  Tensor gh = h_prev * u_gates_.value.transpose();
  Tensor u = activate(Tensor(gx.leftCols(H) + gh.leftCols(H)), Activation::kSigmoid);
  Tensor r = activate(Tensor(gx.middleCols(H, H) + gh.middleCols(H, H)), Activation::kSigmoid);
  Tensor n = (gx.rightCols(H) + r.cwiseProduct(h_prev) * u_cand_.value.transpose()).array().tanh();
  return h_prev + u.cwiseProduct(n - h_prev);
}

void Gru::collect(ParamRefs& out) {
  out.push_back(&w_in_);
  out.push_back(&bias_);
  out.push_back(&u_gates_);
  out.push_back(&u_cand_);
}

AdamState::AdamState(const ParamRefs& params, AdamConfig cfg) : config(cfg) {
  for (const auto* p : params) {
    m.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    v.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
  }
}

double global_grad_norm(const ParamRefs& params) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double adam_step(AdamState& s, const ParamRefs& params) {
  require(s.m.size() == params.size(), "adam_step: optimizer state does not match parameters");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    require_dims(p->grad.rows() == s.m[i].rows() && p->grad.cols() == s.m[i].cols(),
                 "adam_step: gradient shape mismatch for " + p->name);
    if (!p->grad.allFinite()) throw NumericError("non-finite gradient in parameter " + p->name);
  }
  const double norm = global_grad_norm(params);
  const auto& c = s.config;
  double clip = 1.0;
  if (c.clip_norm > 0 && norm > c.clip_norm) clip = c.clip_norm / norm;
  ++s.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    Tensor g = p->grad * clip;
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
    s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
    Tensor mhat = s.m[i] / bc1;
    Tensor vhat = s.v[i] / bc2;
    p->value.array() -= c.lr * mhat.array() / (vhat.array().sqrt() + c.eps);
  }
  return norm;
}

namespace {

void write_le(std::ofstream& out, double x) {
  uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) {
    uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((bits >> (8 * i)) & 0xFFULL) << (8 * (7 - i));
    bits = r;
  }
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

double read_le(const char* p) {
  uint64_t bits;
  std::memcpy(&bits, p, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) {
    uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((bits >> (8 * i)) & 0xFFULL) << (8 * (7 - i));
    bits = r;
  }
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ParamRefs& params) {
  auto json_path = stem;
  json_path += ".json";
  auto bin_path = stem;
  bin_path += ".bin";
  nlohmann::json manifest;
  manifest["format"] = "girl-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "f64-le";
  manifest["blob"] = bin_path.filename().string();
  manifest["tensors"] = nlohmann::json::array();
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
  uint64_t offset = 0;
  for (const auto* p : params) {
    manifest["tensors"].push_back({{"name", p->name},
                                   {"rows", p->value.rows()},
                                   {"cols", p->value.cols()},
                                   {"offset", offset}});
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) write_le(bin, p->value(i, j));
    offset += static_cast<uint64_t>(p->value.size()) * 8;
  }
  std::ofstream js(json_path);
  if (!js) throw std::runtime_error("cannot write " + json_path.string());
  js << manifest.dump(2) << "\n";
}

void load_checkpoint(const std::filesystem::path& stem, const ParamRefs& params) {
  auto json_path = stem;
  json_path += ".json";
  std::ifstream js(json_path);
  if (!js) throw std::runtime_error("cannot read " + json_path.string());
  auto manifest = nlohmann::json::parse(js);
  if (manifest.value("format", "") != "girl-checkpoint")
    throw std::runtime_error(json_path.string() + " is not a girl checkpoint");
  auto bin_path = json_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + bin_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::map<std::string, nlohmann::json> by_name;
  for (const auto& t : manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks tensor " + p->name);
    const auto& t = it->second;
    auto rows = t.at("rows").get<Eigen::Index>();
    auto cols = t.at("cols").get<Eigen::Index>();
    auto off = t.at("offset").get<uint64_t>();
    require_dims(rows == p->value.rows() && cols == p->value.cols(),
                 "checkpoint shape mismatch for " + p->name);
    if (off + static_cast<uint64_t>(rows * cols) * 8 > blob.size())
      throw std::runtime_error("checkpoint blob truncated at " + p->name);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        p->value(i, j) = read_le(blob.data() + off + static_cast<uint64_t>(i * cols + j) * 8);
  }
}

}  // namespace girl::nn
