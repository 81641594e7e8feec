#include "zonocert/neural.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "zonocert/errors.hpp"
#include "zonocert/json_io.hpp"

namespace zonocert {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw FormatError("unknown activation '" + s + "'");
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

void Mlp::validate() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.b.size() != l.w.rows()) throw DimensionMismatch("layer bias length must match weight rows");
    if (i > 0 && l.w.cols() != layers_[i - 1].w.rows())
      throw DimensionMismatch("layer " + std::to_string(i) + " input width does not chain");
  }
  if (!layers_.empty() && layers_.back().activation == Activation::ReLU)
    throw std::invalid_argument("output layer activation must be identity or tanh");
}

Mlp Mlp::create(const std::vector<Eigen::Index>& widths, Activation hidden, Activation output,
                CounterRng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("network needs input and output widths");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const Eigen::Index in = widths[i], out = widths[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    Layer l;
    l.w.resize(out, in);
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) l.w(r, c) = rng.uniform(-limit, limit);
    l.b = VectorXd::Zero(out);
    l.activation = i + 2 == widths.size() ? output : hidden;
    layers.push_back(std::move(l));
  }
  // Keep the initial output small so early value estimates start near zero.
  layers.back().w *= 0.1;
  return Mlp(std::move(layers));
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

void apply_activation(Activation a, MatrixXd& z) {
  switch (a) {
    case Activation::ReLU: z = z.cwiseMax(0.0); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
    case Activation::Identity: break;
  }
}

VectorXd Mlp::forward(const VectorXd& x) const {
  if (x.size() != input_dim()) throw DimensionMismatch("forward: input dimension");
  MatrixXd h = x;
  for (const auto& l : layers_) {
    MatrixXd z = l.w * h;
    z.colwise() += l.b;
    apply_activation(l.activation, z);
    h = std::move(z);
  }
  return h.col(0);
}

MatrixXd Mlp::forward_batch(const MatrixXd& x) const {
  if (x.rows() != input_dim()) throw DimensionMismatch("forward: input dimension");
  MatrixXd h = x;
  for (const auto& l : layers_) {
    MatrixXd z = l.w * h;
    z.colwise() += l.b;
    apply_activation(l.activation, z);
    h = std::move(z);
  }
  return h;
}

bool Mlp::same_shape(const Mlp& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].w.rows() != other.layers_[i].w.rows() || layers_[i].w.cols() != other.layers_[i].w.cols())
      return false;
    if (layers_[i].activation != other.layers_[i].activation) return false;
  }
  return true;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_)
    if (!l.w.allFinite() || !l.b.allFinite()) return false;
  return true;
}

ForwardCache forward_cached(const Mlp& net, const MatrixXd& x) {
  if (x.rows() != net.input_dim()) throw DimensionMismatch("forward: input dimension");
  ForwardCache cache;
  cache.inputs.reserve(net.depth());
  cache.outputs.reserve(net.depth());
  const MatrixXd* h = &x;
  for (const auto& l : net.layers()) {
    cache.inputs.push_back(*h);
    MatrixXd z = l.w * *h;
    z.colwise() += l.b;
    apply_activation(l.activation, z);
    cache.outputs.push_back(std::move(z));
    h = &cache.outputs.back();
  }
  return cache;
}

Gradients Gradients::zeros_like(const Mlp& net) {
  Gradients g;
  for (const auto& l : net.layers()) {
    g.w.push_back(MatrixXd::Zero(l.w.rows(), l.w.cols()));
    g.b.push_back(VectorXd::Zero(l.b.size()));
  }
  return g;
}

Gradients& Gradients::operator+=(const Gradients& o) {
  if (o.w.size() != w.size()) throw DimensionMismatch("gradient shapes differ");
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] += o.w[i];
    b[i] += o.b[i];
  }
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] *= s;
    b[i] *= s;
  }
  return *this;
}

bool Gradients::all_finite() const {
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!w[i].allFinite() || !b[i].allFinite()) return false;
  return true;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].size()) m = std::max(m, w[i].cwiseAbs().maxCoeff());
    if (b[i].size()) m = std::max(m, b[i].cwiseAbs().maxCoeff());
  }
  return m;
}

BackwardResult backward(const Mlp& net, const ForwardCache& cache, const MatrixXd& upstream) {
  const auto& layers = net.layers();
  if (cache.outputs.size() != layers.size()) throw DimensionMismatch("backward: cache does not match network");
  if (upstream.rows() != net.output_dim() || upstream.cols() != cache.result().cols())
    throw DimensionMismatch("backward: upstream gradient shape");
  BackwardResult out;
  out.params.w.resize(layers.size());
  out.params.b.resize(layers.size());
  MatrixXd delta = upstream;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    const MatrixXd& y = cache.outputs[k];
    switch (l.activation) {
      case Activation::ReLU: delta = delta.cwiseProduct((y.array() > 0.0).cast<double>().matrix()); break;
      case Activation::Tanh: delta = delta.cwiseProduct((1.0 - y.array().square()).matrix()); break;
      case Activation::Identity: break;
    }
    out.params.w[k].noalias() = delta * cache.inputs[k].transpose();
    out.params.b[k] = delta.rowwise().sum();
    MatrixXd prev = l.w.transpose() * delta;
    delta = std::move(prev);
  }
  out.input_grad = std::move(delta);
  return out;
}

BackwardResult backward(const Mlp& net, const VectorXd& x, const VectorXd& upstream) {
  return backward(net, forward_cached(net, x), MatrixXd(upstream));
}

AdamState AdamState::for_network(const Mlp& net) {
  AdamState s;
  for (const auto& l : net.layers()) {
    s.mw.push_back(MatrixXd::Zero(l.w.rows(), l.w.cols()));
    s.vw.push_back(MatrixXd::Zero(l.w.rows(), l.w.cols()));
    s.mb.push_back(VectorXd::Zero(l.b.size()));
    s.vb.push_back(VectorXd::Zero(l.b.size()));
  }
  return s;
}

void adam_step(Mlp& net, const Gradients& grads, AdamState& st, double lr) {
  auto& layers = net.mutable_layers();
  if (grads.w.size() != layers.size() || st.mw.size() != layers.size())
    throw DimensionMismatch("adam_step: shapes differ");
  if (!grads.all_finite()) throw NonFiniteGradient("adam_step: gradient contains non-finite values");
  ++st.step_count;
  const double t = static_cast<double>(st.step_count);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  const double b1 = st.beta1, b2 = st.beta2, eps = st.eps;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    st.mw[k] = b1 * st.mw[k] + (1.0 - b1) * grads.w[k];
    st.vw[k] = b2 * st.vw[k] + (1.0 - b2) * grads.w[k].cwiseAbs2();
    st.mb[k] = b1 * st.mb[k] + (1.0 - b1) * grads.b[k];
    st.vb[k] = b2 * st.vb[k] + (1.0 - b2) * grads.b[k].cwiseAbs2();
    if (lr == 0.0) continue;
    layers[k].w.array() -= lr * (st.mw[k].array() / c1) / ((st.vw[k].array() / c2).sqrt() + eps);
    layers[k].b.array() -= lr * (st.mb[k].array() / c1) / ((st.vb[k].array() / c2).sqrt() + eps);
  }
}

Mlp polyak_update(const Mlp& target, const Mlp& online, double tau) {
  Mlp out = target;
  polyak_update_inplace(out, online, tau);
  return out;
}

void polyak_update_inplace(Mlp& target, const Mlp& online, double tau) {
  if (!target.same_shape(online)) throw DimensionMismatch("polyak_update: shapes differ");
  auto& t = target.mutable_layers();
  const auto& o = online.layers();
  for (std::size_t k = 0; k < t.size(); ++k) {
    t[k].w = tau * o[k].w + (1.0 - tau) * t[k].w;
    t[k].b = tau * o[k].b + (1.0 - tau) * t[k].b;
  }
}

double spectral_norm(const MatrixXd& w, int iters) { return spectral_norm_estimate(w, iters, 1e-8); }

Mlp project_spectral(const Mlp& net, double bound) {
  Mlp out = net;
  project_spectral_inplace(out, bound);
  return out;
}

void project_spectral_inplace(Mlp& net, double bound) {
  if (!(bound > 0.0)) throw std::invalid_argument("project_spectral: bound must be positive");
  auto& layers = net.mutable_layers();
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
    const double s = spectral_norm(layers[k].w, 200);
    if (s > bound) layers[k].w *= bound / s;
  }
}

void save_weights(const Mlp& net, const std::filesystem::path& path, const std::string& role) {
  Json j = mlp_to_json(net);
  if (!role.empty()) j["role"] = role;
  write_json_file(path, j);
}

Mlp load_weights(const std::filesystem::path& path, std::string* role) {
  const Json j = read_json_file(path);
  if (role) *role = j.value("role", std::string());
  return mlp_from_json(j);
}

}  // namespace zonocert
