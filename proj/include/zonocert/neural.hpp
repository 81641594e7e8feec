#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zonocert/linalg.hpp"
#include "zonocert/rng.hpp"

namespace zonocert {

enum class Activation { ReLU, Tanh, Identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct Layer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
  Activation activation = Activation::Identity;
};

/// Feed-forward network. Batched entry points take one sample per column.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  /// He-style uniform fan-in initialization, biases zero.
  static Mlp create(const std::vector<Eigen::Index>& widths, Activation hidden, Activation output,
                    CounterRng& rng);

  Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().w.cols(); }
  Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().w.rows(); }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  std::size_t parameter_count() const;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;

  bool same_shape(const Mlp& other) const;
  bool all_finite() const;

 private:
  void validate() const;
  std::vector<Layer> layers_;
};

void apply_activation(Activation a, Eigen::MatrixXd& z);

/// Activations recorded by a batched forward pass, needed by backward().
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> outputs;  // post-activation output of each layer
  const Eigen::MatrixXd& result() const { return outputs.back(); }
};

ForwardCache forward_cached(const Mlp& net, const Eigen::MatrixXd& x);

struct Gradients {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  static Gradients zeros_like(const Mlp& net);
  Gradients& operator+=(const Gradients& o);
  Gradients& operator*=(double s);
  bool all_finite() const;
  double max_abs() const;
};

struct BackwardResult {
  Gradients params;
  Eigen::MatrixXd input_grad;  // d loss / d input, one column per sample
};

/// Reverse-mode pass. `upstream` holds d loss / d output per sample; parameter
/// gradients are summed over the batch. ReLU'(0) is taken as 0.
BackwardResult backward(const Mlp& net, const ForwardCache& cache, const Eigen::MatrixXd& upstream);
BackwardResult backward(const Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& upstream);

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_network(const Mlp& net);
};

/// Bias-corrected Adam update in place. Throws NonFiniteGradient before touching anything.
void adam_step(Mlp& net, const Gradients& grads, AdamState& state, double lr);

inline constexpr double kDefaultPolyakRate = 0.005;

/// target <- tau * online + (1 - tau) * target, returned as a new network.
Mlp polyak_update(const Mlp& target, const Mlp& online, double tau = kDefaultPolyakRate);
void polyak_update_inplace(Mlp& target, const Mlp& online, double tau = kDefaultPolyakRate);

/// Power-iteration estimate of sigma_max (training-time use only).
double spectral_norm(const Eigen::MatrixXd& w, int iters = 100);

/// Rescales every hidden weight matrix whose spectral norm exceeds `bound`.
Mlp project_spectral(const Mlp& net, double bound);
void project_spectral_inplace(Mlp& net, double bound);

inline constexpr int kWeightFormatVersion = 1;

void save_weights(const Mlp& net, const std::filesystem::path& path, const std::string& role = "");
Mlp load_weights(const std::filesystem::path& path, std::string* role = nullptr);

}  // namespace zonocert
