#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "zonocert/neural.hpp"
#include "zonocert/pwa.hpp"

namespace zonocert {

/// Travel-cost reward: -(r_t - ||x - x_t||) inside the target ball, 0 outside.
double reward(const PwaSystem& sys, const Vec& x);

struct Transition {
  Vec x, u;
  double r = 0.0;
  Vec x_next;
};

/// Ring buffer of transitions with a seeded batch sampler.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, Eigen::Index state_dim, Eigen::Index input_dim);

  void push(const Vec& x, const Vec& u, double r, const Vec& x_next);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }

  /// Indices drawn uniformly without replacement within the batch.
  std::vector<std::size_t> sample_indices(std::size_t batch, CounterRng& rng) const;

  /// Columns of the stored matrices for the given indices.
  void gather(const std::vector<std::size_t>& idx, Mat& x, Mat& u, Vec& r, Mat& x_next) const;
  Transition at(std::size_t i) const;

 private:
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;
  Mat x_, u_, x_next_;
  Vec r_;
};

/// Reverse curriculum: start states come from an annulus around the target
/// whose outer radius grows by `rate * cap` every `interval` iterations.
struct Curriculum {
  double inner = 0.0;
  double outer_start = 0.0;
  double cap = 0.0;
  double rate = 0.10;
  long interval = 5000;

  double outer_at(long iteration) const;
};

struct HjConfig {
  long iterations = 100000;
  std::size_t batch = 512;
  double gamma = 0.95;
  double lr_critic = 1e-3;
  double lr_actor = 1e-4;
  double tau = kDefaultPolyakRate;
  double sigma_expl = 0.2;  // fraction of the action half width
  double preactivation_penalty = 1e-2;  // weight on the squared tanh pre-activation of the actor
  std::vector<Eigen::Index> hidden{256, 256};
  std::size_t replay_capacity = 1000000;
  std::size_t warmup = 5000;
  int episode_length = 60;
  double curriculum_rate = 0.10;
  long curriculum_interval = 5000;
  double annulus_gap = 0.2;    // initial outer radius = r_t + gap
  double inner_radius = -1.0;  // < 0: target radius
  double spectral_bound = 0.0;  // > 0: project hidden layers after every step
  double core_radius = 0.0;     // > 0: restrict states to a ball around the target
  long log_interval = 1000;

  /// Iteration cap by state dimension.
  static long default_iterations(Eigen::Index n);
  static HjConfig for_system(const PwaSystem& sys);
  /// Local certificate trainer settings on the ball of radius 1.5 r_t.
  static HjConfig local_core(const PwaSystem& sys);
};

struct HjLogRow {
  long iteration = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double curriculum_outer = 0.0;
  double probe_v = 0.0;  // V* at the target center
};

/// Actor (tanh output in [-1,1]^m, scaled to the action box) and critic Q(x, u).
struct HjModel {
  Mlp actor;
  Mlp critic;
  Mlp target_actor;
  Mlp target_critic;
  double gamma = 0.95;
  Vec action_center;
  Vec action_half_width;

  static HjModel create(const PwaSystem& sys, const std::vector<Eigen::Index>& hidden, double gamma,
                        CounterRng& rng);

  Eigen::Index state_dim() const { return actor.input_dim(); }
  Eigen::Index input_dim() const { return actor.output_dim(); }

  /// Actor followed by the affine map onto the action box (for verification).
  Mlp scaled_actor() const;

  Vec act(const Vec& x) const;
  Mat act_batch(const Mat& x) const;
  double value(const Vec& x) const;
  Vec value_batch(const Mat& x) const;
  /// d V*(x) / dx per column, V* = Q(x, pi(x)).
  Mat value_gradient_batch(const Mat& x) const;

  void save(const std::filesystem::path& dir) const;
  static HjModel load(const std::filesystem::path& dir);
};

struct HjResult {
  HjModel model;
  std::vector<HjLogRow> log;
};

HjResult train_hj(const PwaSystem& sys, const HjConfig& cfg, std::uint64_t seed,
                  const std::filesystem::path& checkpoint_dir = {});

void write_hj_log(const std::filesystem::path& path, const std::vector<HjLogRow>& log);

/// Uniform draw from the annulus {inner <= ||x - x_t|| <= outer} intersected with
/// the domain box, by rejection.
Vec sample_annulus(const PwaSystem& sys, double inner, double outer, CounterRng& rng);

}  // namespace zonocert
