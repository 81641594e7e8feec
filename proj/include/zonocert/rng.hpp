#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace zonocert {

/// Counter-based generator: output i is a SplitMix64 finalizer applied to
/// (key, i). No platform-dependent std:: distributions are used anywhere, so
/// every draw is reproducible across compilers and standard libraries.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  Eigen::VectorXd uniform_vector(Eigen::Index n, double lo, double hi);
  Eigen::VectorXd normal_vector(Eigen::Index n);

  /// Independent child generator; the parent advances by one draw.
  CounterRng split();

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace zonocert
