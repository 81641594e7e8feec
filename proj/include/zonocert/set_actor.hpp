#pragma once

#include <filesystem>
#include <vector>

#include "zonocert/hj_train.hpp"
#include "zonocert/neural.hpp"
#include "zonocert/pwa.hpp"

namespace zonocert {

/// Token columns [c; 1] for centers and [g; 0] for generators, fragment by fragment.
struct TokenSet {
  Mat tokens;  // (n + 1) x L
  Eigen::Index mask_length = 0;  // number of real tokens; columns beyond are padding

  Eigen::Index size() const { return tokens.cols(); }
};

TokenSet tokenize(const ZonotopeFamily& fam);
/// Pads every set to the longest one; padding columns are ignored by the pooling.
std::vector<TokenSet> pad_token_sets(std::vector<TokenSet> sets);

struct SetActorGradients {
  Gradients encoder;
  Gradients decoder;
};

/// Deep Sets controller: shared token encoder, coordinatewise max-pool, decoder.
class SetActor {
 public:
  static constexpr Eigen::Index kEmbedding = 64;

  Mlp encoder;  // n+1 -> ... -> 64, linear embedding layer
  Mlp decoder;  // 64 -> ... -> m, tanh output in [-1,1]^m
  Vec action_center;
  Vec action_half_width;

  static SetActor create(const PwaSystem& sys, CounterRng& rng, Eigen::Index hidden = 64);

  Eigen::Index state_dim() const { return encoder.input_dim() - 1; }
  Eigen::Index input_dim() const { return decoder.output_dim(); }

  Vec act(const ZonotopeFamily& fam) const;
  Vec act_tokens(const TokenSet& tokens) const;
  /// Pooled embedding and, per embedding coordinate, the first token attaining the max.
  Vec pool(const TokenSet& tokens, std::vector<Eigen::Index>* argmax = nullptr) const;

  /// Parameter gradient of upstream^T act_tokens(tokens) for each set, summed.
  SetActorGradients backward(const std::vector<TokenSet>& sets, const Mat& upstream) const;

  void save(const std::filesystem::path& path) const;
  static SetActor load(const std::filesystem::path& path);
};

/// V*(f(p, u_set)) - V*(f(p, pi*(p))) under the nominal dynamics.
double regret(const HjModel& model, const PwaSystem& sys, const Vec& p, const Vec& u_set);

/// Indices of the top `fraction` of the positive entries (ceil, at least one);
/// all positive entries when fewer than four are positive. Largest first, ties by index.
std::vector<std::size_t> top_positive_indices(const std::vector<double>& values, double fraction);
/// Mean of the retained entries, 0 when no entry is positive.
double top_positive_mean(const std::vector<double>& values, double fraction);

struct DistillConfig {
  long iterations = 2500;
  std::size_t batch_zonotopes = 96;
  int horizon = 6;
  std::size_t samples_per_fragment = 32;
  double top_fraction = 0.3;
  double lr_start = 5e-4;
  double lr_end = 5e-5;
  Eigen::Index generators_min = 2;
  Eigen::Index generators_max = 10;
  double generator_scale_min = 0.02;
  double generator_scale_max = 0.3;
  double multi_fragment_share = 0.3;
  int cluster_min = 2;
  int cluster_max = 4;
  double cluster_spread = 0.3;  // offset of cluster members from the base point
  double cluster_scale = 0.3;   // generator scale factor for cluster members
  Eigen::Index hidden = 64;
  long log_interval = 1;
};

struct DistillLogRow {
  long iteration = 0;
  double loss = 0.0;
  double max_regret = 0.0;
  double lr = 0.0;
};

struct DistillResult {
  SetActor actor;
  std::vector<DistillLogRow> log;
};

/// Cosine annealing from lr_start to lr_end over the configured iterations.
double cosine_lr(const DistillConfig& cfg, long iteration);

DistillResult distill(const HjModel& model, const PwaSystem& sys, const DistillConfig& cfg, std::uint64_t seed);
DistillResult distill(SetActor actor, const HjModel& model, const PwaSystem& sys, const DistillConfig& cfg,
                      std::uint64_t seed);

void write_distill_log(const std::filesystem::path& path, const std::vector<DistillLogRow>& log);

/// Training families: one random zonotope, or a small cluster when `cluster` is set.
ZonotopeFamily sample_training_family(const PwaSystem& sys, const DistillConfig& cfg, bool cluster,
                                      CounterRng& rng);

/// Mean ||pi_set({x}) - pi*(x)|| over uniform domain points.
double pointwise_gap(const SetActor& actor, const HjModel& model, const PwaSystem& sys, std::size_t samples,
                     CounterRng& rng);

}  // namespace zonocert
