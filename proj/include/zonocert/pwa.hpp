#pragma once

#include <string>
#include <vector>

#include "zonocert/setgeom.hpp"

namespace zonocert {

struct Mode {
  Polyhedron region;
  Mat a;  // n x n
  Mat b;  // n x m
};

enum class Benchmark { FourQuad, EightSec, CoupledOsc, TripleOsc };

Benchmark parse_benchmark(const std::string& name);
std::string to_string(Benchmark b);

/// x+ = A_i x + B_i u + w for x in region i, w in <0, sigma_w I>.
struct PwaSystem {
  std::string name;
  std::vector<Mode> modes;
  Eigen::Index state_dim = 0;
  Eigen::Index input_dim = 0;
  double sigma_w = 0.01;
  Vec action_lower;
  Vec action_upper;
  Vec domain_lower;
  Vec domain_upper;
  Vec target_center;
  double target_radius = 0.0;

  /// Throws on inconsistent dimensions, nonfinite matrices, or an empty action box.
  void validate() const;

  Zonotope disturbance() const;
  Zonotope domain() const { return Zonotope::from_bounds(domain_lower, domain_upper); }
  bool in_domain(const Vec& x, double tol = 0.0) const;
  bool action_admissible(const Vec& u, double tol = 1e-12) const;
  Vec clip_action(const Vec& u) const;
  Vec action_center() const { return 0.5 * (action_lower + action_upper); }
  Vec action_half_width() const { return 0.5 * (action_upper - action_lower); }
  double max_input_gain() const;  // max_i ||B_i||_2
};

struct PartitionCheck {
  std::size_t samples = 0;
  std::size_t uncovered = 0;       // in no closed region
  std::size_t interior_overlap = 0;  // strictly inside two or more regions
  bool ok() const { return uncovered == 0 && interior_overlap == 0; }
};

/// Sampled check that the regions cover the domain and have disjoint interiors.
PartitionCheck check_partition(const PwaSystem& sys, std::size_t samples, std::uint64_t seed);

/// Lowest-index mode whose closed region contains x. Throws NoMode.
std::size_t mode_of(const PwaSystem& sys, const Vec& x);
Vec step_point(const PwaSystem& sys, const Vec& x, const Vec& u, const Vec& w);
Vec nominal_step(const PwaSystem& sys, const Vec& x, const Vec& u);

/// Per-step disturbance radius sum_j ||P^{1/2} sigma_w e_j||_2 (P = I when p_sqrt is empty).
double noise_radius(const PwaSystem& sys, const Mat& p_sqrt = Mat());

struct ZonotopeFamily {
  std::vector<Zonotope> fragments;
  double dropped_volume_fraction = 0.0;
  int step = 0;

  ZonotopeFamily() = default;
  explicit ZonotopeFamily(Zonotope z) { fragments.push_back(std::move(z)); }
  ZonotopeFamily(std::vector<Zonotope> frags, double dropped, int k)
      : fragments(std::move(frags)), dropped_volume_fraction(dropped), step(k) {}

  std::size_t size() const { return fragments.size(); }
  bool empty() const { return fragments.empty(); }
  /// Smallest zonotope containing every fragment's interval hull.
  Zonotope interval_enclosure() const;
  bool contains(const Vec& x, double tol = kSoundSlack) const;
};

struct FamilyStep {
  ZonotopeFamily family;
  double eta_step = 0.0;
  bool budget_hit = false;
  bool domain_exit = false;
  std::size_t dropped_fragments = 0;
};

struct StepBudgets {
  std::size_t fragments = 500;
  Eigen::Index generators = 40;
};

/// One-step reachable family: split by mode, map, add the disturbance, reduce
/// order, enforce the fragment budget. Children are ordered by (parent, mode).
FamilyStep step_family(const PwaSystem& sys, const ZonotopeFamily& fam, const Vec& u,
                       const StepBudgets& budgets, const Mat& p_sqrt = Mat());

PwaSystem make_benchmark(Benchmark which);
PwaSystem make_benchmark(const std::string& name);

/// Spectral radius (max |eigenvalue|).
double spectral_radius(const Mat& a);

}  // namespace zonocert
