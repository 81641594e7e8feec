#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "zonocert/rng.hpp"

namespace zonocert {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Fixed slack used by soundness comparisons in place of directed rounding.
inline constexpr double kSoundSlack = 1e-9;

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  double width() const { return upper - lower; }
  double mid() const { return 0.5 * (lower + upper); }
  double radius() const { return 0.5 * (upper - lower); }
  bool empty() const { return lower > upper; }
  bool contains(double v, double tol = 0.0) const { return v >= lower - tol && v <= upper + tol; }
};

/// {c + G a : a in [-1,1]^p}. A zonotope with zero generators is the point {c}.
class Zonotope {
 public:
  Zonotope() = default;
  explicit Zonotope(Vec center);
  Zonotope(Vec center, Mat generators);

  static Zonotope box(const Vec& center, const Vec& radius);
  static Zonotope from_bounds(const Vec& lower, const Vec& upper);

  Eigen::Index dim() const { return center_.size(); }
  Eigen::Index order() const { return generators_.cols(); }
  const Vec& center() const { return center_; }
  const Mat& generators() const { return generators_; }

  /// Per-axis half widths of the interval hull.
  Vec radius() const;
  Vec hull_lower() const { return center_ - radius(); }
  Vec hull_upper() const { return center_ + radius(); }
  double hull_volume() const;

  Vec point(const Vec& factors) const { return center_ + generators_ * factors; }
  /// Point for factors drawn uniformly from [-1,1]^p.
  Vec sample(CounterRng& rng) const;
  /// Point drawn uniformly from the set (rejection in the interval hull). Requires full rank.
  Vec sample_uniform(CounterRng& rng) const;

  Eigen::Index rank(double tol = 1e-12) const;

 private:
  Vec center_;
  Mat generators_{Mat(0, 0)};
};

/// {x : normal^T x <= offset}
struct Halfspace {
  Vec normal;
  double offset = 0.0;

  Halfspace() = default;
  Halfspace(Vec n, double b);
  bool contains(const Vec& x, double tol = 0.0) const { return normal.dot(x) <= offset + tol; }
};

struct Polyhedron {
  std::vector<Halfspace> halfspaces;

  bool contains(const Vec& x, double tol = 0.0) const;
  /// Strictly inside every halfspace by more than tol.
  bool interior_contains(const Vec& x, double tol = 0.0) const;
};

/// {c + G xi : A xi = b, xi_j in domains_j}, domains_j a subset of [-1,1].
class ConstrainedZonotope {
 public:
  ConstrainedZonotope(Vec center, Mat generators, Mat constraints, Vec offsets,
                      std::vector<Interval> domains);

  /// Lifts Z cap H using one slack factor that encodes normal^T G xi in [-rho, delta].
  static ConstrainedZonotope from_halfspace(const Zonotope& z, const Halfspace& h);

  /// Interval constraint propagation on the factor domains. Returns false when
  /// some domain becomes empty (the set is provably empty).
  bool contract(int max_sweeps = 10, double tol = 1e-10);

  /// Zonotope enclosure from the current factor domains. Zero columns are dropped.
  Zonotope enclose() const;

  const std::vector<Interval>& domains() const { return domains_; }
  const Mat& constraints() const { return a_; }
  const Vec& offsets() const { return b_; }
  const Vec& center() const { return center_; }
  const Mat& generators() const { return generators_; }

 private:
  Vec center_;
  Mat generators_;
  Mat a_;
  Vec b_;
  std::vector<Interval> domains_;
};

enum class CutKind { Inside, Outside, Straddle };

struct HalfspaceCut {
  CutKind kind = CutKind::Inside;
  Zonotope set;  // meaningless when kind == Outside
  /// Upper bound on the Hausdorff distance between `set` and the exact intersection.
  double inflation = 0.0;
};

struct PolyhedronCut {
  std::optional<Zonotope> set;  // nullopt means provably empty
  double inflation = 0.0;

  bool empty() const { return !set.has_value(); }
};

struct Reduction {
  Zonotope set;
  double inflation = 0.0;
};

Zonotope affine_map(const Zonotope& z, const Mat& a, const Vec& b);
Zonotope linear_map(const Zonotope& z, const Mat& a);
Zonotope minkowski_sum(const Zonotope& z1, const Zonotope& z2);
Zonotope translate(const Zonotope& z, const Vec& shift);
Interval support_interval(const Zonotope& z, const Vec& direction);
HalfspaceCut halfspace_intersect(const Zonotope& z, const Halfspace& h);
PolyhedronCut polyhedron_intersect(const Zonotope& z, const Polyhedron& p);
Reduction reduce_order(const Zonotope& z, Eigen::Index max_generators);
double diameter(const Zonotope& z);

/// Exact membership from the halfspace form of the zonotope (facet enumeration
/// over (n-1)-subsets of generators). Rank-deficient sets are handled in their span.
bool contains(const Zonotope& z, const Vec& x, double tol = kSoundSlack);

/// Hit-or-miss Monte Carlo volume in the interval hull. Rank-deficient sets give 0.
double volume_estimate(const Zonotope& z, std::size_t samples, std::uint64_t seed);
/// Volume of a union of same-dimension zonotopes.
double volume_estimate(std::span<const Zonotope> sets, std::size_t samples, std::uint64_t seed);

}  // namespace zonocert
