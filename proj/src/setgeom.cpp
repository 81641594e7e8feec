#include "zonocert/setgeom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "zonocert/errors.hpp"

namespace zonocert {

namespace {

void require_finite(const Vec& c, const Mat& g) {
  if (!c.allFinite() || !g.allFinite()) throw std::invalid_argument("zonotope entries must be finite");
}

void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionMismatch(std::string(what) + ": dimension " + std::to_string(got) + " != " +
                            std::to_string(want));
  }
}

}  // namespace

Zonotope::Zonotope(Vec center) : center_(std::move(center)), generators_(Mat(center_.size(), 0)) {
  require_finite(center_, generators_);
}

Zonotope::Zonotope(Vec center, Mat generators)
    : center_(std::move(center)), generators_(std::move(generators)) {
  if (generators_.cols() == 0) generators_.resize(center_.size(), 0);
  require_dim(generators_.rows(), center_.size(), "zonotope generators");
  require_finite(center_, generators_);
}

Zonotope Zonotope::box(const Vec& center, const Vec& radius) {
  require_dim(radius.size(), center.size(), "box radius");
  return Zonotope(center, Mat(radius.cwiseAbs().asDiagonal()));
}

Zonotope Zonotope::from_bounds(const Vec& lower, const Vec& upper) {
  return box(0.5 * (lower + upper), 0.5 * (upper - lower));
}

Vec Zonotope::radius() const {
  if (generators_.cols() == 0) return Vec::Zero(center_.size());
  return generators_.cwiseAbs().rowwise().sum();
}

double Zonotope::hull_volume() const { return (2.0 * radius()).prod(); }

Vec Zonotope::sample(CounterRng& rng) const {
  return point(rng.uniform_vector(order(), -1.0, 1.0));
}

Vec Zonotope::sample_uniform(CounterRng& rng) const {
  const Vec lo = hull_lower();
  const Vec hi = hull_upper();
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Vec x(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) x(i) = rng.uniform(lo(i), hi(i));
    if (contains(*this, x, 0.0)) return x;
  }
  return sample(rng);
}

Eigen::Index Zonotope::rank(double tol) const {
  if (order() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(generators_);
  const auto& s = svd.singularValues();
  const double scale = std::max(1.0, s.size() > 0 ? s(0) : 0.0);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol * scale) ++r;
  return r;
}

Halfspace::Halfspace(Vec n, double b) : normal(std::move(n)), offset(b) {
  if (normal.size() == 0 || normal.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("halfspace normal must be nonzero");
}

bool Polyhedron::contains(const Vec& x, double tol) const {
  return std::all_of(halfspaces.begin(), halfspaces.end(),
                     [&](const Halfspace& h) { return h.contains(x, tol); });
}

bool Polyhedron::interior_contains(const Vec& x, double tol) const {
  return std::all_of(halfspaces.begin(), halfspaces.end(),
                     [&](const Halfspace& h) { return h.normal.dot(x) < h.offset - tol; });
}

// ---------------------------------------------------------------------------
// Constrained zonotope

ConstrainedZonotope::ConstrainedZonotope(Vec center, Mat generators, Mat constraints, Vec offsets,
                                         std::vector<Interval> domains)
    : center_(std::move(center)),
      generators_(std::move(generators)),
      a_(std::move(constraints)),
      b_(std::move(offsets)),
      domains_(std::move(domains)) {
  require_dim(generators_.rows(), center_.size(), "constrained zonotope generators");
  require_dim(a_.cols(), generators_.cols(), "constraint matrix");
  require_dim(b_.size(), a_.rows(), "constraint offsets");
  require_dim(static_cast<Eigen::Index>(domains_.size()), generators_.cols(), "factor domains");
  for (const auto& d : domains_)
    if (d.lower < -1.0 || d.upper > 1.0) throw std::invalid_argument("factor domain exceeds [-1,1]");
}

ConstrainedZonotope ConstrainedZonotope::from_halfspace(const Zonotope& z, const Halfspace& h) {
  require_dim(h.normal.size(), z.dim(), "halfspace");
  const Eigen::Index p = z.order();
  const Eigen::RowVectorXd ng = h.normal.transpose() * z.generators();
  const double rho = ng.cwiseAbs().sum();
  const double delta = h.offset - h.normal.dot(z.center());

  Mat g(z.dim(), p + 1);
  g.leftCols(p) = z.generators();
  g.col(p).setZero();
  Mat a(1, p + 1);
  a.leftCols(p) = ng;
  a(0, p) = -0.5 * (delta + rho);
  Vec b(1);
  b(0) = 0.5 * (delta - rho);
  std::vector<Interval> dom(static_cast<std::size_t>(p + 1), Interval{-1.0, 1.0});
  return ConstrainedZonotope(z.center(), std::move(g), std::move(a), std::move(b), std::move(dom));
}

bool ConstrainedZonotope::contract(int max_sweeps, double tol) {
  const Eigen::Index p = a_.cols();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    for (Eigen::Index r = 0; r < a_.rows(); ++r) {
      for (Eigen::Index j = 0; j < p; ++j) {
        const double aj = a_(r, j);
        if (aj == 0.0) continue;
        // rest = b - sum_{k != j} a_k [xi_k]
        double lo = b_(r), hi = b_(r);
        double mag = std::abs(b_(r));
        for (Eigen::Index k = 0; k < p; ++k) {
          if (k == j || a_(r, k) == 0.0) continue;
          const double ak = a_(r, k);
          const auto& d = domains_[static_cast<std::size_t>(k)];
          const double t1 = ak * d.lower, t2 = ak * d.upper;
          lo -= std::max(t1, t2);
          hi -= std::min(t1, t2);
          mag += std::abs(ak);
        }
        double nlo = aj > 0 ? lo / aj : hi / aj;
        double nhi = aj > 0 ? hi / aj : lo / aj;
        // widen by a rounding allowance so the contraction stays sound
        const double pad = 1e-14 * (1.0 + mag / std::abs(aj));
        nlo -= pad;
        nhi += pad;
        auto& d = domains_[static_cast<std::size_t>(j)];
        const double old_w = d.width();
        if (nlo > d.lower) d.lower = nlo;
        if (nhi < d.upper) d.upper = nhi;
        if (d.lower > d.upper) {
          if (d.lower - d.upper > 1e-12) return false;
          const double m = 0.5 * (d.lower + d.upper);
          d.lower = d.upper = m;
        }
        change = std::max(change, old_w - d.width());
      }
    }
    if (change < tol) break;
  }
  return true;
}

Zonotope ConstrainedZonotope::enclose() const {
  Vec c = center_;
  std::vector<Vec> cols;
  for (Eigen::Index j = 0; j < generators_.cols(); ++j) {
    const auto& d = domains_[static_cast<std::size_t>(j)];
    const Vec g = generators_.col(j);
    c += g * d.mid();
    const Vec scaled = g * d.radius();
    if (scaled.cwiseAbs().maxCoeff() > 0.0) cols.push_back(scaled);
  }
  Mat g(center_.size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) g.col(static_cast<Eigen::Index>(j)) = cols[j];
  return Zonotope(std::move(c), std::move(g));
}

// ---------------------------------------------------------------------------
// Operations

Zonotope affine_map(const Zonotope& z, const Mat& a, const Vec& b) {
  require_dim(a.cols(), z.dim(), "affine_map matrix");
  require_dim(b.size(), a.rows(), "affine_map offset");
  return Zonotope(a * z.center() + b, a * z.generators());
}

Zonotope linear_map(const Zonotope& z, const Mat& a) {
  require_dim(a.cols(), z.dim(), "linear_map matrix");
  return Zonotope(a * z.center(), a * z.generators());
}

Zonotope minkowski_sum(const Zonotope& z1, const Zonotope& z2) {
  require_dim(z2.dim(), z1.dim(), "minkowski_sum");
  Mat g(z1.dim(), z1.order() + z2.order());
  g << z1.generators(), z2.generators();
  return Zonotope(z1.center() + z2.center(), std::move(g));
}

Zonotope translate(const Zonotope& z, const Vec& shift) {
  require_dim(shift.size(), z.dim(), "translate");
  return Zonotope(z.center() + shift, z.generators());
}

Interval support_interval(const Zonotope& z, const Vec& direction) {
  require_dim(direction.size(), z.dim(), "support direction");
  const double mid = direction.dot(z.center());
  const double rad = z.order() == 0 ? 0.0 : (direction.transpose() * z.generators()).cwiseAbs().sum();
  return {mid - rad, mid + rad};
}

namespace {

/// Drops the box constraint of the factor with the largest normal component and
/// reparametrizes it by t = normal^T G xi clipped to the halfspace. Sound, and
/// the result reaches exactly up to the offset along the normal.
Zonotope eliminate_along_normal(const Zonotope& z, const Halfspace& h) {
  const Vec a = z.generators().transpose() * h.normal;
  Eigen::Index j = 0;
  if (a.cwiseAbs().maxCoeff(&j) <= 0.0) return z;
  const double rho = a.lpNorm<1>();
  const double hi = std::min(rho, h.offset - h.normal.dot(z.center()));
  const double lo = -rho;
  const Vec gj = z.generators().col(j) / a(j);
  Mat g = z.generators();
  for (Eigen::Index i = 0; i < g.cols(); ++i)
    if (i != j) g.col(i) -= gj * a(i);
  g.col(j) = gj * (0.5 * (hi - lo));
  return Zonotope(z.center() + gj * (0.5 * (hi + lo)), std::move(g));
}

}  // namespace

HalfspaceCut halfspace_intersect(const Zonotope& z, const Halfspace& h) {
  const Interval s = support_interval(z, h.normal);
  if (s.upper <= h.offset) return {CutKind::Inside, z, 0.0};
  if (s.lower > h.offset) return {CutKind::Outside, Zonotope(), 0.0};

  auto cz = ConstrainedZonotope::from_halfspace(z, h);
  if (!cz.contract()) return {CutKind::Outside, Zonotope(), 0.0};
  Zonotope out = cz.enclose();
  const double scale = 1.0 + std::abs(h.offset) + s.width();
  // When the enclosure already lies inside H it equals Z cap H exactly.
  const bool exact = support_interval(out, h.normal).upper <= h.offset + 1e-12 * scale;
  if (!exact) out = eliminate_along_normal(out, h);
  const double infl = exact ? 0.0 : diameter(out);
  return {CutKind::Straddle, std::move(out), infl};
}

PolyhedronCut polyhedron_intersect(const Zonotope& z, const Polyhedron& p) {
  Zonotope cur = z;
  bool exact = true;
  for (const auto& h : p.halfspaces) {
    auto cut = halfspace_intersect(cur, h);
    if (cut.kind == CutKind::Outside) return {std::nullopt, 0.0};
    if (cut.inflation > 0.0) exact = false;
    cur = std::move(cut.set);
  }
  const double infl = exact ? 0.0 : diameter(cur);
  return {std::move(cur), infl};
}

Reduction reduce_order(const Zonotope& z, Eigen::Index max_generators) {
  const Eigen::Index n = z.dim();
  if (max_generators < n)
    throw std::invalid_argument("reduce_order: generator budget " + std::to_string(max_generators) +
                                " below dimension " + std::to_string(n));
  const Eigen::Index p = z.order();
  if (p <= max_generators) return {z, 0.0};

  const Mat& g = z.generators();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::vector<double> score(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j)
    score[static_cast<std::size_t>(j)] = g.col(j).lpNorm<1>() - g.col(j).lpNorm<Eigen::Infinity>();
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return score[static_cast<std::size_t>(a)] < score[static_cast<std::size_t>(b)];
  });

  const Eigen::Index boxed = p - max_generators + n;
  std::vector<bool> is_boxed(static_cast<std::size_t>(p), false);
  Vec box = Vec::Zero(n);
  double inflation = 0.0;
  for (Eigen::Index k = 0; k < boxed; ++k) {
    const Eigen::Index j = idx[static_cast<std::size_t>(k)];
    is_boxed[static_cast<std::size_t>(j)] = true;
    box += g.col(j).cwiseAbs();
    inflation += g.col(j).norm();
  }
  Mat out(n, max_generators);
  Eigen::Index col = 0;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!is_boxed[static_cast<std::size_t>(j)]) out.col(col++) = g.col(j);
  out.rightCols(n) = Mat(box.asDiagonal());
  return {Zonotope(z.center(), std::move(out)), inflation};
}

double diameter(const Zonotope& z) { return 2.0 * z.radius().norm(); }

// ---------------------------------------------------------------------------
// Membership and volume

namespace {

/// Unit normal orthogonal to the n-1 columns of m (n x (n-1)); zero if degenerate.
Vec orthogonal_normal(const Mat& m) {
  const Eigen::Index n = m.rows();
  Vec d(n);
  Mat minor(n - 1, n - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index r = 0;
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) minor.row(r++) = m.row(k);
    const double det = n - 1 == 0 ? 1.0 : minor.determinant();
    d(i) = (i % 2 == 0 ? 1.0 : -1.0) * det;
  }
  const double nd = d.norm();
  const double scale = std::max(1.0, m.colwise().norm().prod());
  if (nd <= 1e-12 * scale) return Vec::Zero(n);
  return d / nd;
}

bool contains_full_rank(const Mat& g, const Vec& y, double tol) {
  const Eigen::Index n = g.rows();
  const Eigen::Index p = g.cols();
  if (n == 1) return std::abs(y(0)) <= g.cwiseAbs().sum() + tol;

  const double y_scale = 1.0 + y.norm();
  std::vector<int> pick(static_cast<std::size_t>(n - 1));
  std::iota(pick.begin(), pick.end(), 0);
  Mat m(n, n - 1);
  std::size_t visited = 0;
  for (;;) {
    if (++visited > 5'000'000) throw std::runtime_error("contains: too many facets to enumerate");
    for (Eigen::Index k = 0; k < n - 1; ++k) m.col(k) = g.col(pick[static_cast<std::size_t>(k)]);
    const Vec d = orthogonal_normal(m);
    if (d.squaredNorm() > 0.0) {
      const double lhs = std::abs(d.dot(y));
      const double rhs = (d.transpose() * g).cwiseAbs().sum();
      if (lhs > rhs + tol * y_scale) return false;
    }
    // next combination
    Eigen::Index i = n - 2;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == p - (n - 1) + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (Eigen::Index k = i + 1; k < n - 1; ++k)
      pick[static_cast<std::size_t>(k)] = pick[static_cast<std::size_t>(k - 1)] + 1;
  }
  return true;
}

}  // namespace

bool contains(const Zonotope& z, const Vec& x, double tol) {
  require_dim(x.size(), z.dim(), "contains point");
  const Vec y = x - z.center();
  if (z.order() == 0) return y.lpNorm<Eigen::Infinity>() <= tol * (1.0 + x.norm());
  const Eigen::Index r = z.rank();
  if (r == z.dim()) return contains_full_rank(z.generators(), y, tol);
  // Work inside the span of the generators.
  Eigen::JacobiSVD<Mat> svd(z.generators(), Eigen::ComputeFullU);
  const Mat u = svd.matrixU();
  const Mat basis = u.leftCols(r);
  const Vec off_span = y - basis * (basis.transpose() * y);
  if (off_span.norm() > tol * (1.0 + x.norm())) return false;
  if (r == 0) return true;
  return contains_full_rank(basis.transpose() * z.generators(), basis.transpose() * y, tol);
}

double volume_estimate(const Zonotope& z, std::size_t samples, std::uint64_t seed) {
  return volume_estimate(std::span<const Zonotope>(&z, 1), samples, seed);
}

double volume_estimate(std::span<const Zonotope> sets, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("volume_estimate: samples must be positive");
  std::vector<const Zonotope*> live;
  for (const auto& z : sets)
    if (z.order() > 0 && z.rank() == z.dim()) live.push_back(&z);
  if (live.empty()) return 0.0;
  const Eigen::Index n = live.front()->dim();
  Vec lo = live.front()->hull_lower();
  Vec hi = live.front()->hull_upper();
  for (const auto* z : live) {
    require_dim(z->dim(), n, "volume_estimate");
    lo = lo.cwiseMin(z->hull_lower());
    hi = hi.cwiseMax(z->hull_upper());
  }
  CounterRng rng(seed, 0x701);
  std::size_t hits = 0;
  Vec x(n);
  for (std::size_t s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < n; ++i) x(i) = rng.uniform(lo(i), hi(i));
    for (const auto* z : live) {
      if (contains(*z, x, 0.0)) {
        ++hits;
        break;
      }
    }
  }
  return (hi - lo).prod() * static_cast<double>(hits) / static_cast<double>(samples);
}

}  // namespace zonocert
