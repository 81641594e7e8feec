#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "zonocert/errors.hpp"
#include "zonocert/setgeom.hpp"

using namespace zonocert;
using namespace zonocert::testing;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Mat a_base() {
  Mat a(2, 2);
  a << 0.75, 0.25, -0.25, 0.75;
  return a;
}

/// Box-constrained least squares min ||c + G a - x|| by projected gradient.
double distance_to_zonotope(const Zonotope& z, const Vec& x) {
  const Mat& g = z.generators();
  Vec a = Vec::Zero(z.order());
  const double step = 1.0 / std::max(1e-12, (g.transpose() * g).norm());
  for (int it = 0; it < 20000; ++it) {
    const Vec r = z.center() + g * a - x;
    a = (a - step * (g.transpose() * r)).cwiseMax(-1.0).cwiseMin(1.0);
  }
  return (z.center() + g * a - x).norm();
}

}  // namespace

TEST_CASE("affine_map scales and shifts the unit box") {
  const Zonotope z(Vec::Zero(2), Mat::Identity(2, 2));
  const auto r = affine_map(z, 2.0 * Mat::Identity(2, 2), v2(1, 0));
  CHECK(r.center().isApprox(v2(1, 0)));
  CHECK(r.generators().isApprox(2.0 * Mat::Identity(2, 2)));
}

TEST_CASE("affine_map with identity leaves the set unchanged") {
  CounterRng rng(1);
  const auto z = random_zonotope(rng, 3, 5);
  const auto r = affine_map(z, Mat::Identity(3, 3), Vec::Zero(3));
  CHECK(r.center() == z.center());
  CHECK(r.generators() == z.generators());
}

TEST_CASE("affine_map of the 4Quad base matrix is exact on samples") {
  const Zonotope z(v2(2, 2), 0.5 * Mat::Identity(2, 2));
  const auto r = affine_map(z, a_base(), Vec::Zero(2));
  CHECK(r.center()(0) == doctest::Approx(2.0));
  CHECK(r.center()(1) == doctest::Approx(1.0));
  CounterRng rng(7);
  for (const auto& x : probe_points(z, rng, 1000)) CHECK(contains(r, a_base() * x));
}

TEST_CASE("affine_map rejects mismatched dimensions") {
  const Zonotope z(Vec::Zero(2), Mat::Identity(2, 2));
  CHECK_THROWS_AS(affine_map(z, Mat::Identity(3, 3), Vec::Zero(3)), DimensionMismatch);
  CHECK_THROWS_AS(affine_map(z, Mat::Identity(2, 2), Vec::Zero(3)), DimensionMismatch);
}

TEST_CASE("minkowski_sum concatenates generators") {
  const Zonotope z(Vec::Zero(2), Mat::Identity(2, 2));
  const Zonotope w(Vec::Zero(2), 0.01 * Mat::Identity(2, 2));
  const auto s = minkowski_sum(z, w);
  REQUIRE(s.order() == 4);
  CHECK(s.generators().leftCols(2) == Mat::Identity(2, 2));
  CHECK(s.generators().rightCols(2) == 0.01 * Mat::Identity(2, 2));

  const auto same = minkowski_sum(z, Zonotope(Vec::Zero(2)));
  CHECK(same.generators() == z.generators());
  CHECK_THROWS_AS(minkowski_sum(z, Zonotope(Vec::Zero(3))), DimensionMismatch);
}

TEST_CASE("minkowski_sum of boxes adds interval hulls") {
  CounterRng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto a = Zonotope::box(rng.uniform_vector(3, -1, 1), rng.uniform_vector(3, 0, 1));
    const auto b = Zonotope::box(rng.uniform_vector(3, -1, 1), rng.uniform_vector(3, 0, 1));
    const auto s = minkowski_sum(a, b);
    CHECK((s.hull_lower() - (a.hull_lower() + b.hull_lower())).norm() < 1e-12);
    CHECK((s.hull_upper() - (a.hull_upper() + b.hull_upper())).norm() < 1e-12);
  }
}

TEST_CASE("support_interval on a scalar zonotope") {
  Mat g(1, 2);
  g << 0.1, 0.1;
  const Zonotope z(Vec::Constant(1, -9.0), g);
  const auto s = support_interval(z, Vec::Ones(1));
  CHECK(s.lower == doctest::Approx(-9.2));
  CHECK(s.upper == doctest::Approx(-8.8));
}

TEST_CASE("support_interval of a point is degenerate") {
  const Zonotope z(v2(1.5, -2));
  const auto s = support_interval(z, v2(2, 1));
  CHECK(s.lower == doctest::Approx(1.0));
  CHECK(s.upper == doctest::Approx(1.0));
}

TEST_CASE("support_interval matches exhaustive sign patterns") {
  CounterRng rng(11);
  for (int t = 0; t < 60; ++t) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(4));
    const Eigen::Index p = static_cast<Eigen::Index>(rng.below(13));
    const auto z = random_zonotope(rng, n, p);
    const Vec d = rng.uniform_vector(n, -2, 2);
    const auto fast = support_interval(z, d);
    const auto brute = support_by_vertices(z, d);
    CHECK(fast.lower == doctest::Approx(brute.lower).epsilon(1e-12));
    CHECK(fast.upper == doctest::Approx(brute.upper).epsilon(1e-12));
  }
}

TEST_CASE("halfspace_intersect cuts the unit box exactly on an axis") {
  const Zonotope z(Vec::Zero(2), Mat::Identity(2, 2));
  const auto cut = halfspace_intersect(z, Halfspace(v2(1, 0), 0.0));
  REQUIRE(cut.kind == CutKind::Straddle);
  CHECK((cut.set.center() - v2(-0.5, 0)).norm() < 1e-9);
  CHECK(cut.set.radius()(0) == doctest::Approx(0.5));
  CHECK(cut.set.radius()(1) == doctest::Approx(1.0));
  CHECK(cut.inflation == 0.0);
  CounterRng rng(5);
  for (int s = 0; s < 2000; ++s) {
    const Vec x = z.sample(rng);
    if (x(0) <= 0.0) CHECK(contains(cut.set, x));
  }
}

TEST_CASE("halfspace_intersect classifies inside and outside") {
  const Halfspace h(v2(1, 0), 0.0);
  const Zonotope far(v2(5, 5), 0.1 * Mat::Identity(2, 2));
  CHECK(halfspace_intersect(far, h).kind == CutKind::Outside);
  const Zonotope near(v2(-5, -5), 0.1 * Mat::Identity(2, 2));
  const auto in = halfspace_intersect(near, h);
  CHECK(in.kind == CutKind::Inside);
  CHECK(in.set.center() == near.center());
}

TEST_CASE("halfspace_intersect is sound and stays within the halfspace along its normal") {
  CounterRng rng(21);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(2));
    const auto z = random_zonotope(rng, n, 2 + static_cast<Eigen::Index>(rng.below(5)));
    const Vec normal = rng.uniform_vector(n, -1, 1);
    const auto s = support_interval(z, normal);
    const Halfspace h(normal, rng.uniform(s.lower, s.upper));
    const auto cut = halfspace_intersect(z, h);
    if (cut.kind == CutKind::Outside) continue;
    if (cut.kind == CutKind::Straddle)
      CHECK(support_interval(cut.set, normal).upper <= h.offset + 1e-9);
    for (const auto& x : probe_points(z, rng, 300))
      if (h.contains(x)) CHECK(contains(cut.set, x));
  }
}

TEST_CASE("polyhedron_intersect on quadrants") {
  const Zonotope box(Vec::Zero(2), Mat::Identity(2, 2));
  const Polyhedron quadrant{{Halfspace(v2(1, 0), 0), Halfspace(v2(0, 1), 0)}};
  const auto cut = polyhedron_intersect(box, quadrant);
  REQUIRE_FALSE(cut.empty());
  CHECK((cut.set->center() - v2(-0.5, -0.5)).norm() < 1e-9);
  CHECK((cut.set->radius() - v2(0.5, 0.5)).norm() < 1e-9);

  const Zonotope inner(v2(-2, -2), 0.3 * Mat::Identity(2, 2));
  const auto same = polyhedron_intersect(inner, quadrant);
  REQUIRE_FALSE(same.empty());
  CHECK(same.set->generators() == inner.generators());

  const Zonotope away(v2(3, 3), 0.3 * Mat::Identity(2, 2));
  CHECK(polyhedron_intersect(away, quadrant).empty());
}

TEST_CASE("polyhedron_intersect detects emptiness the support test misses") {
  // Thin diagonal segment near the corner of {x1 <= 0, x2 <= 0}: each halfspace
  // alone straddles, the intersection is empty.
  Mat g(2, 1);
  g << 1, -1;
  const Zonotope seg(v2(0.6, 0.6), g);
  const Polyhedron quadrant{{Halfspace(v2(1, 0), 0), Halfspace(v2(0, 1), 0)}};
  CHECK(polyhedron_intersect(seg, quadrant).empty());
}

TEST_CASE("reduce_order leaves small sets unchanged") {
  CounterRng rng(4);
  const auto z = random_zonotope(rng, 2, 3);
  const auto r = reduce_order(z, 5);
  CHECK(r.inflation == 0.0);
  CHECK(r.set.generators() == z.generators());
  CHECK_THROWS_AS(reduce_order(z, 1), std::invalid_argument);
}

TEST_CASE("reduce_order of parallel generators contains the original") {
  Mat g(2, 3);
  g << 1, 1, 0.2, 0, 0, 0.1;
  const Zonotope z(Vec::Zero(2), g);
  const auto r = reduce_order(z, 2);
  CHECK(r.set.order() == 2);
  CHECK(r.inflation >= 0.0);
  CounterRng rng(8);
  for (const auto& x : probe_points(z, rng, 2000)) CHECK(contains(r.set, x));
}

TEST_CASE("reduce_order from 40 to 10 generators is sound") {
  CounterRng rng(9);
  const auto z = random_zonotope(rng, 3, 40, 1.0, 0.2);
  const auto r = reduce_order(z, 10);
  CHECK(r.set.order() == 10);
  for (const auto& x : probe_points(z, rng, 10000)) REQUIRE(contains(r.set, x));
}

TEST_CASE("reduce_order inflation bounds the distance back to the original") {
  CounterRng rng(10);
  for (int t = 0; t < 10; ++t) {
    const auto z = random_zonotope(rng, 2, 5, 1.0, 0.5);
    const auto r = reduce_order(z, 3);
    for (const auto& x : probe_points(r.set, rng, 40)) CHECK(distance_to_zonotope(z, x) <= r.inflation + 1e-6);
  }
}

TEST_CASE("diameter bounds") {
  CHECK(diameter(Zonotope(v2(1, 2))) == 0.0);
  const double r = 0.7;
  const double d = diameter(Zonotope(Vec::Zero(2), r * Mat::Identity(2, 2)));
  CHECK(d >= 2 * r * std::sqrt(2.0) - 1e-12);
  CHECK(d <= 2 * r * std::sqrt(2.0) + 1e-12);
  Mat g(3, 1);
  g << 1, -2, 2;
  CHECK(diameter(Zonotope(Vec::Zero(3), g)) == doctest::Approx(6.0));
}

TEST_CASE("diameter never underestimates the vertex diameter") {
  CounterRng rng(12);
  for (int t = 0; t < 30; ++t) {
    const auto z = random_zonotope(rng, 2, 1 + static_cast<Eigen::Index>(rng.below(6)));
    double exact = 0.0;
    const Eigen::Index p = z.order();
    for (long a = 0; a < (1L << p); ++a)
      for (long b = 0; b < (1L << p); ++b) {
        Vec fa(p), fb(p);
        for (Eigen::Index j = 0; j < p; ++j) {
          fa(j) = (a >> j) & 1 ? 1 : -1;
          fb(j) = (b >> j) & 1 ? 1 : -1;
        }
        exact = std::max(exact, (z.point(fa) - z.point(fb)).norm());
      }
    CHECK(diameter(z) >= exact - 1e-12);
  }
}

TEST_CASE("volume_estimate on known areas (factor box volume 2^n |det G|)") {
  const Zonotope square(Vec::Zero(2), Mat::Identity(2, 2));
  CHECK(volume_estimate(square, 100000, 1) == doctest::Approx(4.0).epsilon(0.05));
  Mat g(2, 2);
  g << 1, 1, 0, 1;
  CHECK(volume_estimate(Zonotope(Vec::Zero(2), g), 100000, 2) == doctest::Approx(4.0 * std::abs(g.determinant())).epsilon(0.05));
  Mat flat(2, 2);
  flat << 1, 2, 1, 2;
  CHECK(volume_estimate(Zonotope(Vec::Zero(2), flat), 1000, 3) == 0.0);
  CHECK(volume_estimate(square, 5000, 9) == volume_estimate(square, 5000, 9));
}

TEST_CASE("contains agrees with the support function on random probes") {
  CounterRng rng(13);
  for (int t = 0; t < 30; ++t) {
    const auto z = random_zonotope(rng, 3, 5);
    for (int s = 0; s < 30; ++s) {
      const Vec x = z.center() + rng.uniform_vector(3, -2, 2);
      bool separated = false;
      for (int k = 0; k < 400 && !separated; ++k) {
        const Vec d = rng.normal_vector(3);
        if (d.dot(x) > support_interval(z, d).upper + 1e-9) separated = true;
      }
      if (separated) CHECK_FALSE(contains(z, x));
      if (contains(z, x, 0.0)) CHECK_FALSE(separated);
    }
  }
}
