#pragma once

// Independent reference computations used only by tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "zonocert/neural.hpp"
#include "zonocert/setgeom.hpp"

namespace zonocert::testing {

/// max / min of d^T x over Z by enumerating all 2^p sign patterns.
inline Interval support_by_vertices(const Zonotope& z, const Vec& d) {
  const Eigen::Index p = z.order();
  double lo = 1e300, hi = -1e300;
  for (long mask = 0; mask < (1L << p); ++mask) {
    Vec a(p);
    for (Eigen::Index j = 0; j < p; ++j) a(j) = (mask >> j) & 1 ? 1.0 : -1.0;
    const double v = d.dot(z.point(a));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (p == 0) lo = hi = d.dot(z.center());
  return {lo, hi};
}

/// Straight-line network evaluation written independently of Mlp::forward.
inline Vec interpret(const Mlp& net, const Vec& x) {
  std::vector<double> h(x.data(), x.data() + x.size());
  for (const auto& l : net.layers()) {
    std::vector<double> next(static_cast<std::size_t>(l.w.rows()));
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      double s = l.b(r);
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) s += l.w(r, c) * h[static_cast<std::size_t>(c)];
      switch (l.activation) {
        case Activation::ReLU: s = s > 0 ? s : 0; break;
        case Activation::Tanh: s = std::tanh(s); break;
        case Activation::Identity: break;
      }
      next[static_cast<std::size_t>(r)] = s;
    }
    h = std::move(next);
  }
  return Eigen::Map<Vec>(h.data(), static_cast<Eigen::Index>(h.size()));
}

/// Minimum over pre-activations of |z|: distance of x from the nearest ReLU kink.
inline double kink_margin(const Mlp& net, const Vec& x) {
  double m = 1e300;
  Vec h = x;
  for (const auto& l : net.layers()) {
    Vec z = l.w * h + l.b;
    if (l.activation == Activation::ReLU) m = std::min(m, z.cwiseAbs().minCoeff());
    Eigen::MatrixXd zm = z;
    apply_activation(l.activation, zm);
    h = zm.col(0);
  }
  return m;
}

inline Mat random_matrix(CounterRng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

inline Zonotope random_zonotope(CounterRng& rng, Eigen::Index n, Eigen::Index p, double spread = 1.0,
                                double gen_scale = 0.5) {
  return Zonotope(rng.uniform_vector(n, -spread, spread), random_matrix(rng, n, p, gen_scale));
}

/// Vertices and factor samples: the sample points used by soundness checks.
inline std::vector<Vec> probe_points(const Zonotope& z, CounterRng& rng, std::size_t n) {
  std::vector<Vec> pts;
  pts.reserve(n);
  const Eigen::Index p = z.order();
  for (std::size_t s = 0; s < n; ++s) {
    Vec a(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      // a quarter of the draws sit on a vertex coordinate
      const double u = rng.uniform();
      a(j) = u < 0.125 ? -1.0 : (u < 0.25 ? 1.0 : rng.uniform(-1.0, 1.0));
    }
    pts.push_back(z.point(a));
  }
  return pts;
}

}  // namespace zonocert::testing
