#include "zonocert/pwa.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "zonocert/errors.hpp"
#include "zonocert/linalg.hpp"
#include "zonocert/parallel.hpp"

namespace zonocert {

Benchmark parse_benchmark(const std::string& name) {
  if (name == "FourQuad" || name == "4Quad" || name == "fourquad") return Benchmark::FourQuad;
  if (name == "EightSec" || name == "8Sec" || name == "eightsec") return Benchmark::EightSec;
  if (name == "CoupledOsc" || name == "coupledosc") return Benchmark::CoupledOsc;
  if (name == "TripleOsc" || name == "tripleosc") return Benchmark::TripleOsc;
  throw std::invalid_argument("unknown benchmark '" + name + "'");
}

std::string to_string(Benchmark b) {
  switch (b) {
    case Benchmark::FourQuad: return "FourQuad";
    case Benchmark::EightSec: return "EightSec";
    case Benchmark::CoupledOsc: return "CoupledOsc";
    case Benchmark::TripleOsc: return "TripleOsc";
  }
  return "?";
}

void PwaSystem::validate() const {
  const Eigen::Index n = state_dim, m = input_dim;
  if (n <= 0 || m <= 0) throw std::invalid_argument("system dimensions must be positive");
  if (modes.empty()) throw std::invalid_argument("system needs at least one mode");
  for (const auto& md : modes) {
    if (md.a.rows() != n || md.a.cols() != n) throw DimensionMismatch("mode A must be n x n");
    if (md.b.rows() != n || md.b.cols() != m) throw DimensionMismatch("mode B must be n x m");
    if (!md.a.allFinite() || !md.b.allFinite()) throw std::invalid_argument("mode matrices must be finite");
    for (const auto& h : md.region.halfspaces)
      if (h.normal.size() != n) throw DimensionMismatch("region halfspace dimension");
  }
  if (!(sigma_w >= 0.0)) throw std::invalid_argument("sigma_w must be nonnegative");
  if (action_lower.size() != m || action_upper.size() != m) throw DimensionMismatch("action bounds");
  if ((action_lower.array() > action_upper.array()).any()) throw std::invalid_argument("empty action box");
  if (domain_lower.size() != n || domain_upper.size() != n) throw DimensionMismatch("domain box");
  if (target_center.size() != n) throw DimensionMismatch("target center");
  if (!(target_radius > 0.0)) throw std::invalid_argument("target radius must be positive");
}

Zonotope PwaSystem::disturbance() const {
  return Zonotope(Vec::Zero(state_dim), sigma_w * Mat::Identity(state_dim, state_dim));
}

bool PwaSystem::in_domain(const Vec& x, double tol) const {
  return ((x.array() >= domain_lower.array() - tol) && (x.array() <= domain_upper.array() + tol)).all();
}

bool PwaSystem::action_admissible(const Vec& u, double tol) const {
  return u.size() == input_dim &&
         ((u.array() >= action_lower.array() - tol) && (u.array() <= action_upper.array() + tol)).all();
}

Vec PwaSystem::clip_action(const Vec& u) const { return u.cwiseMax(action_lower).cwiseMin(action_upper); }

double PwaSystem::max_input_gain() const {
  double g = 0.0;
  for (const auto& md : modes) g = std::max(g, spectral_norm_certified(md.b));
  return g;
}

PartitionCheck check_partition(const PwaSystem& sys, std::size_t samples, std::uint64_t seed) {
  CounterRng rng(seed, 0xA11);
  PartitionCheck out;
  out.samples = samples;
  for (std::size_t s = 0; s < samples; ++s) {
    Vec x(sys.state_dim);
    for (Eigen::Index i = 0; i < sys.state_dim; ++i) x(i) = rng.uniform(sys.domain_lower(i), sys.domain_upper(i));
    std::size_t closed = 0, interior = 0;
    for (const auto& md : sys.modes) {
      if (md.region.contains(x)) ++closed;
      if (md.region.interior_contains(x)) ++interior;
    }
    if (closed == 0) ++out.uncovered;
    if (interior > 1) ++out.interior_overlap;
  }
  return out;
}

std::size_t mode_of(const PwaSystem& sys, const Vec& x) {
  if (x.size() != sys.state_dim) throw DimensionMismatch("mode_of: state dimension");
  for (std::size_t i = 0; i < sys.modes.size(); ++i)
    if (sys.modes[i].region.contains(x)) return i;
  throw NoMode("state lies in no mode region");
}

Vec step_point(const PwaSystem& sys, const Vec& x, const Vec& u, const Vec& w) {
  if (u.size() != sys.input_dim) throw DimensionMismatch("step_point: input dimension");
  if (w.size() != sys.state_dim) throw DimensionMismatch("step_point: disturbance dimension");
  const auto& md = sys.modes[mode_of(sys, x)];
  return md.a * x + md.b * u + w;
}

Vec nominal_step(const PwaSystem& sys, const Vec& x, const Vec& u) {
  return step_point(sys, x, u, Vec::Zero(sys.state_dim));
}

double noise_radius(const PwaSystem& sys, const Mat& p_sqrt) {
  if (p_sqrt.size() == 0) return sys.sigma_w * static_cast<double>(sys.state_dim);
  return sys.sigma_w * p_sqrt.colwise().norm().sum();
}

Zonotope ZonotopeFamily::interval_enclosure() const {
  if (fragments.empty()) throw EmptyReachSet("empty family has no enclosure");
  Vec lo = fragments.front().hull_lower();
  Vec hi = fragments.front().hull_upper();
  for (const auto& z : fragments) {
    lo = lo.cwiseMin(z.hull_lower());
    hi = hi.cwiseMax(z.hull_upper());
  }
  return Zonotope::from_bounds(lo, hi);
}

bool ZonotopeFamily::contains(const Vec& x, double tol) const {
  return std::any_of(fragments.begin(), fragments.end(),
                     [&](const Zonotope& z) { return zonocert::contains(z, x, tol); });
}

FamilyStep step_family(const PwaSystem& sys, const ZonotopeFamily& fam, const Vec& u,
                       const StepBudgets& budgets, const Mat& p_sqrt) {
  if (u.size() != sys.input_dim) throw DimensionMismatch("step_family: input dimension");
  if (!sys.action_admissible(u)) throw std::invalid_argument("step_family: action outside bounds");

  const std::size_t modes = sys.modes.size();
  const Zonotope w = sys.disturbance();
  const double r_w = noise_radius(sys, p_sqrt);
  const double norm_scale = p_sqrt.size() == 0 ? 1.0 : spectral_norm_certified(p_sqrt);

  struct Child {
    std::optional<Zonotope> set;
    double eta = 0.0;
  };
  std::vector<Child> slots(fam.size() * modes);
  parallel_for(fam.size(), [&](std::size_t parent) {
    for (std::size_t i = 0; i < modes; ++i) {
      const auto& md = sys.modes[i];
      auto cut = polyhedron_intersect(fam.fragments[parent], md.region);
      if (cut.empty()) continue;
      Zonotope next = affine_map(*cut.set, md.a, md.b * u);
      if (sys.sigma_w > 0.0) next = minkowski_sum(next, w);
      auto red = reduce_order(next, budgets.generators);
      // The intersection error is measured before the map, so push it through ||A||.
      const double cut_eta = cut.inflation * spectral_norm_certified(md.a);
      slots[parent * modes + i] = {std::move(red.set), norm_scale * (red.inflation + cut_eta) + r_w};
    }
  });

  FamilyStep out;
  out.eta_step = r_w;
  std::vector<Zonotope> children;
  for (auto& s : slots) {
    if (!s.set) continue;
    out.eta_step = std::max(out.eta_step, s.eta);
    children.push_back(std::move(*s.set));
  }
  if (children.empty()) throw EmptyReachSet("all fragments vanished during mode splitting");

  double dropped_frac = 0.0;
  if (children.size() > budgets.fragments) {
    out.budget_hit = true;
    std::vector<std::size_t> order(children.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> vol(children.size());
    double total = 0.0;
    for (std::size_t j = 0; j < children.size(); ++j) {
      vol[j] = children[j].hull_volume();
      total += vol[j];
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vol[a] > vol[b]; });
    std::vector<bool> keep(children.size(), false);
    for (std::size_t k = 0; k < budgets.fragments; ++k) keep[order[k]] = true;
    double dropped = 0.0;
    std::vector<Zonotope> kept;
    kept.reserve(budgets.fragments);
    for (std::size_t j = 0; j < children.size(); ++j) {
      if (keep[j]) {
        kept.push_back(std::move(children[j]));
      } else {
        dropped += vol[j];
        ++out.dropped_fragments;
      }
    }
    children = std::move(kept);
    dropped_frac = total > 0.0 ? dropped / total : 0.0;
  }

  for (const auto& z : children)
    if (!sys.in_domain(z.hull_lower(), 1e-12) || !sys.in_domain(z.hull_upper(), 1e-12)) out.domain_exit = true;

  const double prev = fam.dropped_volume_fraction;
  out.family = ZonotopeFamily(std::move(children), 1.0 - (1.0 - prev) * (1.0 - dropped_frac), fam.step + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmarks

namespace {

Halfspace hs(std::initializer_list<double> n, double b) {
  Vec v(static_cast<Eigen::Index>(n.size()));
  Eigen::Index i = 0;
  for (double x : n) v(i++) = x;
  return Halfspace(std::move(v), b);
}

Mat rotation(double theta) {
  Mat r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

PwaSystem four_quad() {
  PwaSystem s;
  s.name = "FourQuad";
  s.state_dim = 2;
  s.input_dim = 2;
  Mat base(2, 2);
  base << 0.75, 0.25, -0.25, 0.75;
  const Mat id = Mat::Identity(2, 2);
  // quadrants 1..4 counterclockwise
  s.modes.push_back({Polyhedron{{hs({-1, 0}, 0), hs({0, -1}, 0)}}, base, id});
  s.modes.push_back({Polyhedron{{hs({1, 0}, 0), hs({0, -1}, 0)}}, base.transpose(), id});
  s.modes.push_back({Polyhedron{{hs({1, 0}, 0), hs({0, 1}, 0)}}, base, id});
  s.modes.push_back({Polyhedron{{hs({-1, 0}, 0), hs({0, 1}, 0)}}, base.transpose(), id});
  s.domain_lower = Vec::Constant(2, -3.0);
  s.domain_upper = Vec::Constant(2, 3.0);
  s.target_center = Vec::Constant(2, 2.0);
  s.target_radius = 0.5;
  return s;
}

PwaSystem eight_sec() {
  PwaSystem s;
  s.name = "EightSec";
  s.state_dim = 2;
  s.input_dim = 2;
  const double pi = std::numbers::pi;
  for (int i = 0; i < 8; ++i) {
    const double phi0 = i * pi / 4.0, phi1 = (i + 1) * pi / 4.0;
    // counterclockwise of the ray at phi0 and clockwise of the ray at phi1
    Polyhedron region{{hs({std::sin(phi0), -std::cos(phi0)}, 0.0), hs({-std::sin(phi1), std::cos(phi1)}, 0.0)}};
    const double theta = pi / 12.0 + (pi / 6.0 - pi / 12.0) * i / 7.0;
    s.modes.push_back({std::move(region), 0.79 * rotation(theta), Mat::Identity(2, 2)});
  }
  s.domain_lower = Vec::Constant(2, -3.0);
  s.domain_upper = Vec::Constant(2, 3.0);
  s.target_center = Vec(2);
  s.target_center << 1.2, 0.4;
  s.target_radius = 0.5;
  return s;
}

/// Chain of unit masses joined by springs (wall-m0, m0-m1, ...), each spring stiffer
/// in tension than in compression, uniform viscous damping, forward Euler.
PwaSystem spring_chain(const std::string& name, int masses, double k_tension, double k_compression,
                       double damping, double dt, double box) {
  PwaSystem s;
  s.name = name;
  s.state_dim = 2 * masses;
  s.input_dim = masses;
  const Eigen::Index n = s.state_dim;
  const double input_gain = 0.006;  // ||B||_2
  Mat b = Mat::Zero(n, masses);
  b.bottomRows(masses) = input_gain * Mat::Identity(masses, masses);

  for (int mode = 0; mode < (1 << masses); ++mode) {
    Mat k = Mat::Zero(masses, masses);
    Polyhedron region;
    for (int sp = 0; sp < masses; ++sp) {
      const bool tension = (mode >> sp) & 1;
      const double ks = tension ? k_tension : k_compression;
      k(sp, sp) += ks;
      if (sp > 0) {
        k(sp - 1, sp - 1) += ks;
        k(sp, sp - 1) -= ks;
        k(sp - 1, sp) -= ks;
      }
      // relative displacement d = p_sp - p_{sp-1}; tension means d >= 0
      Vec normal = Vec::Zero(n);
      normal(sp) = 1.0;
      if (sp > 0) normal(sp - 1) = -1.0;
      region.halfspaces.emplace_back(tension ? Vec(-normal) : normal, 0.0);
    }
    Mat ac = Mat::Zero(n, n);
    ac.topRightCorner(masses, masses) = Mat::Identity(masses, masses);
    ac.bottomLeftCorner(masses, masses) = -k;
    ac.bottomRightCorner(masses, masses) = -damping * Mat::Identity(masses, masses);
    s.modes.push_back({std::move(region), Mat::Identity(n, n) + dt * ac, b});
  }
  s.domain_lower = Vec::Constant(n, -box);
  s.domain_upper = Vec::Constant(n, box);
  s.target_center = Vec::Zero(n);
  s.target_radius = 0.3;
  return s;
}

}  // namespace

PwaSystem make_benchmark(Benchmark which) {
  PwaSystem s;
  switch (which) {
    case Benchmark::FourQuad: s = four_quad(); break;
    case Benchmark::EightSec: s = eight_sec(); break;
    case Benchmark::CoupledOsc: s = spring_chain("CoupledOsc", 2, 3.0, 2.25, 2.0, 0.1, 2.0); break;
    case Benchmark::TripleOsc: s = spring_chain("TripleOsc", 3, 1.2, 0.9, 1.2, 0.2, 1.5); break;
  }
  s.sigma_w = 0.01;
  s.action_lower = Vec::Constant(s.input_dim, -1.0);
  s.action_upper = Vec::Constant(s.input_dim, 1.0);
  s.validate();
  return s;
}

PwaSystem make_benchmark(const std::string& name) { return make_benchmark(parse_benchmark(name)); }

double spectral_radius(const Mat& a) {
  Eigen::EigenSolver<Mat> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace zonocert
