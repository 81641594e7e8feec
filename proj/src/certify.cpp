#include "zonocert/certify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>

#include "zonocert/errors.hpp"
#include "zonocert/linalg.hpp"
#include "zonocert/parallel.hpp"

namespace zonocert {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// V*(x) upper bound over Z with an already scaled actor.
double value_upper(const Mlp& scaled_actor, const Mlp& critic, const Zonotope& z) {
  return envelope_upper(prop_value_composite(scaled_actor, critic, z).value);
}

Mat columns(const std::vector<Vec>& pts, Eigen::Index n) {
  Mat m(n, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t j = 0; j < pts.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = pts[j];
  return m;
}

/// Mode of x, or of its projection onto the domain box when x lies in no region.
std::size_t mode_clamped(const PwaSystem& sys, const Vec& x) {
  try {
    return mode_of(sys, x);
  } catch (const NoMode&) {
    return mode_of(sys, x.cwiseMax(sys.domain_lower).cwiseMin(sys.domain_upper));
  }
}

/// Points of a family: `per_fragment` factor samples per fragment, centers first.
std::vector<Vec> family_samples(const ZonotopeFamily& fam, std::size_t per_fragment, CounterRng& rng) {
  std::vector<Vec> pts;
  for (const auto& z : fam.fragments) {
    if (per_fragment == 0) continue;
    pts.push_back(z.center());
    for (std::size_t s = 1; s < per_fragment; ++s) pts.push_back(z.sample(rng));
  }
  return pts;
}

double radical_inverse(std::uint64_t i, std::uint64_t base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

constexpr std::uint64_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

}  // namespace

// ---------------------------------------------------------------------------
// Policies

SetPolicy set_actor_policy(const SetActor& actor) {
  auto a = std::make_shared<const SetActor>(actor);
  return [a](const ZonotopeFamily& fam) { return a->act(fam); };
}

Vec baseline_oracle_center(const HjModel& model, const ZonotopeFamily& fam) {
  if (fam.empty()) throw std::invalid_argument("oracle-center: empty family");
  return model.act(fam.interval_enclosure().center());
}

SetPolicy oracle_center_policy(const HjModel& model) {
  auto m = std::make_shared<const HjModel>(model);
  return [m](const ZonotopeFamily& fam) { return baseline_oracle_center(*m, fam); };
}

Vec baseline_scenario_opt(const HjModel& model, const PwaSystem& sys, const ZonotopeFamily& fam, std::size_t points,
                          std::size_t budget, std::uint64_t seed) {
  if (fam.empty()) throw std::invalid_argument("scenario-opt: empty family");
  CounterRng rng(seed, 31);
  const Eigen::Index n = sys.state_dim, m = sys.input_dim;
  // Scenario points spread round-robin over the fragments, centers first.
  std::vector<Vec> pts;
  for (std::size_t i = 0; i < std::max<std::size_t>(points, 1); ++i) {
    const auto& z = fam.fragments[i % fam.size()];
    pts.push_back(i < fam.size() ? z.center() : z.sample(rng));
  }
  std::vector<std::size_t> modes;
  for (const auto& p : pts) modes.push_back(mode_clamped(sys, p));
  const auto k = static_cast<Eigen::Index>(pts.size());
  Mat ax(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    ax.col(j) = sys.modes[modes[static_cast<std::size_t>(j)]].a * pts[static_cast<std::size_t>(j)];
  std::size_t used = 0;
  auto cost = [&](const Vec& u) {
    ++used;
    Mat next = ax;
    for (Eigen::Index j = 0; j < k; ++j) next.col(j) += sys.modes[modes[static_cast<std::size_t>(j)]].b * u;
    return model.value_batch(next).maxCoeff();
  };
  Vec best = sys.clip_action(model.act(fam.interval_enclosure().center()));
  double best_cost = cost(best);
  const Vec hw = sys.action_half_width();
  while (used < std::max<std::size_t>(budget / 2, 1)) {
    Vec u = sys.action_lower + (sys.action_upper - sys.action_lower).cwiseProduct(rng.uniform_vector(m, 0.0, 1.0));
    const double c = cost(u);
    if (c < best_cost) {
      best_cost = c;
      best = u;
    }
  }
  // Coordinate refinement with a shrinking step.
  double step = 0.25;
  while (used + 2 <= budget && step > 1e-4) {
    bool improved = false;
    for (Eigen::Index i = 0; i < m && used + 2 <= budget; ++i)
      for (double sgn : {1.0, -1.0}) {
        Vec u = best;
        u(i) += sgn * step * hw(i);
        u = sys.clip_action(u);
        const double c = cost(u);
        if (c < best_cost) {
          best_cost = c;
          best = u;
          improved = true;
        }
      }
    if (!improved) step *= 0.5;
  }
  return best;
}

SetPolicy scenario_opt_policy(const HjModel& model, const PwaSystem& sys, std::size_t points, std::size_t budget,
                              std::uint64_t seed) {
  auto m = std::make_shared<const HjModel>(model);
  auto s = std::make_shared<const PwaSystem>(sys);
  auto calls = std::make_shared<std::uint64_t>(0);
  return [m, s, calls, points, budget, seed](const ZonotopeFamily& fam) {
    return baseline_scenario_opt(*m, *s, fam, points, budget, mix64(seed + (*calls)++));
  };
}

// ---------------------------------------------------------------------------
// Target depth

std::vector<Zonotope> target_boundary_cover(const PwaSystem& sys, std::size_t cover_count, double box_radius) {
  if (cover_count == 0 || !(box_radius >= 0.0)) throw std::invalid_argument("boundary cover: bad count or radius");
  const Eigen::Index n = sys.state_dim;
  const double r = sys.target_radius;
  const Vec& xt = sys.target_center;
  std::vector<Zonotope> cover;
  if (n == 2) {
    const double half = std::numbers::pi / static_cast<double>(cover_count);
    for (std::size_t i = 0; i < cover_count; ++i) {
      const double mid = (2.0 * static_cast<double>(i) + 1.0) * half;
      Vec radial(2), tangent(2);
      radial << std::cos(mid), std::sin(mid);
      tangent << -std::sin(mid), std::cos(mid);
      const double sagitta = r * (1.0 - std::cos(half));
      Mat g(2, 2);
      g.col(0) = r * std::sin(half) * tangent;
      g.col(1) = (sagitta + box_radius) * radial;
      cover.emplace_back(xt + r * std::cos(half) * radial, g);
    }
    return cover;
  }
  if (static_cast<std::size_t>(n) > std::size(kPrimes)) throw DimensionMismatch("boundary cover: dimension too large");
  const std::size_t count = cover_count << static_cast<std::size_t>(n - 2);
  std::uint64_t i = 1;
  while (cover.size() < count) {
    Vec d(n);
    for (Eigen::Index j = 0; j < n; ++j) d(j) = 2.0 * radical_inverse(i, kPrimes[j]) - 1.0;
    ++i;
    if (d.norm() < 1e-3) continue;
    cover.push_back(Zonotope::box(xt + r * d / d.norm(), Vec::Constant(n, box_radius)));
  }
  return cover;
}

TargetDepth compute_target_depth_detail(const HjModel& model, const PwaSystem& sys, std::size_t cover_count,
                                        double box_radius) {
  if (!model.actor.all_finite() || !model.critic.all_finite()) throw std::invalid_argument("target depth: non-finite model");
  if (model.state_dim() != sys.state_dim) throw DimensionMismatch("target depth: model and system differ");
  const auto cover = target_boundary_cover(sys, cover_count, box_radius);
  const Mlp actor = model.scaled_actor();
  std::vector<double> upper(cover.size());
  parallel_for(cover.size(), [&](std::size_t i) { upper[i] = value_upper(actor, model.critic, cover[i]); });
  TargetDepth d;
  d.pieces = cover.size();
  d.raw = -*std::max_element(upper.begin(), upper.end());
  d.c_t = std::max(d.raw, 0.0);
  d.zero_depth = d.raw <= 0.0;
  d.heuristic_cover = sys.state_dim >= 3;
  return d;
}

double compute_target_depth(const HjModel& model, const PwaSystem& sys, std::size_t cover_count, double box_radius) {
  return compute_target_depth_detail(model, sys, cover_count, box_radius).c_t;
}

double value_upper_bound(const HjModel& model, const Zonotope& z) {
  return value_upper(model.scaled_actor(), model.critic, z);
}

// ---------------------------------------------------------------------------
// Trajectory certificate

double CertificateReport::eta_max() const {
  double e = 0.0;
  for (const auto& s : per_step) e = std::max(e, s.eta_step);
  return e;
}

std::size_t CertificateReport::fragments_at(int k) const {
  for (const auto& s : per_step)
    if (s.k == k) return s.fragment_count;
  return 0;
}

std::vector<Vec> CertificateReport::actions() const {
  std::vector<Vec> out;
  for (const auto& s : per_step) out.push_back(s.action);
  return out;
}

namespace {

bool near_mode_boundary(const PwaSystem& sys, const Vec& c, double tol) {
  for (const auto& m : sys.modes) {
    if (!m.region.contains(c, tol)) continue;
    for (const auto& h : m.region.halfspaces)
      if (std::abs(h.normal.dot(c) - h.offset) <= tol * h.normal.norm()) return true;
  }
  return false;
}

}  // namespace

CertificateReport verify_trajectory(const PwaSystem& sys, const HjModel& model, const SetPolicy& policy,
                                    const Zonotope& z0, double c_t, const VerifyOptions& opt) {
  if (z0.dim() != sys.state_dim) throw DimensionMismatch("verify_trajectory: Z0 dimension");
  if (!sys.in_domain(z0.hull_lower(), 1e-12) || !sys.in_domain(z0.hull_upper(), 1e-12))
    throw std::invalid_argument("verify_trajectory: Z0 must lie inside the domain");
  if (opt.k_max <= 0) throw std::invalid_argument("verify_trajectory: horizon must be positive");
  const Mlp actor = model.scaled_actor();
  CertificateReport rep;
  rep.c_t = c_t;
  rep.k_cert = opt.k_max;
  if (!(c_t > 0.0)) rep.warnings.push_back("target depth is not positive; certification is impossible");
  ZonotopeFamily fam(z0);
  if (opt.keep_families) rep.families.push_back(fam);
  bool warned_budget = false, warned_exit = false, warned_boundary = false;
  for (int k = 0; k < opt.k_max; ++k) {
    const Vec u = policy(fam);
    auto st = step_family(sys, fam, u, opt.budgets, opt.p_sqrt);
    fam = std::move(st.family);
    std::vector<double> upper(fam.size());
    parallel_for(fam.size(), [&](std::size_t i) { upper[i] = value_upper(actor, model.critic, fam.fragments[i]); });
    StepRecord rec;
    rec.k = k + 1;
    rec.fragment_count = fam.size();
    rec.v_bar = *std::max_element(upper.begin(), upper.end());
    rec.eta_step = st.eta_step;
    rec.dropped_volume_fraction = fam.dropped_volume_fraction;
    rec.action = u;
    rec.budget_hit = st.budget_hit;
    rec.domain_exit = st.domain_exit;
    for (const auto& z : fam.fragments) rec.center_near_boundary |= near_mode_boundary(sys, z.center(), 1e-6);
    if (rec.budget_hit && !warned_budget) {
      rep.warnings.push_back("fragment budget hit at step " + std::to_string(rec.k));
      warned_budget = true;
    }
    if (rec.domain_exit && !warned_exit) {
      rep.warnings.push_back("reach set left the domain at step " + std::to_string(rec.k));
      warned_exit = true;
    }
    if (rec.center_near_boundary && !warned_boundary) {
      rep.warnings.push_back("fragment center within 1e-6 of a mode boundary at step " + std::to_string(rec.k));
      warned_boundary = true;
    }
    rep.per_step.push_back(rec);
    if (opt.keep_families) rep.families.push_back(fam);
    rep.v_bar_final = rec.v_bar;
    if (c_t > 0.0 && rec.v_bar < -c_t) {
      rep.certified = true;
      rep.k_cert = rec.k;
      break;
    }
  }
  rep.margin = -rep.v_bar_final - c_t;
  return rep;
}

RolloutCheck rollout_check(const PwaSystem& sys, const HjModel& model, const Zonotope& z0,
                           const std::vector<Vec>& actions, double c_t, std::size_t samples, std::uint64_t seed,
                           const ZonotopeFamily* final_family) {
  CounterRng rng(seed, 41);
  const Eigen::Index n = sys.state_dim;
  RolloutCheck out;
  out.samples = samples;
  std::vector<Vec> finals;
  finals.reserve(samples);
  const Eigen::Index p = z0.order();
  const std::size_t corners = p <= 10 ? std::size_t{1} << p : 0;
  for (std::size_t s = 0; s < samples; ++s) {
    Vec x;
    if (s < corners) {
      Vec xi(p);
      for (Eigen::Index j = 0; j < p; ++j) xi(j) = (s >> j) & 1 ? 1.0 : -1.0;
      x = z0.point(xi);
    } else {
      x = z0.sample(rng);
    }
    for (const auto& u : actions) x = step_point(sys, x, u, rng.uniform_vector(n, -sys.sigma_w, sys.sigma_w));
    finals.push_back(std::move(x));
  }
  const Vec v = model.value_batch(columns(finals, n));
  for (std::size_t s = 0; s < samples; ++s) {
    const double vs = v(static_cast<Eigen::Index>(s));
    out.max_value = std::max(out.max_value, vs);
    out.violations += vs > -c_t;
    if (final_family && !final_family->contains(finals[s])) ++out.escaped;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-loop reachability

ReachRun reach_closed_loop(const PwaSystem& sys, const SetPolicy& policy, const Zonotope& z0, int steps,
                           const StepBudgets& budgets) {
  ReachRun run;
  run.families.emplace_back(z0);
  for (int k = 0; k < steps; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const Vec u = policy(run.families.back());
    run.action_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    auto st = step_family(sys, run.families.back(), u, budgets);
    run.budget_hit |= st.budget_hit;
    run.domain_exit |= st.domain_exit;
    run.actions.push_back(u);
    run.families.push_back(std::move(st.family));
  }
  return run;
}

std::vector<Vec> vertices_2d(const Zonotope& z) {
  if (z.dim() != 2) throw DimensionMismatch("vertices_2d: planar zonotope expected");
  std::vector<Vec> gens;
  for (Eigen::Index j = 0; j < z.order(); ++j) {
    Vec g = z.generators().col(j);
    if (g.norm() == 0.0) continue;
    if (g(1) < 0.0 || (g(1) == 0.0 && g(0) < 0.0)) g = -g;
    gens.push_back(std::move(g));
  }
  if (gens.empty()) return {z.center()};
  std::stable_sort(gens.begin(), gens.end(),
                   [](const Vec& a, const Vec& b) { return std::atan2(a(1), a(0)) < std::atan2(b(1), b(0)); });
  Vec v = z.center();
  for (const auto& g : gens) v -= g;
  std::vector<Vec> out;
  out.reserve(2 * gens.size());
  for (const auto& g : gens) {
    out.push_back(v);
    v += 2.0 * g;
  }
  for (const auto& g : gens) {
    out.push_back(v);
    v -= 2.0 * g;
  }
  return out;
}

double farthest_distance(const Zonotope& z, const Vec& point) {
  const Eigen::Index p = z.order();
  if (p == 0) return (z.center() - point).norm();
  double best = 0.0;
  if (z.dim() == 2) {
    for (const auto& v : vertices_2d(z)) best = std::max(best, (v - point).norm());
    return best;
  }
  const Vec d0 = z.center() - point;
  const Mat& g = z.generators();
  if (p <= 16) {
    for (long mask = 0; mask < (1L << p); ++mask) {
      Vec xi(p);
      for (Eigen::Index j = 0; j < p; ++j) xi(j) = (mask >> j) & 1 ? 1.0 : -1.0;
      best = std::max(best, (d0 + g * xi).norm());
    }
    return best;
  }
  return d0.norm() + g.colwise().norm().sum();
}

Containment containment_in_target(const PwaSystem& sys, const ZonotopeFamily& fam) {
  Containment c;
  c.fragments = fam.size();
  for (const auto& z : fam.fragments) {
    const double excess = farthest_distance(z, sys.target_center) - sys.target_radius;
    if (excess <= 0.0) ++c.inside;
    c.max_violation = std::max(c.max_violation, excess);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Regret

double estimate_regret_sup(const HjModel& model, const PwaSystem& sys, const ZonotopeFamily& fam, const Vec& u,
                           std::size_t samples, std::size_t optimizer_budget, std::uint64_t seed) {
  if (!sys.action_admissible(u)) throw std::invalid_argument("regret estimate: action outside the action box");
  CounterRng rng(seed, 51);
  const Eigen::Index n = sys.state_dim, m = sys.input_dim;
  const Vec hw = sys.action_half_width();
  double sup = -kInf;
  for (const auto& x : family_samples(fam, samples, rng)) {
    const auto& md = sys.modes[mode_clamped(sys, x)];
    const Vec u_star = model.act(x);
    // Candidate actions: the oracle, local perturbations of it, and uniform draws.
    Mat cand(m, static_cast<Eigen::Index>(optimizer_budget) + 2);
    cand.col(0) = u;
    cand.col(1) = u_star;
    for (Eigen::Index j = 2; j < cand.cols(); ++j) {
      const Vec v = j % 2 ? Vec(u_star + 0.1 * hw.cwiseProduct(rng.normal_vector(m)))
                          : Vec(sys.action_lower + (sys.action_upper - sys.action_lower).cwiseProduct(
                                                       rng.uniform_vector(m, 0.0, 1.0)));
      cand.col(j) = sys.clip_action(v);
    }
    Mat next = md.b * cand;
    next.colwise() += md.a * x;
    const Vec v = model.value_batch(next);
    sup = std::max(sup, v(0) - v.tail(v.size() - 1).minCoeff());
  }
  (void)n;
  return sup;
}

double regret_bound_certified(double l_v, double l_b, double l_pi, double diam) { return l_v * l_b * l_pi * diam / 2.0; }

// ---------------------------------------------------------------------------
// Diagnostic

double critical_radius(double epsilon, double l_v, double l_b, double l_pi) {
  const double den = l_v * l_b * l_pi;
  return den > 0.0 ? 2.0 * epsilon / den : kInf;
}

double depth_diameter_bound(double d_omega, double gamma, double rho, int depth, double w_out, double l_b) {
  return 2.0 * d_omega * (1.0 - gamma) / (gamma * std::pow(rho, depth) * w_out * l_b);
}

DiagnosticReport diagnostic(const DiagnosticInputs& in) {
  if (in.c_t < 0 || in.l_v < 0 || in.eta < 0 || in.epsilon < 0 || in.sigma_bar < 0 || in.l_pi < 0 || in.l_b < 0)
    throw std::invalid_argument("diagnostic: inputs must be nonnegative");
  if (!(in.gamma > 0.0 && in.gamma < 1.0)) throw std::invalid_argument("diagnostic: discount must lie in (0, 1)");
  DiagnosticReport r;
  r.in = in;
  r.lhs = in.c_t;
  r.contraction_fails = in.sigma_bar >= 1.0;
  r.lipschitz_term = r.contraction_fails ? kInf : (in.eta == 0.0 ? 0.0 : in.l_v * in.eta / (1.0 - in.sigma_bar));
  r.regret_term = in.gamma * in.epsilon / (1.0 - in.gamma);
  r.rhs = r.lipschitz_term + r.regret_term;
  r.feasible = !r.contraction_fails && r.lhs > r.rhs;
  r.r_crit = critical_radius(in.epsilon, in.l_v, in.l_b, in.l_pi);
  return r;
}

// ---------------------------------------------------------------------------
// CQLF

std::vector<Mat> mode_matrices(const PwaSystem& sys) {
  std::vector<Mat> out;
  for (const auto& m : sys.modes) out.push_back(m.a);
  return out;
}

double cqlf_rate(const Mat& factor, const std::vector<Mat>& modes) {
  const Mat inv = factor.inverse();
  double s = 0.0;
  for (const auto& a : modes) s = std::max(s, spectral_norm_certified(factor * a * inv));
  return s;
}

double cqlf_residual(const Mat& p, double sigma, const std::vector<Mat>& modes) {
  double worst = -kInf;
  for (const auto& a : modes) {
    const Mat s = a.transpose() * p * a - sigma * sigma * p;
    worst = std::max(worst, Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (s + s.transpose())).eigenvalues().maxCoeff());
  }
  return worst;
}

namespace {

Mat lower_from(const Vec& theta, Eigen::Index n) {
  Mat l = Mat::Zero(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i) l(i, j) = theta(k++);
  return l;
}

/// Smooth maximum of ||L^{-1} A_i L||_2; +inf when L is numerically singular.
double cqlf_objective(const Vec& theta, Eigen::Index n, const std::vector<Mat>& modes, double beta) {
  const Mat l = lower_from(theta, n);
  const double dmin = l.diagonal().cwiseAbs().minCoeff();
  if (!(dmin > 1e-8)) return kInf;
  const Mat inv = l.triangularView<Eigen::Lower>().solve(Mat::Identity(n, n));
  std::vector<double> s;
  double mx = -kInf;
  for (const auto& a : modes) {
    s.push_back(Eigen::JacobiSVD<Mat>(inv * a * l).singularValues()(0));
    mx = std::max(mx, s.back());
  }
  double acc = 0.0;
  for (double v : s) acc += std::exp(beta * (v - mx));
  return mx + std::log(acc) / beta;
}

}  // namespace

CqlfResult cqlf_search(const std::vector<Mat>& modes, int max_iters, std::uint64_t seed, int restarts) {
  if (modes.empty()) throw std::invalid_argument("cqlf_search: no modes");
  const Eigen::Index n = modes.front().rows();
  for (const auto& a : modes)
    if (a.rows() != n || a.cols() != n) throw DimensionMismatch("cqlf_search: modes must be square and equal size");
  CqlfResult res;
  double plain = 0.0;
  for (const auto& a : modes) plain = std::max(plain, spectral_norm_certified(a));
  if (plain < 1.0) {
    res.p = Mat::Identity(n, n);
    res.factor = Mat::Identity(n, n);
    res.sigma_bar = plain;
    res.feasible = true;
    return res;
  }

  const double beta = 200.0;
  const Eigen::Index dim = n * (n + 1) / 2;
  CounterRng rng(seed, 61);
  Mat best_factor = Mat::Identity(n, n);
  double best = plain;
  for (int r = 0; r < restarts; ++r) {
    res.restarts = r + 1;
    Mat l0 = Mat::Identity(n, n);
    if (r > 0)
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j; i < n; ++i) l0(i, j) += 0.3 * rng.normal();
    Vec theta(dim);
    {
      Eigen::Index k = 0;
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j; i < n; ++i) theta(k++) = l0(i, j);
    }
    double f = cqlf_objective(theta, n, modes, beta);
    if (!std::isfinite(f)) continue;
    double alpha = 0.1;
    for (int it = 0; it < max_iters; ++it) {
      Vec grad(dim);
      const double h = 1e-6;
      for (Eigen::Index k = 0; k < dim; ++k) {
        Vec tp = theta, tm = theta;
        tp(k) += h;
        tm(k) -= h;
        grad(k) = (cqlf_objective(tp, n, modes, beta) - cqlf_objective(tm, n, modes, beta)) / (2 * h);
      }
      if (!grad.allFinite() || grad.norm() < 1e-12) break;
      bool moved = false;
      for (int tries = 0; tries < 40 && !moved; ++tries) {
        Vec cand = theta - alpha * grad;
        // The objective is scale invariant; keep the diagonal product at one.
        Mat l = lower_from(cand, n);
        const double det = l.diagonal().prod();
        if (det > 0.0) cand /= std::pow(det, 1.0 / static_cast<double>(n));
        const double fc = cqlf_objective(cand, n, modes, beta);
        if (fc < f) {
          theta = cand;
          f = fc;
          alpha *= 1.5;
          moved = true;
        } else {
          alpha *= 0.5;
        }
      }
      if (!moved) break;
    }
    const Mat l = lower_from(theta, n);
    if (!(l.diagonal().cwiseAbs().minCoeff() > 1e-8)) continue;
    const Mat factor = l.triangularView<Eigen::Lower>().solve(Mat::Identity(n, n));
    const double s = cqlf_rate(factor, modes);
    if (s < best) {
      best = s;
      best_factor = factor;
    }
  }
  res.factor = best_factor;
  res.p = best_factor.transpose() * best_factor;
  res.sigma_bar = cqlf_rate(best_factor, modes);
  res.feasible = res.sigma_bar < 1.0;
  return res;
}

// ---------------------------------------------------------------------------
// Terminal certificate

double TerminalCertificate::d_cert_formula() const {
  const double steady = l_v_cert * eta_c / (1.0 - sigma_bar);
  const double den = gamma * l_v_cert * l_b * l_pi_cert;
  return den > 0.0 ? 2.0 * (c_t_local - steady) * (1.0 - gamma) / den : kInf;
}

TerminalRow TerminalCertificate::row_at(double diam) const {
  TerminalRow r;
  r.diam = diam;
  r.epsilon = regret_bound_certified(l_v_cert, l_b, l_pi_cert, diam);
  r.rhs = l_v_cert * eta_c / (1.0 - sigma_bar) + gamma * r.epsilon / (1.0 - gamma);
  r.margin = c_t_local - r.rhs;
  return r;
}

double core_inflation(const PwaSystem& sys, const Vec& center, double radius, const Mat& p_sqrt, bool* single_mode) {
  const Eigen::Index n = sys.state_dim;
  const Zonotope core = Zonotope::box(center, Vec::Constant(n, radius));
  const double r_w = noise_radius(sys, p_sqrt);
  bool one = false;
  for (const auto& m : sys.modes) {
    bool all = true;
    for (long mask = 0; mask < (1L << n) && all; ++mask) {
      Vec xi(n);
      for (Eigen::Index j = 0; j < n; ++j) xi(j) = (mask >> j) & 1 ? 1.0 : -1.0;
      all = m.region.contains(core.point(xi));
    }
    if (all) {
      one = true;
      break;
    }
  }
  if (single_mode) *single_mode = one;
  if (one) return r_w;
  const auto st = step_family(sys, ZonotopeFamily(core), sys.action_center(), StepBudgets{}, p_sqrt);
  return std::max(r_w, st.eta_step);
}

TerminalCertificate terminal_certificate(const HjModel& local, const PwaSystem& sys, double core_radius,
                                         const CqlfResult& cqlf, double eta_c, const std::vector<double>& diameters,
                                         std::size_t cover_count, double box_radius) {
  if (!cqlf.feasible || !(cqlf.sigma_bar < 1.0)) throw InfeasibleTerminal("terminal certificate: no contracting CQLF", kInf);
  if (!(core_radius > sys.target_radius)) throw std::invalid_argument("terminal certificate: core must contain the target");
  TerminalCertificate t;
  t.core_center = sys.target_center;
  t.core_radius = core_radius;
  t.c_t_local = compute_target_depth(local, sys, cover_count, box_radius);
  const Zonotope core = Zonotope::box(sys.target_center, Vec::Constant(sys.state_dim, core_radius));
  const int pieces = sys.state_dim == 2 ? 32 : 4;
  const auto lip = lipschitz_value_partitioned(local.scaled_actor(), local.critic, core, pieces);
  t.l_v_cert = lip.l_v;
  t.l_pi_cert = lip.l_pi;
  t.unstable = lip.max_unstable;
  for (const auto& m : sys.modes) t.l_b = std::max(t.l_b, spectral_norm_certified(m.b));
  t.eta_c = eta_c;
  t.sigma_bar = cqlf.sigma_bar;
  t.gamma = local.gamma;
  const double steady = t.l_v_cert * eta_c / (1.0 - t.sigma_bar);
  if (!(t.c_t_local > steady))
    throw InfeasibleTerminal("terminal certificate: local depth " + std::to_string(t.c_t_local) +
                                 " does not exceed the steady-state term " + std::to_string(steady),
                             steady - t.c_t_local);
  t.d_cert = t.d_cert_formula();
  for (double d : diameters) t.rows.push_back(t.row_at(d));
  return t;
}

// ---------------------------------------------------------------------------
// Grid experiment

double GridSummary::precision() const {
  return predicted ? static_cast<double>(true_positive) / static_cast<double>(predicted) : 1.0;
}

double GridSummary::recall() const {
  return failures ? static_cast<double>(true_positive) / static_cast<double>(failures) : 1.0;
}

std::vector<Vec> grid_centers() {
  std::vector<Vec> out;
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 5; ++i) {
      Vec c(2);
      c << -2.5 + 0.75 * i, -2.5 + 1.0 * j;
      out.push_back(c);
    }
  return out;
}

std::vector<GridRow> grid_experiment(const PwaSystem& sys, const HjModel& model, const SetPolicy& policy,
                                     const std::vector<Vec>& centers, const std::vector<double>& radii, double c_t,
                                     const VerifyOptions& opt) {
  std::vector<GridRow> rows(centers.size() * radii.size());
  parallel_for(rows.size(), [&](std::size_t idx) {
    const double r0 = radii[idx / centers.size()];
    const Vec& c = centers[idx % centers.size()];
    GridRow row;
    row.center = c;
    row.r0 = r0;
    const Zonotope z0(c, r0 * Mat::Identity(sys.state_dim, sys.state_dim));
    VerifyOptions o = opt;
    o.keep_families = true;
    const auto rep = verify_trajectory(sys, model, policy, z0, c_t, o);
    row.certified = rep.certified;
    row.k_cert = rep.k_cert;
    row.n0 = rep.fragments_at(1);
    for (const auto& s : rep.per_step) row.peak_fragments = std::max(row.peak_fragments, s.fragment_count);
    for (const auto& z : rep.families.back().fragments) row.terminal_diameter = std::max(row.terminal_diameter, diameter(z));
    row.margin = rep.margin;
    row.predicted_failure = static_cast<double>(row.n0) >=
                            static_cast<double>(o.budgets.fragments) / static_cast<double>(o.k_max);
    rows[idx] = std::move(row);
  });
  return rows;
}

GridSummary summarize_grid(const std::vector<GridRow>& rows, std::size_t fragment_budget, int k_max) {
  GridSummary s;
  for (const auto& r : rows)
    if (std::find(s.radii.begin(), s.radii.end(), r.r0) == s.radii.end()) s.radii.push_back(r.r0);
  for (double r0 : s.radii) {
    std::size_t total = 0, ok = 0;
    for (const auto& r : rows)
      if (r.r0 == r0) {
        ++total;
        ok += r.certified;
      }
    s.success_rate.push_back(static_cast<double>(ok) / static_cast<double>(total));
  }
  const double threshold = static_cast<double>(fragment_budget) / static_cast<double>(k_max);
  for (const auto& r : rows) {
    const bool pred = static_cast<double>(r.n0) >= threshold;
    s.failures += !r.certified;
    s.predicted += pred;
    s.true_positive += pred && !r.certified;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

Json report_to_json(const CertificateReport& r) {
  Json steps = Json::array();
  for (const auto& s : r.per_step)
    steps.push_back({{"k", s.k},
                     {"fragmentCount", s.fragment_count},
                     {"Vbar", s.v_bar},
                     {"etaStep", s.eta_step},
                     {"droppedVolumeFraction", s.dropped_volume_fraction},
                     {"action", to_json(s.action)},
                     {"budgetHit", s.budget_hit},
                     {"domainExit", s.domain_exit},
                     {"centerNearBoundary", s.center_near_boundary}});
  return {{"perStep", steps},     {"certified", r.certified}, {"K_cert", r.k_cert},
          {"c_T", r.c_t},         {"VbarFinal", r.v_bar_final}, {"margin", r.margin},
          {"warnings", r.warnings}};
}

Json diagnostic_to_json(const DiagnosticReport& r) {
  return {{"c_T", r.in.c_t},       {"L_V", r.in.l_v},         {"sigmaBar", r.in.sigma_bar},
          {"eta", r.in.eta},       {"epsilon", r.in.epsilon}, {"gamma", r.in.gamma},
          {"L_pi", r.in.l_pi},     {"L_B", r.in.l_b},         {"lhs", r.lhs},
          {"lipschitzTerm", r.lipschitz_term}, {"regretTerm", r.regret_term}, {"rhs", r.rhs},
          {"feasible", r.feasible}, {"contractionFails", r.contraction_fails}, {"r_crit", r.r_crit}};
}

Json terminal_to_json(const TerminalCertificate& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) rows.push_back({{"diam", r.diam}, {"epsilon", r.epsilon}, {"rhs", r.rhs}, {"margin", r.margin}});
  return {{"coreCenter", to_json(t.core_center)},
          {"coreRadius", t.core_radius},
          {"c_T_local", t.c_t_local},
          {"L_V_cert", t.l_v_cert},
          {"L_pi_cert", t.l_pi_cert},
          {"L_B", t.l_b},
          {"eta_C", t.eta_c},
          {"sigmaBar", t.sigma_bar},
          {"gamma", t.gamma},
          {"d_cert", t.d_cert},
          {"unstable", {t.unstable.first, t.unstable.second}},
          {"singleMode", t.single_mode},
          {"rows", rows}};
}

Json cqlf_to_json(const CqlfResult& c) {
  return {{"P", to_json(c.p)}, {"factor", to_json(c.factor)}, {"sigmaBar", c.sigma_bar}, {"feasible", c.feasible},
          {"restarts", c.restarts}};
}

Json grid_to_json(const std::vector<GridRow>& rows, const GridSummary& s) {
  Json arr = Json::array();
  for (const auto& r : rows)
    arr.push_back({{"center", to_json(r.center)},
                   {"r0", r.r0},
                   {"certified", r.certified},
                   {"K_cert", r.k_cert},
                   {"N0", r.n0},
                   {"peakFragments", r.peak_fragments},
                   {"terminalDiameter", r.terminal_diameter},
                   {"margin", r.margin},
                   {"predictedFailure", r.predicted_failure}});
  return {{"rows", arr},
          {"radii", s.radii},
          {"successRate", s.success_rate},
          {"failures", s.failures},
          {"predicted", s.predicted},
          {"predictorPrecision", s.precision()},
          {"predictorRecall", s.recall()}};
}

void write_step_csv(const std::filesystem::path& path, const CertificateReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(10);
  out << "k,fragCount,Vbar,eta,dropped\n";
  for (const auto& s : r.per_step)
    out << s.k << ',' << s.fragment_count << ',' << s.v_bar << ',' << s.eta_step << ',' << s.dropped_volume_fraction
        << '\n';
}

}  // namespace zonocert
