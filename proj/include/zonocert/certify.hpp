#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "zonocert/hj_train.hpp"
#include "zonocert/json_io.hpp"
#include "zonocert/neural_verify.hpp"
#include "zonocert/pwa.hpp"
#include "zonocert/set_actor.hpp"

namespace zonocert {

/// Maps the current fragment family to one common action.
using SetPolicy = std::function<Vec(const ZonotopeFamily&)>;

SetPolicy set_actor_policy(const SetActor& actor);
/// pi*(center of the family's interval enclosure).
SetPolicy oracle_center_policy(const HjModel& model);
/// argmin_u max_i V*(f(x_i, u)) over K sampled points by random search.
SetPolicy scenario_opt_policy(const HjModel& model, const PwaSystem& sys, std::size_t points, std::size_t budget,
                              std::uint64_t seed);

Vec baseline_oracle_center(const HjModel& model, const ZonotopeFamily& fam);
Vec baseline_scenario_opt(const HjModel& model, const PwaSystem& sys, const ZonotopeFamily& fam, std::size_t points,
                          std::size_t budget, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Target depth

/// Zonotopes covering the sphere ||x - x_t|| = r_t. n = 2: arc-chord cover with
/// `cover_count` pieces. n >= 3: boxes of radius `box_radius` at cover_count * 2^(n-2)
/// low-discrepancy sphere points (not proven gap-free).
std::vector<Zonotope> target_boundary_cover(const PwaSystem& sys, std::size_t cover_count, double box_radius);

struct TargetDepth {
  double c_t = 0.0;      // max(raw, 0)
  double raw = 0.0;      // min over pieces of -(upper value bound)
  std::size_t pieces = 0;
  bool heuristic_cover = false;
  bool zero_depth = false;
};

TargetDepth compute_target_depth_detail(const HjModel& model, const PwaSystem& sys, std::size_t cover_count = 64,
                                        double box_radius = 0.01);
double compute_target_depth(const HjModel& model, const PwaSystem& sys, std::size_t cover_count = 64,
                            double box_radius = 0.01);

/// Upper bound on V*(x) over a state zonotope, through the scaled actor and the critic.
double value_upper_bound(const HjModel& model, const Zonotope& z);

// ---------------------------------------------------------------------------
// Trajectory certificate

inline constexpr int kDefaultHorizon = 15;

struct StepRecord {
  int k = 0;  // index of the family the record describes (k >= 1)
  std::size_t fragment_count = 0;
  double v_bar = 0.0;
  double eta_step = 0.0;
  double dropped_volume_fraction = 0.0;
  Vec action;  // u_{k-1}, the action that produced this family
  bool budget_hit = false;
  bool domain_exit = false;
  bool center_near_boundary = false;
};

struct CertificateReport {
  std::vector<StepRecord> per_step;
  bool certified = false;
  int k_cert = 0;
  double c_t = 0.0;
  double v_bar_final = 0.0;
  double margin = 0.0;  // -V_bar - c_T at K_cert (or at the last step)
  std::vector<std::string> warnings;
  std::vector<ZonotopeFamily> families;  // Z_0 ... Z_K when requested

  double eta_max() const;
  std::size_t fragments_at(int k) const;
  std::vector<Vec> actions() const;
};

struct VerifyOptions {
  int k_max = kDefaultHorizon;
  StepBudgets budgets;
  Mat p_sqrt;  // CQLF factor for the noise radius; empty means identity
  bool keep_families = false;
};

CertificateReport verify_trajectory(const PwaSystem& sys, const HjModel& model, const SetPolicy& policy,
                                    const Zonotope& z0, double c_t, const VerifyOptions& opt = {});

struct RolloutCheck {
  std::size_t samples = 0;
  std::size_t violations = 0;   // V*(x_K) > -c_T
  std::size_t escaped = 0;      // x_K outside the verified family (when families are known)
  double max_value = -1e300;
};

/// Closed-loop Monte Carlo from Z0 under a fixed action sequence with uniform noise.
RolloutCheck rollout_check(const PwaSystem& sys, const HjModel& model, const Zonotope& z0,
                           const std::vector<Vec>& actions, double c_t, std::size_t samples, std::uint64_t seed,
                           const ZonotopeFamily* final_family = nullptr);

// ---------------------------------------------------------------------------
// Closed-loop reachability for comparisons

struct ReachRun {
  std::vector<ZonotopeFamily> families;  // Z_0 ... Z_K
  std::vector<Vec> actions;
  std::vector<double> action_seconds;  // policy latency per step
  bool budget_hit = false;
  bool domain_exit = false;
};

ReachRun reach_closed_loop(const PwaSystem& sys, const SetPolicy& policy, const Zonotope& z0, int steps,
                           const StepBudgets& budgets = {});

struct Containment {
  std::size_t fragments = 0;
  std::size_t inside = 0;        // fragments contained in the reference ball
  double max_violation = 0.0;    // max over fragments of (farthest point distance - r_t), >= 0
  double fraction() const { return fragments ? static_cast<double>(inside) / static_cast<double>(fragments) : 0.0; }
};

/// Fragment-wise containment in the reference ball ||x - x_t|| <= r_t.
Containment containment_in_target(const PwaSystem& sys, const ZonotopeFamily& fam);
/// Upper bound on max ||x - x_t|| over Z (exact in the plane and for at most 16 generators).
double farthest_distance(const Zonotope& z, const Vec& point);
/// Vertices of a planar zonotope in counterclockwise order.
std::vector<Vec> vertices_2d(const Zonotope& z);

// ---------------------------------------------------------------------------
// Regret estimate

/// Sampling estimate (not certified) of sup_x [V*(f(x,u)) - min_u' V*(f(x,u'))] over the family.
double estimate_regret_sup(const HjModel& model, const PwaSystem& sys, const ZonotopeFamily& fam, const Vec& u,
                           std::size_t samples, std::size_t optimizer_budget, std::uint64_t seed);

/// L_V L_B L_pi diam / 2.
double regret_bound_certified(double l_v, double l_b, double l_pi, double diam);

// ---------------------------------------------------------------------------
// Diagnostic condition

struct DiagnosticInputs {
  double c_t = 0.0;
  double l_v = 0.0;
  double sigma_bar = 0.0;
  double eta = 0.0;
  double epsilon = 0.0;
  double gamma = 0.95;
  double l_pi = 0.0;  // for the critical radius
  double l_b = 0.0;
};

struct DiagnosticReport {
  DiagnosticInputs in;
  double lhs = 0.0;
  double lipschitz_term = 0.0;  // L_V eta / (1 - sigma_bar)
  double regret_term = 0.0;     // gamma eps / (1 - gamma)
  double rhs = 0.0;
  bool feasible = false;
  bool contraction_fails = false;  // sigma_bar >= 1
  double r_crit = 0.0;
};

DiagnosticReport diagnostic(const DiagnosticInputs& in);
/// 2 r eps / (L_V L_B L_pi) with r = 1: the critical radius.
double critical_radius(double epsilon, double l_v, double l_b, double l_pi);
/// 2 D_Omega (1 - gamma) / (gamma rho^D ||W_out|| L_B).
double depth_diameter_bound(double d_omega, double gamma, double rho, int depth, double w_out, double l_b);

// ---------------------------------------------------------------------------
// CQLF

struct CqlfResult {
  Mat p;       // A_i^T P A_i <= sigma_bar^2 P
  Mat factor;  // F with P = F^T F (F = L^{-1})
  double sigma_bar = 0.0;
  bool feasible = false;
  int restarts = 0;
};

CqlfResult cqlf_search(const std::vector<Mat>& modes, int max_iters = 2000, std::uint64_t seed = 0, int restarts = 16);
std::vector<Mat> mode_matrices(const PwaSystem& sys);
/// Certified max_i ||F A_i F^{-1}||_2.
double cqlf_rate(const Mat& factor, const std::vector<Mat>& modes);
/// max_i lambda_max(A_i^T P A_i - sigma^2 P).
double cqlf_residual(const Mat& p, double sigma, const std::vector<Mat>& modes);

// ---------------------------------------------------------------------------
// Terminal certificate

struct TerminalRow {
  double diam = 0.0;
  double epsilon = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
};

struct TerminalCertificate {
  Vec core_center;
  double core_radius = 0.0;
  double c_t_local = 0.0;
  double l_v_cert = 0.0;
  double l_pi_cert = 0.0;
  double l_b = 0.0;
  double eta_c = 0.0;
  double sigma_bar = 0.0;
  double gamma = 0.0;
  double d_cert = 0.0;
  std::pair<std::size_t, std::size_t> unstable{0, 0};
  bool single_mode = false;
  std::vector<TerminalRow> rows;

  /// Certified diameter recomputed from the stored fields.
  double d_cert_formula() const;
  TerminalRow row_at(double diam) const;
};

/// Core region: the box of half-width core_radius around x_t. eta_C = R_w when the
/// box lies in one mode, otherwise the measured one-step inflation of the core.
double core_inflation(const PwaSystem& sys, const Vec& center, double radius, const Mat& p_sqrt, bool* single_mode);

TerminalCertificate terminal_certificate(const HjModel& local, const PwaSystem& sys, double core_radius,
                                         const CqlfResult& cqlf, double eta_c,
                                         const std::vector<double>& diameters = {0.04, 0.07, 0.10},
                                         std::size_t cover_count = 64, double box_radius = 0.01);

// ---------------------------------------------------------------------------
// Grid experiment

struct GridRow {
  Vec center;
  double r0 = 0.0;
  bool certified = false;
  int k_cert = 0;
  std::size_t n0 = 0;          // fragment count at step 1
  std::size_t peak_fragments = 0;
  double terminal_diameter = 0.0;  // largest fragment diameter at the last step
  double margin = 0.0;
  bool predicted_failure = false;  // n0 >= budget / K_max
};

struct GridSummary {
  std::vector<double> radii;
  std::vector<double> success_rate;  // per radius
  std::size_t failures = 0;
  std::size_t predicted = 0;
  std::size_t true_positive = 0;
  double precision() const;  // 1 when nothing is predicted
  double recall() const;     // 1 when nothing failed
};

/// 5 x 4 FourQuad initial centers: x = -2.5 + 0.75 i, y = -2.5 + j.
std::vector<Vec> grid_centers();
std::vector<GridRow> grid_experiment(const PwaSystem& sys, const HjModel& model, const SetPolicy& policy,
                                     const std::vector<Vec>& centers, const std::vector<double>& radii, double c_t,
                                     const VerifyOptions& opt = {});
GridSummary summarize_grid(const std::vector<GridRow>& rows, std::size_t fragment_budget, int k_max);

// ---------------------------------------------------------------------------
// Serialization

Json report_to_json(const CertificateReport& r);
Json diagnostic_to_json(const DiagnosticReport& r);
Json terminal_to_json(const TerminalCertificate& t);
Json cqlf_to_json(const CqlfResult& c);
Json grid_to_json(const std::vector<GridRow>& rows, const GridSummary& s);
/// k,fragCount,Vbar,eta,dropped
void write_step_csv(const std::filesystem::path& path, const CertificateReport& r);

}  // namespace zonocert
