// zonocert: command-line front end for training, verification and the experiment tables.
//
// Exit codes: 0 the run's primary assertion holds, 1 it does not, 2 bad usage or
// config, 3 a prerequisite artifact is missing.

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#include "zonocert/certify.hpp"
#include "zonocert/config.hpp"
#include "zonocert/errors.hpp"

using namespace zonocert;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kAssertion = 1, kUsage = 2, kMissing = 3 };

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::optional<std::string> benchmark, profile, config, out, policy;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<int> k_max;
};

struct Context {
  std::string command;
  RunConfig cfg;
  Json cfg_json;
  PwaSystem sys;
  std::string policy = "set-actor";
  Json outputs = Json::array();
};

fs::path seed_dir(const fs::path& root, const std::string& stage, std::uint64_t seed) {
  return root / stage / ("seed_" + std::to_string(seed));
}
fs::path hj_dir(const Context& c, std::uint64_t s) { return seed_dir(c.cfg.out, "hj", s); }
fs::path set_actor_path(const Context& c, std::uint64_t s) { return seed_dir(c.cfg.out, "set_actor", s) / "set_actor.json"; }
fs::path core_dir(const Context& c, std::uint64_t s) { return seed_dir(c.cfg.out, "core", s); }
fs::path global_dir(const Context& c, std::uint64_t s) { return seed_dir(c.cfg.out, "global", s); }

HjModel require_model(const fs::path& dir) {
  if (!fs::exists(dir / "model.json")) throw MissingArtifact("missing trained model in " + dir.string());
  return HjModel::load(dir);
}

SetActor require_set_actor(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact("missing set actor " + path.string());
  return SetActor::load(path);
}

void note_output(Context& c, const fs::path& p) { c.outputs.push_back(p.string()); }

void write_manifest(const Context& c, bool passed, const Json& summary) {
  const fs::path dir = c.cfg.out / c.command;
  fs::create_directories(dir);
  Json m = {{"command", c.command},
            {"config", c.cfg_json},
            {"configHash", config_hash(c.cfg_json)},
            {"seeds", c.cfg.seeds},
            {"passed", passed},
            {"summary", summary},
            {"outputs", c.outputs},
            {"versions",
             {{"zonocert", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"nlohmannJson", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"compiler", __VERSION__}}}};
  write_json_file(dir / "manifest.json", m);
}

SetPolicy make_policy(const Context& c, const HjModel& model, std::uint64_t seed) {
  if (c.policy == "oracle-center") return oracle_center_policy(model);
  if (c.policy == "scenario-opt")
    return scenario_opt_policy(model, c.sys, c.cfg.bench.scenario_points, c.cfg.bench.scenario_budget, seed);
  return set_actor_policy(require_set_actor(set_actor_path(c, seed)));
}

Zonotope initial_set(const Context& c) {
  return Zonotope(c.cfg.verify.z0_center, c.cfg.verify.z0_radius * Mat::Identity(c.sys.state_dim, c.sys.state_dim));
}

VerifyOptions verify_options(const Context& c) {
  VerifyOptions o;
  o.k_max = c.cfg.verify.k_max;
  o.budgets = c.cfg.budgets;
  return o;
}

HjModel train_or_load(Context& c, const HjConfig& hc, const fs::path& dir, std::uint64_t seed) {
  if (fs::exists(dir / "model.json")) return HjModel::load(dir);
  auto res = train_hj(c.sys, hc, seed);
  res.model.save(dir);
  write_hj_log(dir / "log.csv", res.log);
  note_output(c, dir);
  return res.model;
}

void write_fragment_outlines(const fs::path& path, const std::vector<ZonotopeFamily>& families) {
  std::ofstream out(path);
  out.precision(10);
  out << "k,fragment,vertex,x,y\n";
  for (std::size_t k = 0; k < families.size(); ++k)
    for (std::size_t f = 0; f < families[k].size(); ++f) {
      const auto v = vertices_2d(families[k].fragments[f]);
      for (std::size_t i = 0; i < v.size(); ++i) out << k << ',' << f << ',' << i << ',' << v[i](0) << ',' << v[i](1) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_train_hj(Context& c) {
  bool ok = true;
  Json per_seed = Json::array();
  for (auto seed : c.cfg.seeds) {
    const fs::path dir = hj_dir(c, seed);
    const auto t0 = std::chrono::steady_clock::now();
    auto res = train_hj(c.sys, c.cfg.hj, seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.model.save(dir);
    write_hj_log(dir / "log.csv", res.log);
    note_output(c, dir);
    const auto depth = compute_target_depth_detail(res.model, c.sys, c.cfg.verify.cover_count, c.cfg.verify.box_radius);
    ok = ok && !depth.zero_depth;
    per_seed.push_back({{"seed", seed}, {"c_T", depth.c_t}, {"seconds", secs}});
    std::cout << "seed " << seed << ": c_T = " << depth.c_t << " (" << secs << " s)\n";
  }
  write_manifest(c, ok, per_seed);
  return ok ? kOk : kAssertion;
}

int cmd_distill(Context& c) {
  bool ok = true;
  Json per_seed = Json::array();
  for (auto seed : c.cfg.seeds) {
    const HjModel model = require_model(hj_dir(c, seed));
    const auto res = distill(model, c.sys, c.cfg.distill, seed);
    const fs::path path = set_actor_path(c, seed);
    res.actor.save(path);
    write_distill_log(path.parent_path() / "log.csv", res.log);
    note_output(c, path);
    const std::size_t w = std::max<std::size_t>(1, res.log.size() / 10);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      first += res.log[i].loss / static_cast<double>(w);
      last += res.log[res.log.size() - 1 - i].loss / static_cast<double>(w);
    }
    ok = ok && std::isfinite(last) && last <= first;
    per_seed.push_back({{"seed", seed}, {"lossFirst", first}, {"lossLast", last}});
    std::cout << "seed " << seed << ": loss " << first << " -> " << last << "\n";
  }
  write_manifest(c, ok, per_seed);
  return ok ? kOk : kAssertion;
}

int cmd_verify(Context& c) {
  bool ok = true;
  Json per_seed = Json::array();
  for (auto seed : c.cfg.seeds) {
    const HjModel model = require_model(hj_dir(c, seed));
    const SetPolicy policy = make_policy(c, model, seed);
    const fs::path dir = seed_dir(c.cfg.out, "verify", seed);
    fs::create_directories(dir);
    const auto depth = compute_target_depth_detail(model, c.sys, c.cfg.verify.cover_count, c.cfg.verify.box_radius);
    if (depth.zero_depth) {
      Json report = {{"certified", false}, {"c_T", depth.c_t}, {"warnings", {"c_T nonpositive"}}};
      write_json_file(dir / "report.json", report);
      note_output(c, dir / "report.json");
      per_seed.push_back({{"seed", seed}, {"certified", false}, {"reason", "c_T nonpositive"}});
      std::cout << "seed " << seed << ": c_T nonpositive, nothing to certify\n";
      ok = false;
      continue;
    }
    VerifyOptions o = verify_options(c);
    o.keep_families = true;
    const Zonotope z0 = initial_set(c);
    const auto rep = verify_trajectory(c.sys, model, policy, z0, depth.c_t, o);
    Json j = report_to_json(rep);
    j["heuristicCover"] = depth.heuristic_cover;
    j["policy"] = c.policy;
    const auto rc = rollout_check(c.sys, model, z0, rep.actions(), depth.c_t, c.cfg.verify.rollout_samples, seed,
                                  &rep.families.back());
    j["rollout"] = {{"samples", rc.samples}, {"violations", rc.violations}, {"escaped", rc.escaped},
                    {"maxValue", rc.max_value}};
    write_json_file(dir / "report.json", j);
    write_step_csv(dir / "steps.csv", rep);
    note_output(c, dir / "report.json");
    note_output(c, dir / "steps.csv");
    if (c.sys.state_dim == 2) {
      write_fragment_outlines(dir / "fragments.csv", rep.families);
      note_output(c, dir / "fragments.csv");
    }
    const bool confirmed = rc.violations == 0 || !rep.certified;
    ok = ok && rep.certified && confirmed;
    per_seed.push_back({{"seed", seed}, {"certified", rep.certified}, {"K_cert", rep.k_cert}, {"margin", rep.margin},
                        {"rolloutViolations", rc.violations}});
    std::cout << "seed " << seed << ": " << (rep.certified ? "certified" : "not certified") << " at K = " << rep.k_cert
              << ", c_T = " << depth.c_t << ", margin = " << rep.margin << ", rollout violations " << rc.violations
              << "/" << rc.samples << "\n";
  }
  write_manifest(c, ok, per_seed);
  return ok ? kOk : kAssertion;
}

/// Terminal certificate for one seed; trains the local core model if absent.
Json terminal_for_seed(Context& c, std::uint64_t seed, bool* positive) {
  const HjModel local = train_or_load(c, c.cfg.local_core, core_dir(c, seed), seed);
  const auto cq = cqlf_search(mode_matrices(c.sys), c.cfg.terminal.cqlf_iters, seed, c.cfg.terminal.cqlf_restarts);
  bool single = false;
  const double eta_c = core_inflation(c.sys, c.sys.target_center, c.cfg.terminal.core_radius, cq.factor, &single);
  const fs::path dir = seed_dir(c.cfg.out, "terminal", seed);
  fs::create_directories(dir);
  Json j;
  try {
    auto t = terminal_certificate(local, c.sys, c.cfg.terminal.core_radius, cq, eta_c, c.cfg.terminal.diameters,
                                  c.cfg.verify.cover_count, c.cfg.verify.box_radius);
    t.single_mode = single;
    j = terminal_to_json(t);
    *positive = !t.rows.empty() && t.rows.front().margin > 0.0;
    std::ofstream csv(dir / "table4.csv");
    csv.precision(8);
    csv << "diam,L_pi_cert,L_V_cert,unstableActor,unstableCritic,epsilon,rhs,c_T_local,margin\n";
    for (const auto& r : t.rows)
      csv << r.diam << ',' << t.l_pi_cert << ',' << t.l_v_cert << ',' << t.unstable.first << ',' << t.unstable.second
          << ',' << r.epsilon << ',' << r.rhs << ',' << t.c_t_local << ',' << r.margin << '\n';
    note_output(c, dir / "table4.csv");
  } catch (const InfeasibleTerminal& e) {
    j = {{"infeasible", true}, {"reason", e.what()}, {"deficit", e.deficit()}};
    *positive = false;
  }
  j["cqlf"] = cqlf_to_json(cq);
  write_json_file(dir / "terminal.json", j);
  note_output(c, dir / "terminal.json");
  return j;
}

int cmd_certify_terminal(Context& c) {
  bool ok = true;
  Json per_seed = Json::array();
  for (auto seed : c.cfg.seeds) {
    bool positive = false;
    const Json j = terminal_for_seed(c, seed, &positive);
    ok = ok && positive;
    per_seed.push_back({{"seed", seed}, {"marginPositive", positive}});
    std::cout << "seed " << seed << ": " << j.dump() << "\n";
  }
  write_manifest(c, ok, per_seed);
  return ok ? kOk : kAssertion;
}

int cmd_diagnostic(Context& c) {
  bool ok = true;
  Json per_seed = Json::array();
  for (auto seed : c.cfg.seeds) {
    const HjModel model = require_model(hj_dir(c, seed));
    const SetPolicy policy = make_policy(c, model, seed);
    const double c_t = compute_target_depth(model, c.sys, c.cfg.verify.cover_count, c.cfg.verify.box_radius);
    VerifyOptions o = verify_options(c);
    o.keep_families = true;
    const auto rep = verify_trajectory(c.sys, model, policy, initial_set(c), c_t, o);
    // epsilon: sampled sup-regret of the taken action over each step's family.
    double eps = 0.0;
    for (std::size_t k = 0; k < rep.per_step.size(); ++k)
      eps = std::max(eps, estimate_regret_sup(model, c.sys, rep.families[k], rep.per_step[k].action, 8, 32, seed + k));
    const auto cq = cqlf_search(mode_matrices(c.sys), c.cfg.terminal.cqlf_iters, seed, c.cfg.terminal.cqlf_restarts);
    double l_b = 0.0;
    for (const auto& m : c.sys.modes) l_b = std::max(l_b, spectral_norm_certified(m.b));
    const Mlp actor = model.scaled_actor();

    DiagnosticInputs global;
    global.c_t = c_t;
    global.l_v = lipschitz_value_spectral(actor, model.critic);
    global.l_pi = lipschitz_spectral_certified(actor);
    global.l_b = l_b;
    global.sigma_bar = cq.sigma_bar;
    global.eta = rep.eta_max();
    global.epsilon = eps;
    global.gamma = model.gamma;
    DiagnosticInputs local = global;
    Vec lo = rep.families.front().interval_enclosure().hull_lower();
    Vec hi = rep.families.front().interval_enclosure().hull_upper();
    for (const auto& f : rep.families) {
      lo = lo.cwiseMin(f.interval_enclosure().hull_lower());
      hi = hi.cwiseMax(f.interval_enclosure().hull_upper());
    }
    const auto lip = lipschitz_value_partitioned(actor, model.critic, Zonotope::from_bounds(lo, hi), 8);
    local.l_v = lip.l_v;
    local.l_pi = lip.l_pi;
    const auto dg = diagnostic(global), dl = diagnostic(local);
    Json j = {{"global", diagnostic_to_json(dg)}, {"localOnTrajectoryHull", diagnostic_to_json(dl)},
              {"epsilonIsEstimate", true}, {"certified", rep.certified}};
    const fs::path dir = seed_dir(c.cfg.out, "diagnostic", seed);
    fs::create_directories(dir);
    write_json_file(dir / "diagnostic.json", j);
    note_output(c, dir / "diagnostic.json");
    ok = ok && std::isfinite(dg.rhs) && std::isfinite(dl.rhs);
    per_seed.push_back({{"seed", seed}, {"globalFeasible", dg.feasible}, {"localFeasible", dl.feasible}});
    std::cout << "seed " << seed << ": global rhs " << dg.rhs << ", local rhs " << dl.rhs << " vs c_T " << c_t << "\n";
  }
  write_manifest(c, ok, per_seed);
  return ok ? kOk : kAssertion;
}

int cmd_grid(Context& c) {
  if (c.sys.state_dim != 2) throw FormatError("grid: the initialization grid is defined for planar benchmarks");
  bool ok = true;
  Json per_seed = Json::array();
  for (auto seed : c.cfg.seeds) {
    const HjModel model = require_model(hj_dir(c, seed));
    const SetPolicy policy = make_policy(c, model, seed);
    const double c_t = compute_target_depth(model, c.sys, c.cfg.verify.cover_count, c.cfg.verify.box_radius);
    const auto rows = grid_experiment(c.sys, model, policy, grid_centers(), c.cfg.grid.radii, c_t, verify_options(c));
    const auto s = summarize_grid(rows, c.cfg.budgets.fragments, c.cfg.verify.k_max);
    const fs::path dir = seed_dir(c.cfg.out, "grid", seed);
    fs::create_directories(dir);
    std::ofstream csv(dir / "grid.csv");
    csv.precision(8);
    csv << "cx,cy,r0,certified,K_cert,N0,peakFragments,terminalDiameter,margin,predictedFailure\n";
    for (const auto& r : rows)
      csv << r.center(0) << ',' << r.center(1) << ',' << r.r0 << ',' << r.certified << ',' << r.k_cert << ',' << r.n0
          << ',' << r.peak_fragments << ',' << r.terminal_diameter << ',' << r.margin << ',' << r.predicted_failure
          << '\n';
    write_json_file(dir / "grid.json", grid_to_json(rows, s));
    note_output(c, dir / "grid.csv");
    note_output(c, dir / "grid.json");
    bool monotone = true;
    for (std::size_t i = 1; i < s.success_rate.size(); ++i)
      monotone = monotone && (s.radii[i] < s.radii[i - 1] || s.success_rate[i] <= s.success_rate[i - 1]);
    ok = ok && monotone;
    per_seed.push_back({{"seed", seed}, {"successRate", s.success_rate}, {"monotone", monotone}});
    std::cout << "seed " << seed << ": success";
    for (std::size_t i = 0; i < s.radii.size(); ++i) std::cout << " r0=" << s.radii[i] << ":" << s.success_rate[i];
    std::cout << ", predictor precision " << s.precision() << " recall " << s.recall() << "\n";
  }
  write_manifest(c, ok, per_seed);
  return ok ? kOk : kAssertion;
}

int cmd_bench(Context& c) {
  bool ok = true;
  Json per_seed = Json::array();
  for (auto seed : c.cfg.seeds) {
    const HjModel model = require_model(hj_dir(c, seed));
    const SetActor actor = require_set_actor(set_actor_path(c, seed));
    const fs::path dir = seed_dir(c.cfg.out, "bench", seed);
    fs::create_directories(dir);
    const Zonotope z0 = initial_set(c);

    // Containment and per-step latency per method.
    struct Method {
      std::string name;
      SetPolicy policy;
    };
    const std::vector<Method> methods{
        {"set-actor", set_actor_policy(actor)},
        {"oracle-center", oracle_center_policy(model)},
        {"scenario-opt", scenario_opt_policy(model, c.sys, c.cfg.bench.scenario_points, c.cfg.bench.scenario_budget, seed)}};
    std::ofstream t2(dir / "table2.csv");
    t2.precision(8);
    t2 << "method,containment,maxViolation,fragments,latencyMs\n";
    std::vector<double> containment, latency;
    for (const auto& m : methods) {
      const auto run = reach_closed_loop(c.sys, m.policy, z0, c.cfg.bench.steps, c.cfg.budgets);
      const auto ct = containment_in_target(c.sys, run.families.back());
      double ms = 0.0;
      for (double s : run.action_seconds) ms += 1000.0 * s / static_cast<double>(run.action_seconds.size());
      containment.push_back(ct.fraction());
      latency.push_back(ms);
      t2 << m.name << ',' << ct.fraction() << ',' << ct.max_violation << ',' << ct.fragments << ',' << ms << '\n';
    }
    note_output(c, dir / "table2.csv");

    // Certification summary for this benchmark.
    const double c_t = compute_target_depth(model, c.sys, c.cfg.verify.cover_count, c.cfg.verify.box_radius);
    const auto rep = verify_trajectory(c.sys, model, set_actor_policy(actor), z0, c_t, verify_options(c));
    std::ofstream t3(dir / "table3.csv");
    t3.precision(8);
    t3 << "benchmark,c_T,VbarFinal,margin,K_cert,certified\n";
    t3 << c.sys.name << ',' << c_t << ',' << rep.v_bar_final << ',' << rep.margin << ',' << rep.k_cert << ','
       << rep.certified << '\n';
    note_output(c, dir / "table3.csv");

    // Terminal rows come with the terminal certificate.
    bool positive = false;
    if (c.sys.state_dim == 2) terminal_for_seed(c, seed, &positive);

    const bool pass = containment[0] >= containment[1] && latency[2] >= 10.0 * latency[0];
    ok = ok && pass;
    per_seed.push_back({{"seed", seed},
                        {"containment", containment},
                        {"latencyMs", latency},
                        {"certified", rep.certified},
                        {"terminalMarginPositive", positive}});
    std::cout << "seed " << seed << ": containment set/orc/opt " << containment[0] << "/" << containment[1] << "/"
              << containment[2] << ", latency ms " << latency[0] << "/" << latency[1] << "/" << latency[2] << "\n";
  }
  write_manifest(c, ok, per_seed);
  return ok ? kOk : kAssertion;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zonocert: certified set-based control for piecewise-affine systems"};
  app.require_subcommand(1);
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--benchmark", flags.benchmark, "FourQuad, EightSec, CoupledOsc or TripleOsc");
    sub->add_option("--profile", flags.profile, "paper or desk");
    sub->add_option("--seed", flags.seed, "single seed (overrides the config's seed list)");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--steps", flags.steps, "iterations of this command's training stage, or bench steps");
    sub->add_option("--k-max", flags.k_max, "verification horizon");
    sub->add_option("--policy", flags.policy, "set-actor, oracle-center or scenario-opt")
        ->check(CLI::IsMember({"set-actor", "oracle-center", "scenario-opt"}));
  };
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train-hj", "train the HJ actor-critic"},
      {"distill", "distill the set actor from a trained HJ model"},
      {"verify", "run the trajectory certificate from the configured Z0"},
      {"certify-terminal", "train the local core model and compute the terminal certificate"},
      {"diagnostic", "evaluate the diagnostic condition with global and local bounds"},
      {"grid", "run the initialization grid"},
      {"bench", "reproduce the comparison and certificate tables at the configured scale"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  Context ctx;
  ctx.command = command;
  try {
    Json overrides = Json::object();
    if (flags.benchmark) overrides["benchmark"] = *flags.benchmark;
    if (flags.profile) overrides["profile"] = *flags.profile;
    if (flags.seed) overrides["seeds"] = Json::array({*flags.seed});
    if (flags.out) overrides["out"] = *flags.out;
    if (flags.k_max) overrides["verify"]["kMax"] = *flags.k_max;
    if (flags.steps) {
      if (command == "train-hj") overrides["hj"]["iterations"] = *flags.steps;
      if (command == "distill") overrides["distill"]["iterations"] = *flags.steps;
      if (command == "certify-terminal") overrides["localCore"]["iterations"] = *flags.steps;
      if (command == "bench") overrides["bench"]["steps"] = *flags.steps;
    }
    std::optional<fs::path> file;
    if (flags.config) file = *flags.config;
    ctx.cfg = load_config(file, overrides);
    ctx.cfg_json = config_to_json(ctx.cfg);
    ctx.sys = make_benchmark(ctx.cfg.benchmark);
    if (flags.policy) ctx.policy = *flags.policy;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (command == "train-hj") return cmd_train_hj(ctx);
    if (command == "distill") return cmd_distill(ctx);
    if (command == "verify") return cmd_verify(ctx);
    if (command == "certify-terminal") return cmd_certify_terminal(ctx);
    if (command == "diagnostic") return cmd_diagnostic(ctx);
    if (command == "grid") return cmd_grid(ctx);
    return cmd_bench(ctx);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAssertion;
  }
}
