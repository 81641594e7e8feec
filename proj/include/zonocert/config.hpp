#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "zonocert/hj_train.hpp"
#include "zonocert/json_io.hpp"
#include "zonocert/pwa.hpp"
#include "zonocert/set_actor.hpp"

namespace zonocert {

struct VerifySettings {
  int k_max = 15;
  Vec z0_center;
  double z0_radius = 0.2;
  std::size_t cover_count = 64;
  double box_radius = 0.01;
  std::size_t rollout_samples = 10000;
};

struct TerminalSettings {
  double core_radius = 0.75;
  std::vector<double> diameters{0.04, 0.07, 0.10};
  int cqlf_iters = 2000;
  int cqlf_restarts = 16;
};

struct GridSettings {
  std::vector<double> radii{0.20, 0.35, 0.50};
};

struct BenchSettings {
  std::size_t scenario_points = 16;
  std::size_t scenario_budget = 400;
  int steps = 15;
};

/// Everything a subcommand needs. "paper" holds the published training scale,
/// "desk" a reduced scale that runs in minutes on one core.
struct RunConfig {
  std::string benchmark = "FourQuad";
  std::string profile = "paper";
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out = "runs";
  HjConfig hj;
  HjConfig local_core;
  HjConfig global_critic;  // 2x256 model for the Lipschitz comparison
  DistillConfig distill;
  StepBudgets budgets;
  VerifySettings verify;
  TerminalSettings terminal;
  GridSettings grid;
  BenchSettings bench;
};

/// Built-in defaults for a benchmark and profile.
RunConfig default_config(const std::string& benchmark, const std::string& profile = "paper");

Json config_to_json(const RunConfig& c);
/// Expects every key; unknown keys raise FormatError.
RunConfig config_from_json(const Json& j);

/// Built-in defaults, then the file (if any), then `overrides`. Keys not in the
/// default layout are rejected with FormatError.
RunConfig load_config(const std::optional<std::filesystem::path>& file, const Json& overrides = Json::object());

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const Json& j);

}  // namespace zonocert
