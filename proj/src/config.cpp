#include "zonocert/config.hpp"

#include <cstdio>

#include "zonocert/errors.hpp"

namespace zonocert {

namespace {

void apply_desk(HjConfig& c, const std::vector<Eigen::Index>& hidden) {
  c.iterations = 20000;
  c.hidden = hidden;
  c.batch = 128;
  c.warmup = 2000;
  c.curriculum_interval = 5000;
}

Json hj_to_json(const HjConfig& c) {
  return {{"iterations", c.iterations},
          {"batch", c.batch},
          {"gamma", c.gamma},
          {"lrCritic", c.lr_critic},
          {"lrActor", c.lr_actor},
          {"tau", c.tau},
          {"sigmaExpl", c.sigma_expl},
          {"preactivationPenalty", c.preactivation_penalty},
          {"hidden", c.hidden},
          {"replayCapacity", c.replay_capacity},
          {"warmup", c.warmup},
          {"episodeLength", c.episode_length},
          {"curriculumRate", c.curriculum_rate},
          {"curriculumInterval", c.curriculum_interval},
          {"annulusGap", c.annulus_gap},
          {"innerRadius", c.inner_radius},
          {"spectralBound", c.spectral_bound},
          {"coreRadius", c.core_radius},
          {"logInterval", c.log_interval}};
}

HjConfig hj_from_json(const Json& j) {
  HjConfig c;
  j.at("iterations").get_to(c.iterations);
  j.at("batch").get_to(c.batch);
  j.at("gamma").get_to(c.gamma);
  j.at("lrCritic").get_to(c.lr_critic);
  j.at("lrActor").get_to(c.lr_actor);
  j.at("tau").get_to(c.tau);
  j.at("sigmaExpl").get_to(c.sigma_expl);
  j.at("preactivationPenalty").get_to(c.preactivation_penalty);
  c.hidden = j.at("hidden").get<std::vector<Eigen::Index>>();
  j.at("replayCapacity").get_to(c.replay_capacity);
  j.at("warmup").get_to(c.warmup);
  j.at("episodeLength").get_to(c.episode_length);
  j.at("curriculumRate").get_to(c.curriculum_rate);
  j.at("curriculumInterval").get_to(c.curriculum_interval);
  j.at("annulusGap").get_to(c.annulus_gap);
  j.at("innerRadius").get_to(c.inner_radius);
  j.at("spectralBound").get_to(c.spectral_bound);
  j.at("coreRadius").get_to(c.core_radius);
  j.at("logInterval").get_to(c.log_interval);
  return c;
}

Json distill_to_json(const DistillConfig& c) {
  return {{"iterations", c.iterations},
          {"batchZonotopes", c.batch_zonotopes},
          {"horizon", c.horizon},
          {"samplesPerFragment", c.samples_per_fragment},
          {"topFraction", c.top_fraction},
          {"lrStart", c.lr_start},
          {"lrEnd", c.lr_end},
          {"generatorsMin", c.generators_min},
          {"generatorsMax", c.generators_max},
          {"generatorScaleMin", c.generator_scale_min},
          {"generatorScaleMax", c.generator_scale_max},
          {"multiFragmentShare", c.multi_fragment_share},
          {"clusterMin", c.cluster_min},
          {"clusterMax", c.cluster_max},
          {"clusterSpread", c.cluster_spread},
          {"clusterScale", c.cluster_scale},
          {"hidden", c.hidden},
          {"logInterval", c.log_interval}};
}

DistillConfig distill_from_json(const Json& j) {
  DistillConfig c;
  j.at("iterations").get_to(c.iterations);
  j.at("batchZonotopes").get_to(c.batch_zonotopes);
  j.at("horizon").get_to(c.horizon);
  j.at("samplesPerFragment").get_to(c.samples_per_fragment);
  j.at("topFraction").get_to(c.top_fraction);
  j.at("lrStart").get_to(c.lr_start);
  j.at("lrEnd").get_to(c.lr_end);
  j.at("generatorsMin").get_to(c.generators_min);
  j.at("generatorsMax").get_to(c.generators_max);
  j.at("generatorScaleMin").get_to(c.generator_scale_min);
  j.at("generatorScaleMax").get_to(c.generator_scale_max);
  j.at("multiFragmentShare").get_to(c.multi_fragment_share);
  j.at("clusterMin").get_to(c.cluster_min);
  j.at("clusterMax").get_to(c.cluster_max);
  j.at("clusterSpread").get_to(c.cluster_spread);
  j.at("clusterScale").get_to(c.cluster_scale);
  j.at("hidden").get_to(c.hidden);
  j.at("logInterval").get_to(c.log_interval);
  return c;
}

/// Recursively overlays `layer` on `base`; every key of `layer` must exist in `base`.
void merge_checked(Json& base, const Json& layer, const std::string& where) {
  if (!layer.is_object()) throw FormatError("config: " + (where.empty() ? std::string("root") : where) + " must be an object");
  for (const auto& [key, value] : layer.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw FormatError("config: unknown key '" + path + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else {
      const bool ok = (slot.is_number() && value.is_number()) || (slot.is_array() && value.is_array()) ||
                      (slot.is_string() && value.is_string()) || (slot.is_boolean() && value.is_boolean());
      if (!ok) throw FormatError("config: wrong type for '" + path + "'");
      slot = value;
    }
  }
}

}  // namespace

RunConfig default_config(const std::string& benchmark, const std::string& profile) {
  if (profile != "paper" && profile != "desk") throw FormatError("config: profile must be 'paper' or 'desk'");
  const PwaSystem sys = make_benchmark(benchmark);
  RunConfig c;
  c.benchmark = to_string(parse_benchmark(benchmark));
  c.profile = profile;
  c.out = std::filesystem::path("runs") / c.benchmark;
  c.hj = HjConfig::for_system(sys);
  c.local_core = HjConfig::local_core(sys);
  c.global_critic = HjConfig::for_system(sys);
  c.budgets.generators = 40;
  c.budgets.fragments = sys.state_dim >= 4 ? 300 : 500;
  c.verify.z0_center = Vec::Constant(sys.state_dim, -1.0);
  c.terminal.core_radius = 1.5 * sys.target_radius;
  if (profile == "desk") {
    apply_desk(c.hj, {64, 64});
    apply_desk(c.local_core, {64, 64});
    apply_desk(c.global_critic, {256, 256});
    c.distill.iterations = 500;
  }
  return c;
}

Json config_to_json(const RunConfig& c) {
  return {{"benchmark", c.benchmark},
          {"profile", c.profile},
          {"seeds", c.seeds},
          {"out", c.out.string()},
          {"hj", hj_to_json(c.hj)},
          {"localCore", hj_to_json(c.local_core)},
          {"globalCritic", hj_to_json(c.global_critic)},
          {"distill", distill_to_json(c.distill)},
          {"budgets", {{"generators", c.budgets.generators}, {"fragments", c.budgets.fragments}}},
          {"verify",
           {{"kMax", c.verify.k_max},
            {"z0Center", to_json(c.verify.z0_center)},
            {"z0Radius", c.verify.z0_radius},
            {"coverCount", c.verify.cover_count},
            {"boxRadius", c.verify.box_radius},
            {"rolloutSamples", c.verify.rollout_samples}}},
          {"terminal",
           {{"coreRadius", c.terminal.core_radius},
            {"diameters", c.terminal.diameters},
            {"cqlfIters", c.terminal.cqlf_iters},
            {"cqlfRestarts", c.terminal.cqlf_restarts}}},
          {"grid", {{"radii", c.grid.radii}}},
          {"bench",
           {{"scenarioPoints", c.bench.scenario_points},
            {"scenarioBudget", c.bench.scenario_budget},
            {"steps", c.bench.steps}}}};
}

RunConfig config_from_json(const Json& j) {
  // Round-tripping through the default layout rejects unknown keys.
  Json full = config_to_json(default_config(j.at("benchmark").get<std::string>(), j.at("profile").get<std::string>()));
  merge_checked(full, j, "");
  RunConfig c;
  try {
    full.at("benchmark").get_to(c.benchmark);
    full.at("profile").get_to(c.profile);
    c.seeds = full.at("seeds").get<std::vector<std::uint64_t>>();
    c.out = full.at("out").get<std::string>();
    c.hj = hj_from_json(full.at("hj"));
    c.local_core = hj_from_json(full.at("localCore"));
    c.global_critic = hj_from_json(full.at("globalCritic"));
    c.distill = distill_from_json(full.at("distill"));
    full.at("budgets").at("generators").get_to(c.budgets.generators);
    full.at("budgets").at("fragments").get_to(c.budgets.fragments);
    const Json& v = full.at("verify");
    v.at("kMax").get_to(c.verify.k_max);
    c.verify.z0_center = vector_from_json(v.at("z0Center"));
    v.at("z0Radius").get_to(c.verify.z0_radius);
    v.at("coverCount").get_to(c.verify.cover_count);
    v.at("boxRadius").get_to(c.verify.box_radius);
    v.at("rolloutSamples").get_to(c.verify.rollout_samples);
    const Json& t = full.at("terminal");
    t.at("coreRadius").get_to(c.terminal.core_radius);
    c.terminal.diameters = t.at("diameters").get<std::vector<double>>();
    t.at("cqlfIters").get_to(c.terminal.cqlf_iters);
    t.at("cqlfRestarts").get_to(c.terminal.cqlf_restarts);
    c.grid.radii = full.at("grid").at("radii").get<std::vector<double>>();
    const Json& b = full.at("bench");
    b.at("scenarioPoints").get_to(c.bench.scenario_points);
    b.at("scenarioBudget").get_to(c.bench.scenario_budget);
    b.at("steps").get_to(c.bench.steps);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (c.seeds.empty()) throw FormatError("config: at least one seed is required");
  if (c.verify.k_max <= 0) throw FormatError("config: verify.kMax must be positive");
  if (c.verify.z0_center.size() != make_benchmark(c.benchmark).state_dim)
    throw FormatError("config: verify.z0Center has the wrong dimension");
  return c;
}

RunConfig load_config(const std::optional<std::filesystem::path>& file, const Json& overrides) {
  Json layer_file = Json::object();
  if (file) layer_file = read_json_file(*file);
  if (!layer_file.is_object() || !overrides.is_object()) throw FormatError("config: layers must be JSON objects");
  auto pick = [&](const char* key, const std::string& fallback) {
    if (overrides.contains(key)) return overrides.at(key).get<std::string>();
    if (layer_file.contains(key)) return layer_file.at(key).get<std::string>();
    return fallback;
  };
  Json merged;
  try {
    const std::string benchmark = pick("benchmark", "FourQuad");
    const std::string profile = pick("profile", "paper");
    merged = config_to_json(default_config(benchmark, profile));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("config: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  merge_checked(merged, layer_file, "");
  merge_checked(merged, overrides, "");
  return config_from_json(merged);
}

std::string config_hash(const Json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace zonocert
