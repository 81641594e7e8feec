#include "zonocert/set_actor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "zonocert/errors.hpp"
#include "zonocert/json_io.hpp"

namespace zonocert {

TokenSet tokenize(const ZonotopeFamily& fam) {
  if (fam.empty()) throw std::invalid_argument("tokenize: empty family");
  const Eigen::Index n = fam.fragments.front().dim();
  Eigen::Index total = 0;
  for (const auto& z : fam.fragments) {
    if (z.dim() != n) throw DimensionMismatch("tokenize: fragments of different dimension");
    total += 1 + z.order();
  }
  TokenSet t;
  t.tokens.resize(n + 1, total);
  Eigen::Index col = 0;
  for (const auto& z : fam.fragments) {
    t.tokens.col(col).head(n) = z.center();
    t.tokens(n, col++) = 1.0;
    for (Eigen::Index j = 0; j < z.order(); ++j) {
      t.tokens.col(col).head(n) = z.generators().col(j);
      t.tokens(n, col++) = 0.0;
    }
  }
  t.mask_length = total;
  return t;
}

std::vector<TokenSet> pad_token_sets(std::vector<TokenSet> sets) {
  Eigen::Index longest = 0;
  for (const auto& s : sets) longest = std::max(longest, s.size());
  for (auto& s : sets) {
    const Eigen::Index old = s.size();
    s.tokens.conservativeResize(Eigen::NoChange, longest);
    s.tokens.rightCols(longest - old).setZero();
  }
  return sets;
}

// ---------------------------------------------------------------------------
// SetActor

SetActor SetActor::create(const PwaSystem& sys, CounterRng& rng, Eigen::Index hidden) {
  SetActor a;
  const Eigen::Index n = sys.state_dim;
  a.encoder = Mlp::create({n + 1, hidden, hidden, kEmbedding}, Activation::ReLU, Activation::Identity, rng);
  a.decoder = Mlp::create({kEmbedding, hidden, hidden, sys.input_dim}, Activation::ReLU, Activation::Tanh, rng);
  a.action_center = sys.action_center();
  a.action_half_width = sys.action_half_width();
  return a;
}

namespace {

Mat real_tokens(const TokenSet& t) {
  if (t.mask_length <= 0 || t.mask_length > t.size()) throw std::invalid_argument("token set: bad mask length");
  return t.tokens.leftCols(t.mask_length);
}

/// Coordinatewise max over columns [begin, begin + len), first index on ties.
void max_pool(const Mat& emb, Eigen::Index begin, Eigen::Index len, Eigen::Ref<Vec> out,
              std::vector<Eigen::Index>* argmax) {
  if (argmax) argmax->assign(static_cast<std::size_t>(emb.rows()), 0);
  for (Eigen::Index r = 0; r < emb.rows(); ++r) {
    Eigen::Index best = 0;
    double v = emb(r, begin);
    for (Eigen::Index c = 1; c < len; ++c)
      if (emb(r, begin + c) > v) {
        v = emb(r, begin + c);
        best = c;
      }
    out(r) = v;
    if (argmax) (*argmax)[static_cast<std::size_t>(r)] = best;
  }
}

/// Forward pass over several token sets that keeps what backward needs.
struct SetForward {
  ForwardCache encoder;
  ForwardCache decoder;
  std::vector<Eigen::Index> offsets;
  std::vector<std::vector<Eigen::Index>> argmax;
  Mat actions;  // m x S, scaled to the action box
};

SetForward forward_sets(const SetActor& a, const std::vector<TokenSet>& sets) {
  if (sets.empty()) throw std::invalid_argument("set actor: no token sets");
  const Eigen::Index rows = a.encoder.input_dim();
  Eigen::Index total = 0;
  for (const auto& s : sets) {
    if (s.tokens.rows() != rows) throw DimensionMismatch("set actor: token width");
    total += real_tokens(s).cols();
  }
  Mat all(rows, total);
  SetForward f;
  Eigen::Index col = 0;
  for (const auto& s : sets) {
    f.offsets.push_back(col);
    all.middleCols(col, s.mask_length) = real_tokens(s);
    col += s.mask_length;
  }
  f.encoder = forward_cached(a.encoder, all);
  const Mat& emb = f.encoder.result();
  Mat pooled(emb.rows(), static_cast<Eigen::Index>(sets.size()));
  f.argmax.resize(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s)
    max_pool(emb, f.offsets[s], sets[s].mask_length, pooled.col(static_cast<Eigen::Index>(s)), &f.argmax[s]);
  f.decoder = forward_cached(a.decoder, pooled);
  f.actions = a.action_half_width.asDiagonal() * f.decoder.result();
  f.actions.colwise() += a.action_center;
  return f;
}

SetActorGradients backward_sets(const SetActor& a, const SetForward& f, const Mat& upstream) {
  const auto gd = backward(a.decoder, f.decoder, a.action_half_width.asDiagonal() * upstream);
  Mat up = Mat::Zero(f.encoder.result().rows(), f.encoder.result().cols());
  for (std::size_t s = 0; s < f.argmax.size(); ++s)
    for (Eigen::Index r = 0; r < up.rows(); ++r)
      up(r, f.offsets[s] + f.argmax[s][static_cast<std::size_t>(r)]) += gd.input_grad(r, static_cast<Eigen::Index>(s));
  return {backward(a.encoder, f.encoder, up).params, gd.params};
}

}  // namespace

Vec SetActor::pool(const TokenSet& tokens, std::vector<Eigen::Index>* argmax) const {
  const Mat emb = encoder.forward_batch(real_tokens(tokens));
  Vec out(emb.rows());
  max_pool(emb, 0, emb.cols(), out, argmax);
  return out;
}

Vec SetActor::act_tokens(const TokenSet& tokens) const {
  if (tokens.tokens.rows() != encoder.input_dim()) throw DimensionMismatch("set actor: token width");
  return action_center + action_half_width.cwiseProduct(decoder.forward(pool(tokens)));
}

Vec SetActor::act(const ZonotopeFamily& fam) const { return act_tokens(tokenize(fam)); }

SetActorGradients SetActor::backward(const std::vector<TokenSet>& sets, const Mat& upstream) const {
  if (upstream.rows() != input_dim() || upstream.cols() != static_cast<Eigen::Index>(sets.size()))
    throw DimensionMismatch("set actor backward: upstream shape");
  return backward_sets(*this, forward_sets(*this, sets), upstream);
}

void SetActor::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_json_file(path, Json{{"version", kWeightFormatVersion},
                             {"role", "set_actor"},
                             {"encoder", mlp_to_json(encoder)},
                             {"decoder", mlp_to_json(decoder)},
                             {"action_center", to_json(action_center)},
                             {"action_half_width", to_json(action_half_width)}});
}

SetActor SetActor::load(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  if (j.value("role", std::string()) != "set_actor") throw FormatError("not a set_actor weight file: " + path.string());
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kWeightFormatVersion)
    throw FormatError("set_actor weights: expected version 1");
  SetActor a;
  try {
    a.encoder = mlp_from_json(j.at("encoder"));
    a.decoder = mlp_from_json(j.at("decoder"));
    a.action_center = vector_from_json(j.at("action_center"));
    a.action_half_width = vector_from_json(j.at("action_half_width"));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed set_actor weights: ") + e.what());
  }
  if (a.encoder.output_dim() != a.decoder.input_dim() || a.action_center.size() != a.decoder.output_dim() ||
      a.action_half_width.size() != a.decoder.output_dim())
    throw DimensionMismatch("set_actor encoder, decoder and action box do not fit together");
  return a;
}

// ---------------------------------------------------------------------------
// Regret

double regret(const HjModel& model, const PwaSystem& sys, const Vec& p, const Vec& u_set) {
  if (!sys.action_admissible(u_set)) throw std::invalid_argument("regret: action outside the action box");
  const Vec u_star = model.act(p);
  Mat next(p.size(), 2);
  next.col(0) = nominal_step(sys, p, u_set);
  next.col(1) = nominal_step(sys, p, u_star);
  const Vec v = model.value_batch(next);
  return v(0) - v(1);
}

std::vector<std::size_t> top_positive_indices(const std::vector<double>& values, double fraction) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] > 0.0) pos.push_back(i);
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  if (pos.size() < 4) return pos;
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(pos.size()) - 1e-9));
  pos.resize(std::clamp<std::size_t>(k, 1, pos.size()));
  return pos;
}

double top_positive_mean(const std::vector<double>& values, double fraction) {
  const auto idx = top_positive_indices(values, fraction);
  if (idx.empty()) return 0.0;
  double s = 0.0;
  for (auto i : idx) s += values[i];
  return s / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// Distillation

double cosine_lr(const DistillConfig& cfg, long iteration) {
  const double span = static_cast<double>(std::max<long>(1, cfg.iterations - 1));
  const double t = std::clamp(static_cast<double>(iteration) / span, 0.0, 1.0);
  return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

Mat random_generators(const PwaSystem& sys, const DistillConfig& cfg, double scale_factor, CounterRng& rng) {
  const Eigen::Index n = sys.state_dim;
  const auto span = static_cast<std::uint64_t>(cfg.generators_max - cfg.generators_min + 1);
  const Eigen::Index p = cfg.generators_min + static_cast<Eigen::Index>(rng.below(span));
  Mat g(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    Vec d = rng.normal_vector(n);
    while (d.norm() == 0.0) d = rng.normal_vector(n);
    g.col(j) = scale_factor * rng.uniform(cfg.generator_scale_min, cfg.generator_scale_max) * d / d.norm();
  }
  return g;
}

Vec uniform_in_domain(const PwaSystem& sys, CounterRng& rng) {
  Vec x(sys.state_dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(sys.domain_lower(i), sys.domain_upper(i));
  return x;
}

/// Mode of a point, falling back to the mode of its projection onto the domain box.
std::size_t mode_or_nearest(const PwaSystem& sys, const Vec& x) {
  try {
    return mode_of(sys, x);
  } catch (const NoMode&) {
    return mode_of(sys, x.cwiseMax(sys.domain_lower).cwiseMin(sys.domain_upper));
  }
}

}  // namespace

ZonotopeFamily sample_training_family(const PwaSystem& sys, const DistillConfig& cfg, bool cluster,
                                      CounterRng& rng) {
  if (!cluster) return ZonotopeFamily(Zonotope(uniform_in_domain(sys, rng), random_generators(sys, cfg, 1.0, rng)));
  const Vec base = uniform_in_domain(sys, rng);
  const auto span = static_cast<std::uint64_t>(cfg.cluster_max - cfg.cluster_min + 1);
  const int count = cfg.cluster_min + static_cast<int>(rng.below(span));
  ZonotopeFamily fam;
  for (int i = 0; i < count; ++i) {
    Vec c = base + rng.uniform_vector(sys.state_dim, -cfg.cluster_spread, cfg.cluster_spread);
    c = c.cwiseMax(sys.domain_lower).cwiseMin(sys.domain_upper);
    fam.fragments.emplace_back(c, random_generators(sys, cfg, cfg.cluster_scale, rng));
  }
  return fam;
}

DistillResult distill(const HjModel& model, const PwaSystem& sys, const DistillConfig& cfg, std::uint64_t seed) {
  CounterRng init(seed, 11);
  return distill(SetActor::create(sys, init, cfg.hidden), model, sys, cfg, seed);
}

DistillResult distill(SetActor actor, const HjModel& model, const PwaSystem& sys, const DistillConfig& cfg,
                      std::uint64_t seed) {
  sys.validate();
  if (actor.state_dim() != sys.state_dim || actor.input_dim() != sys.input_dim ||
      model.state_dim() != sys.state_dim || model.input_dim() != sys.input_dim)
    throw DimensionMismatch("distill: actor, model and system dimensions differ");
  if (cfg.batch_zonotopes == 0 || cfg.horizon <= 0 || cfg.samples_per_fragment == 0)
    throw std::invalid_argument("distill: empty batch, horizon or sample count");

  CounterRng rng(seed, 12);
  DistillResult res;
  res.actor = std::move(actor);
  SetActor& a = res.actor;
  auto adam_e = AdamState::for_network(a.encoder);
  auto adam_d = AdamState::for_network(a.decoder);
  const Eigen::Index n = sys.state_dim;
  const auto nb = static_cast<Eigen::Index>(cfg.batch_zonotopes);
  const double weight = 1.0 / (static_cast<double>(cfg.horizon) * static_cast<double>(nb));

  for (long it = 0; it < cfg.iterations; ++it) {
    const double lr = cosine_lr(cfg, it);
    const bool cluster = rng.uniform() < cfg.multi_fragment_share;
    std::vector<ZonotopeFamily> fams;
    fams.reserve(cfg.batch_zonotopes);
    for (std::size_t b = 0; b < cfg.batch_zonotopes; ++b) fams.push_back(sample_training_family(sys, cfg, cluster, rng));

    SetActorGradients grads{Gradients::zeros_like(a.encoder), Gradients::zeros_like(a.decoder)};
    double loss = 0.0, max_reg = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < cfg.horizon; ++k) {
      std::vector<TokenSet> sets;
      sets.reserve(fams.size());
      for (const auto& f : fams) sets.push_back(tokenize(f));
      const SetForward fwd = forward_sets(a, sets);

      // Sample points from every fragment and push them through both actions.
      std::vector<Eigen::Index> owner;
      std::vector<std::size_t> modes;
      std::vector<Vec> pts;
      for (Eigen::Index b = 0; b < nb; ++b)
        for (const auto& z : fams[static_cast<std::size_t>(b)].fragments)
          for (std::size_t s = 0; s < cfg.samples_per_fragment; ++s) {
            pts.push_back(z.sample(rng));
            owner.push_back(b);
            modes.push_back(mode_or_nearest(sys, pts.back()));
          }
      const auto np = static_cast<Eigen::Index>(pts.size());
      Mat p(n, np);
      for (Eigen::Index j = 0; j < np; ++j) p.col(j) = pts[static_cast<std::size_t>(j)];
      const Mat u_star = model.act_batch(p);
      Mat x_set(n, np), x_star(n, np);
      for (Eigen::Index j = 0; j < np; ++j) {
        const auto& md = sys.modes[modes[static_cast<std::size_t>(j)]];
        const Vec ax = md.a * p.col(j);
        x_set.col(j) = ax + md.b * fwd.actions.col(owner[static_cast<std::size_t>(j)]);
        x_star.col(j) = ax + md.b * u_star.col(j);
      }
      const Vec reg = model.value_batch(x_set) - model.value_batch(x_star);
      max_reg = std::max(max_reg, reg.maxCoeff());

      // Per-family top-fraction aggregation and the selected points.
      std::vector<std::vector<double>> per(fams.size());
      std::vector<std::vector<Eigen::Index>> cols(fams.size());
      for (Eigen::Index j = 0; j < np; ++j) {
        const auto b = static_cast<std::size_t>(owner[static_cast<std::size_t>(j)]);
        per[b].push_back(reg(j));
        cols[b].push_back(j);
      }
      std::vector<Eigen::Index> chosen;
      std::vector<double> scale;
      for (std::size_t b = 0; b < fams.size(); ++b) {
        const auto idx = top_positive_indices(per[b], cfg.top_fraction);
        if (idx.empty()) continue;
        double s = 0.0;
        for (auto i : idx) {
          s += per[b][i];
          chosen.push_back(cols[b][i]);
          scale.push_back(weight / static_cast<double>(idx.size()));
        }
        loss += weight * s / static_cast<double>(idx.size());
      }
      if (!chosen.empty()) {
        Mat xs(n, static_cast<Eigen::Index>(chosen.size()));
        for (std::size_t i = 0; i < chosen.size(); ++i) xs.col(static_cast<Eigen::Index>(i)) = x_set.col(chosen[i]);
        const Mat gv = model.value_gradient_batch(xs);
        Mat du = Mat::Zero(sys.input_dim, nb);
        for (std::size_t i = 0; i < chosen.size(); ++i) {
          const auto j = static_cast<std::size_t>(chosen[i]);
          du.col(owner[j]) += scale[i] * sys.modes[modes[j]].b.transpose() * gv.col(static_cast<Eigen::Index>(i));
        }
        const auto g = backward_sets(a, fwd, du);
        grads.encoder += g.encoder;
        grads.decoder += g.decoder;
      }

      // Affine update of each fragment by its center's mode.
      for (Eigen::Index b = 0; b < nb; ++b)
        for (auto& z : fams[static_cast<std::size_t>(b)].fragments) {
          const auto& md = sys.modes[mode_or_nearest(sys, z.center())];
          z = affine_map(z, md.a, md.b * fwd.actions.col(b));
        }
    }

    adam_step(a.encoder, grads.encoder, adam_e, lr);
    adam_step(a.decoder, grads.decoder, adam_d, lr);
    if (cfg.log_interval > 0 && (it % cfg.log_interval == 0 || it + 1 == cfg.iterations))
      res.log.push_back({it + 1, loss, max_reg, lr});
  }
  return res;
}

void write_distill_log(const std::filesystem::path& path, const std::vector<DistillLogRow>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(10);
  out << "iteration,loss,maxRegret,lr\n";
  for (const auto& r : log) out << r.iteration << ',' << r.loss << ',' << r.max_regret << ',' << r.lr << '\n';
}

double pointwise_gap(const SetActor& actor, const HjModel& model, const PwaSystem& sys, std::size_t samples,
                     CounterRng& rng) {
  if (samples == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec x = uniform_in_domain(sys, rng);
    s += (actor.act(ZonotopeFamily(Zonotope(x))) - model.act(x)).norm();
  }
  return s / static_cast<double>(samples);
}

}  // namespace zonocert
