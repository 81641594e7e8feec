#include "zonocert/neural_verify.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "zonocert/errors.hpp"
#include "zonocert/linalg.hpp"
#include "zonocert/parallel.hpp"

namespace zonocert {

std::size_t NeuronStability::unstable_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(std::count(l.begin(), l.end(), Stability::Unstable));
  return n;
}

std::size_t NeuronStability::inactive_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(std::count(l.begin(), l.end(), Stability::Inactive));
  return n;
}

bool NeuronStability::refines(const NeuronStability& coarser) const {
  if (layers.size() != coarser.layers.size()) return false;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].size() != coarser.layers[k].size()) return false;
    for (std::size_t i = 0; i < layers[k].size(); ++i)
      if (coarser.layers[k][i] != Stability::Unstable && layers[k][i] != coarser.layers[k][i]) return false;
  }
  return true;
}

namespace {

double tanh_slope(double z) {
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

}  // namespace

PropagationResult prop_network(const Mlp& net, const Zonotope& z) {
  if (z.dim() != net.input_dim()) throw DimensionMismatch("prop_network: region dimension");
  PropagationResult out;
  Vec c = z.center();
  Mat g = z.generators();
  for (const auto& layer : net.layers()) {
    c = layer.w * c + layer.b;
    g = layer.w * g;
    const Vec rad = g.cols() ? Vec(g.cwiseAbs().rowwise().sum()) : Vec::Zero(c.size());
    const Vec lo = c - rad, hi = c + rad;
    out.pre_lower.push_back(lo);
    out.pre_upper.push_back(hi);

    std::vector<Stability> cls;
    if (layer.activation == Activation::Identity) {
      out.stability.layers.push_back(std::move(cls));
      continue;
    }
    const Eigen::Index rows = c.size();
    std::vector<std::pair<Eigen::Index, double>> fresh;
    if (layer.activation == Activation::ReLU) {
      cls.resize(static_cast<std::size_t>(rows));
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (lo(i) >= 0.0) {
          cls[static_cast<std::size_t>(i)] = Stability::Active;
        } else if (hi(i) <= 0.0) {
          cls[static_cast<std::size_t>(i)] = Stability::Inactive;
          c(i) = 0.0;
          g.row(i).setZero();
        } else {
          cls[static_cast<std::size_t>(i)] = Stability::Unstable;
          const double lambda = hi(i) / (hi(i) - lo(i));
          const double mu = -lambda * lo(i) / 2.0;
          c(i) = lambda * c(i) + mu;
          g.row(i) *= lambda;
          fresh.emplace_back(i, mu);
        }
      }
    } else {  // tanh
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double l = lo(i), u = hi(i);
        if (u - l <= 0.0) {
          c(i) = std::tanh(c(i));
          g.row(i).setZero();
          continue;
        }
        const double lambda = std::min(tanh_slope(l), tanh_slope(u));
        const double tl = std::tanh(l), tu = std::tanh(u);
        const double mu1 = 0.5 * (tu + tl - lambda * (u + l));
        const double mu2 = 0.5 * (tu - tl - lambda * (u - l)) + 1e-15 * (1.0 + std::abs(tu) + std::abs(tl));
        c(i) = lambda * c(i) + mu1;
        g.row(i) *= lambda;
        if (mu2 > 0.0) fresh.emplace_back(i, mu2);
      }
    }
    out.stability.layers.push_back(std::move(cls));
    if (!fresh.empty()) {
      const Eigen::Index p = g.cols();
      Mat grown = Mat::Zero(rows, p + static_cast<Eigen::Index>(fresh.size()));
      grown.leftCols(p) = g;
      for (std::size_t k = 0; k < fresh.size(); ++k)
        grown(fresh[k].first, p + static_cast<Eigen::Index>(k)) = fresh[k].second;
      g = std::move(grown);
    }
  }
  out.output = Zonotope(std::move(c), std::move(g));
  return out;
}

Zonotope stack_state_action(const Zonotope& state, const Zonotope& action) {
  const Eigen::Index n = state.dim(), m = action.dim();
  const Eigen::Index p = state.order();
  if (action.order() < p) throw DimensionMismatch("action enclosure lost the shared state factors");
  const Eigen::Index extra = action.order() - p;
  Vec c(n + m);
  c << state.center(), action.center();
  Mat g = Mat::Zero(n + m, p + extra);
  g.topLeftCorner(n, p) = state.generators();
  g.bottomRows(m) = action.generators();
  return Zonotope(std::move(c), std::move(g));
}

CompositeResult prop_value_composite(const Mlp& actor, const Mlp& critic, const Zonotope& z) {
  if (critic.input_dim() != z.dim() + actor.output_dim())
    throw DimensionMismatch("prop_value_composite: critic input must be state + action");
  if (critic.output_dim() != 1) throw DimensionMismatch("prop_value_composite: critic must be scalar");
  auto act = prop_network(actor, z);
  CompositeResult out;
  out.state_action = stack_state_action(z, act.output);
  auto val = prop_network(critic, out.state_action);
  out.value = std::move(val.output);
  out.actor = std::move(act.stability);
  out.critic = std::move(val.stability);
  return out;
}

double envelope_upper(const Zonotope& y) {
  if (y.dim() != 1) throw DimensionMismatch("envelope_upper: scalar zonotope expected");
  return y.center()(0) + (y.order() ? y.generators().cwiseAbs().sum() : 0.0);
}

double envelope_lower(const Zonotope& y) {
  if (y.dim() != 1) throw DimensionMismatch("envelope_lower: scalar zonotope expected");
  return y.center()(0) - (y.order() ? y.generators().cwiseAbs().sum() : 0.0);
}

double lipschitz_spectral(const Mlp& net) {
  double l = 1.0;
  for (const auto& layer : net.layers()) l *= spectral_norm_holder(layer.w);
  return l;
}

double lipschitz_spectral_certified(const Mlp& net) {
  double l = 1.0;
  for (const auto& layer : net.layers()) l *= spectral_norm_certified(layer.w);
  return l;
}

double lipschitz_value_spectral(const Mlp& actor, const Mlp& critic) {
  const double l_pi = lipschitz_spectral_certified(actor);
  return lipschitz_spectral_certified(critic) * std::sqrt(1.0 + l_pi * l_pi);
}

namespace {

/// Diagonal slope range of each layer's activation over the region.
struct SlopeRange {
  Vec lo, hi;
};

std::vector<SlopeRange> slope_ranges(const Mlp& net, const PropagationResult& prop) {
  std::vector<SlopeRange> out;
  for (std::size_t k = 0; k < net.depth(); ++k) {
    const auto& layer = net.layers()[k];
    const Vec& l = prop.pre_lower[k];
    const Vec& u = prop.pre_upper[k];
    SlopeRange r{Vec::Ones(l.size()), Vec::Ones(l.size())};
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      switch (layer.activation) {
        case Activation::Identity: break;
        case Activation::ReLU:
          r.lo(i) = l(i) >= 0.0 ? 1.0 : 0.0;
          r.hi(i) = u(i) <= 0.0 ? 0.0 : 1.0;
          break;
        case Activation::Tanh: {
          const double sl = tanh_slope(l(i)), su = tanh_slope(u(i));
          r.lo(i) = std::min(sl, su);
          // slope peaks at 0 when the interval straddles it
          r.hi(i) = (l(i) <= 0.0 && u(i) >= 0.0) ? 1.0 : std::max(sl, su);
          break;
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

LocalLipschitz lipschitz_local_detail(const Mlp& net, const Zonotope& region, std::size_t max_vertices,
                                      Eigen::Index col_begin, Eigen::Index col_count) {
  if (col_count < 0) col_count = net.input_dim() - col_begin;
  if (col_begin < 0 || col_begin + col_count > net.input_dim() || col_count == 0)
    throw DimensionMismatch("lipschitz_local: input block out of range");
  auto prop = prop_network(net, region);
  const auto slopes = slope_ranges(net, prop);
  LocalLipschitz out;
  out.stability = prop.stability;

  double product = 1.0;
  for (std::size_t k = 0; k < net.depth(); ++k) {
    const Mat& w = net.layers()[k].w;
    const Mat masked = slopes[k].hi.asDiagonal() * (k == 0 ? Mat(w.middleCols(col_begin, col_count)) : w);
    product *= spectral_norm_certified(masked);
  }
  out.factor_product = product;
  out.bound = product;

  // Undecided diagonal entries: the Jacobian norm is convex in each, so its
  // maximum over the slope box is attained at a vertex.
  std::vector<std::pair<std::size_t, Eigen::Index>> free;
  for (std::size_t k = 0; k < slopes.size(); ++k)
    for (Eigen::Index i = 0; i < slopes[k].lo.size(); ++i)
      if (slopes[k].hi(i) > slopes[k].lo(i)) free.emplace_back(k, i);
  if (free.size() >= 63 || (std::size_t{1} << free.size()) > max_vertices || product == 0.0) return out;

  std::vector<Vec> diag(slopes.size());
  double best = 0.0;
  const std::size_t vertices = std::size_t{1} << free.size();
  for (std::size_t v = 0; v < vertices; ++v) {
    for (std::size_t k = 0; k < slopes.size(); ++k) diag[k] = slopes[k].lo;
    for (std::size_t f = 0; f < free.size(); ++f) {
      const auto [k, i] = free[f];
      diag[k](i) = (v >> f) & 1 ? slopes[k].hi(i) : slopes[k].lo(i);
    }
    Mat jac = diag[0].asDiagonal() * net.layers()[0].w.middleCols(col_begin, col_count);
    for (std::size_t k = 1; k < net.depth(); ++k) jac = diag[k].asDiagonal() * (net.layers()[k].w * jac);
    best = std::max(best, spectral_norm_certified(jac));
  }
  out.vertex_bound = best * (1.0 + 1e-12);
  out.bound = std::min(product, out.vertex_bound);
  return out;
}

double lipschitz_local(const Mlp& net, const Zonotope& region) { return lipschitz_local_detail(net, region).bound; }

CompositeLipschitz lipschitz_composite(const Mlp& actor, const Mlp& critic, const Zonotope& region) {
  const Eigen::Index n = actor.input_dim(), m = actor.output_dim();
  if (region.dim() != n || critic.input_dim() != n + m) throw DimensionMismatch("lipschitz_composite: shapes");
  CompositeLipschitz out;
  const auto a = lipschitz_local_detail(actor, region);
  out.l_pi = a.bound;
  out.actor = a.stability;
  const Zonotope sa = prop_value_composite(actor, critic, region).state_action;
  const auto q = lipschitz_local_detail(critic, sa);
  out.l_q = q.bound;
  out.critic = q.stability;
  out.l_qx = lipschitz_local_detail(critic, sa, 4096, 0, n).bound;
  out.l_qu = lipschitz_local_detail(critic, sa, 4096, n, m).bound;
  out.l_v = std::min(out.l_q * std::sqrt(1.0 + out.l_pi * out.l_pi), out.l_qx + out.l_qu * out.l_pi);
  return out;
}

namespace {

struct FreeSlope {
  bool critic;
  std::size_t layer;
  Eigen::Index row;
};

Mat chain_jacobian(const Mlp& net, const std::vector<Vec>& diag) {
  Mat jac = diag[0].asDiagonal() * net.layers()[0].w;
  for (std::size_t k = 1; k < net.depth(); ++k) jac = diag[k].asDiagonal() * (net.layers()[k].w * jac);
  return jac;
}

}  // namespace

namespace {

struct PieceBound {
  double l_pi = 0.0, l_v = 0.0;
  std::size_t boxes = 0, vertex_boxes = 0;
  std::pair<std::size_t, std::size_t> unstable{0, 0};

  void merge(const PieceBound& o) {
    l_pi = std::max(l_pi, o.l_pi);
    l_v = std::max(l_v, o.l_v);
    boxes += o.boxes;
    vertex_boxes += o.vertex_boxes;
    unstable.first = std::max(unstable.first, o.unstable.first);
    unstable.second = std::max(unstable.second, o.unstable.second);
  }
};

/// Joint vertex bound on one box; boxes with too many undecided slopes are
/// bisected along every axis up to `depth` more times, then bounded coarsely.
PieceBound value_box_bound(const Mlp& actor, const Mlp& critic, const Vec& c, const Vec& half, int depth,
                           std::size_t max_vertices) {
  const Eigen::Index n = c.size();
  const Zonotope box(c, Mat(half.asDiagonal()));
  const auto a = prop_network(actor, box);
  const auto q = prop_network(critic, stack_state_action(box, a.output));
  const auto sa = slope_ranges(actor, a), sq = slope_ranges(critic, q);

  std::vector<FreeSlope> free;
  for (std::size_t k = 0; k < sa.size(); ++k)
    for (Eigen::Index i = 0; i < sa[k].lo.size(); ++i)
      if (sa[k].hi(i) > sa[k].lo(i)) free.push_back({false, k, i});
  for (std::size_t k = 0; k < sq.size(); ++k)
    for (Eigen::Index i = 0; i < sq[k].lo.size(); ++i)
      if (sq[k].hi(i) > sq[k].lo(i)) free.push_back({true, k, i});

  const bool enumerable = free.size() < 63 && (std::size_t{1} << free.size()) <= max_vertices;
  if (!enumerable && depth > 0) {
    PieceBound out;
    for (long mask = 0; mask < (1L << n); ++mask) {
      Vec cc = c;
      for (Eigen::Index i = 0; i < n; ++i) cc(i) += ((mask >> i) & 1 ? 0.5 : -0.5) * half(i);
      out.merge(value_box_bound(actor, critic, cc, 0.5 * half, depth - 1, max_vertices));
    }
    return out;
  }

  PieceBound out;
  out.boxes = 1;
  out.unstable = {a.stability.unstable_count(), q.stability.unstable_count()};
  if (!enumerable) {
    const auto cl = lipschitz_composite(actor, critic, box);
    out.l_v = cl.l_v;
    out.l_pi = cl.l_pi;
    return out;
  }
  std::vector<Vec> da(sa.size()), dq(sq.size());
  double best_v = 0.0, best_pi = 0.0;
  for (std::size_t v = 0; v < (std::size_t{1} << free.size()); ++v) {
    for (std::size_t k = 0; k < sa.size(); ++k) da[k] = sa[k].lo;
    for (std::size_t k = 0; k < sq.size(); ++k) dq[k] = sq[k].lo;
    for (std::size_t f = 0; f < free.size(); ++f) {
      const auto& s = free[f];
      const auto& range = s.critic ? sq[s.layer] : sa[s.layer];
      (s.critic ? dq : da)[s.layer](s.row) = (v >> f) & 1 ? range.hi(s.row) : range.lo(s.row);
    }
    const Mat jpi = chain_jacobian(actor, da);
    const Mat jq = chain_jacobian(critic, dq);
    const Mat grad = jq.leftCols(n) + jq.rightCols(jq.cols() - n) * jpi;
    best_v = std::max(best_v, grad.norm());
    best_pi = std::max(best_pi, spectral_norm_certified(jpi));
  }
  out.l_v = best_v * (1.0 + 1e-12);
  out.l_pi = best_pi * (1.0 + 1e-12);
  out.vertex_boxes = 1;
  return out;
}

}  // namespace

PartitionedLipschitz lipschitz_value_partitioned(const Mlp& actor, const Mlp& critic, const Zonotope& region,
                                                 int pieces_per_axis, std::size_t max_vertices, int refine_depth) {
  const Eigen::Index n = actor.input_dim();
  if (region.dim() != n || critic.input_dim() != n + actor.output_dim() || critic.output_dim() != 1)
    throw DimensionMismatch("lipschitz_value_partitioned: shapes");
  if (pieces_per_axis < 1 || refine_depth < 0) throw std::invalid_argument("lipschitz_value_partitioned: bad partition");
  const Vec lo = region.hull_lower(), hi = region.hull_upper();
  const Vec half = (hi - lo) / (2.0 * pieces_per_axis);
  std::size_t count = 1;
  for (Eigen::Index i = 0; i < n; ++i) count *= static_cast<std::size_t>(pieces_per_axis);

  std::vector<PieceBound> pieces(count);
  parallel_for(count, [&](std::size_t idx) {
    Vec c(n);
    std::size_t rest = idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto j = static_cast<double>(rest % static_cast<std::size_t>(pieces_per_axis));
      rest /= static_cast<std::size_t>(pieces_per_axis);
      c(i) = lo(i) + (2.0 * j + 1.0) * half(i);
    }
    pieces[idx] = value_box_bound(actor, critic, c, half, refine_depth, max_vertices);
  });
  PieceBound all;
  for (const auto& p : pieces) all.merge(p);
  PartitionedLipschitz res;
  res.l_v = all.l_v;
  res.l_pi = all.l_pi;
  res.pieces = all.boxes;
  res.vertex_pieces = all.vertex_boxes;
  res.max_unstable = all.unstable;
  return res;
}

std::pair<std::size_t, std::size_t> count_unstable(const NeuronStability& actor, const NeuronStability& critic) {
  return {actor.unstable_count(), critic.unstable_count()};
}

}  // namespace zonocert
