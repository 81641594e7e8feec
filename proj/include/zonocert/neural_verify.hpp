#pragma once

#include <utility>
#include <vector>

#include "zonocert/neural.hpp"
#include "zonocert/setgeom.hpp"

namespace zonocert {

enum class Stability { Active, Inactive, Unstable };

/// ReLU neuron classes over an input region. Entries for non-ReLU layers are empty.
struct NeuronStability {
  std::vector<std::vector<Stability>> layers;

  std::size_t unstable_count() const;
  std::size_t inactive_count() const;
  /// Every neuron class in `this` is at least as decided as in `coarser`.
  bool refines(const NeuronStability& coarser) const;
};

struct PropagationResult {
  Zonotope output;
  NeuronStability stability;
  std::vector<Vec> pre_lower;  // per-layer pre-activation bounds
  std::vector<Vec> pre_upper;
};

/// Sound zonotope image of a network over Z (DeepZ-style ReLU and tanh
/// relaxations). Columns of Z's generators keep their index in the output;
/// one fresh column is appended per relaxed neuron, in layer-then-neuron order.
PropagationResult prop_network(const Mlp& net, const Zonotope& z);

struct CompositeResult {
  Zonotope value;         // scalar enclosure of {Q(x, pi(x)) : x in Z}
  Zonotope state_action;  // dependency-preserving enclosure of {(x, pi(x))}
  NeuronStability actor;
  NeuronStability critic;
};

/// V(x) = critic(x, actor(x)) over Z, keeping the state factors shared between
/// the state block and the action block of the critic input.
CompositeResult prop_value_composite(const Mlp& actor, const Mlp& critic, const Zonotope& z);

/// c + ||G||_1 of a scalar zonotope.
double envelope_upper(const Zonotope& y);
double envelope_lower(const Zonotope& y);

/// Global l2 Lipschitz bound: product of sqrt(||W||_1 ||W||_inf) over layers.
double lipschitz_spectral(const Mlp& net);
/// Product of certified spectral norms over layers (tighter than lipschitz_spectral).
double lipschitz_spectral_certified(const Mlp& net);
/// Global bound for V(x) = Q(x, pi(x)): L_Q sqrt(1 + L_pi^2) from certified norm products.
double lipschitz_value_spectral(const Mlp& actor, const Mlp& critic);

struct LocalLipschitz {
  double bound = 0.0;
  double factor_product = 0.0;   // product of certified norms of row-masked weights
  double vertex_bound = -1.0;    // max exact Jacobian norm over activation vertices; <0 if skipped
  NeuronStability stability;
};

/// Sound local Lipschitz bound over a region. Inactive rows are zeroed, tanh rows
/// scaled by their largest slope; the bound is the smaller of the factor product
/// and (when few neurons are undecided) the exact maximum Jacobian norm over all
/// activation patterns consistent with the region.
/// With a column block, the bound is on the Lipschitz constant in those inputs only
/// (the other inputs held fixed), still classified over the full region.
LocalLipschitz lipschitz_local_detail(const Mlp& net, const Zonotope& region, std::size_t max_vertices = 4096,
                                      Eigen::Index col_begin = 0, Eigen::Index col_count = -1);
double lipschitz_local(const Mlp& net, const Zonotope& region);

/// Local bounds for V(x) = Q(x, pi(x)) over a state region.
struct CompositeLipschitz {
  double l_pi = 0.0;
  double l_q = 0.0;   // critic in (x, u) jointly
  double l_qx = 0.0;  // critic in x with u fixed
  double l_qu = 0.0;  // critic in u with x fixed
  double l_v = 0.0;   // min(l_q sqrt(1 + l_pi^2), l_qx + l_qu l_pi)
  NeuronStability actor;
  NeuronStability critic;
};

CompositeLipschitz lipschitz_composite(const Mlp& actor, const Mlp& critic, const Zonotope& region);

struct PartitionedLipschitz {
  double l_pi = 0.0;
  double l_v = 0.0;
  std::size_t pieces = 0;  // leaf boxes after refinement
  std::size_t vertex_pieces = 0;  // pieces bounded by joint activation-vertex enumeration
  std::pair<std::size_t, std::size_t> max_unstable{0, 0};
};

/// Bounds over the interval hull of the region split into pieces_per_axis^n boxes.
/// Per box, ||dV/dx|| with dV/dx = Q_x + Q_u J_pi is maximized over all joint
/// activation vertices of actor and critic when there are at most max_vertices of
/// them. Other boxes are bisected up to refine_depth times, then fall back to
/// lipschitz_composite.
PartitionedLipschitz lipschitz_value_partitioned(const Mlp& actor, const Mlp& critic, const Zonotope& region,
                                                 int pieces_per_axis, std::size_t max_vertices = 4096,
                                                 int refine_depth = 4);

enum class LipschitzMethod { SpectralProduct, ZonotopeLocal };

struct LipschitzCertificate {
  Zonotope region;
  double l_pi = 0.0;
  double l_v = 0.0;
  LipschitzMethod method = LipschitzMethod::ZonotopeLocal;
  std::pair<std::size_t, std::size_t> unstable{0, 0};
};

std::pair<std::size_t, std::size_t> count_unstable(const NeuronStability& actor, const NeuronStability& critic);

/// Stack a state zonotope with an action enclosure that shares the state's
/// first p generator columns.
Zonotope stack_state_action(const Zonotope& state, const Zonotope& action);

}  // namespace zonocert
