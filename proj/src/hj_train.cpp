#include "zonocert/hj_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "zonocert/errors.hpp"
#include "zonocert/json_io.hpp"

namespace zonocert {

double reward(const PwaSystem& sys, const Vec& x) {
  const double d = (x - sys.target_center).norm();
  return d < sys.target_radius ? -(sys.target_radius - d) : 0.0;
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, Eigen::Index state_dim, Eigen::Index input_dim)
    : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  // Storage grows on demand so a 1e6 capacity does not allocate up front.
  x_.resize(state_dim, 0);
  u_.resize(input_dim, 0);
  x_next_.resize(state_dim, 0);
}

void ReplayBuffer::push(const Vec& x, const Vec& u, double r, const Vec& x_next) {
  if (x.size() != x_.rows() || u.size() != u_.rows() || x_next.size() != x_.rows())
    throw DimensionMismatch("replay push: transition shape");
  if (size_ < capacity_ && head_ == static_cast<std::size_t>(x_.cols())) {
    const Eigen::Index grow = std::min<Eigen::Index>(static_cast<Eigen::Index>(capacity_),
                                                     std::max<Eigen::Index>(1024, 2 * x_.cols()));
    x_.conservativeResize(Eigen::NoChange, grow);
    u_.conservativeResize(Eigen::NoChange, grow);
    x_next_.conservativeResize(Eigen::NoChange, grow);
    r_.conservativeResize(grow);
  }
  const auto c = static_cast<Eigen::Index>(head_);
  x_.col(c) = x;
  u_.col(c) = u;
  x_next_.col(c) = x_next;
  r_(c) = r;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, CounterRng& rng) const {
  if (batch > size_) throw std::invalid_argument("replay sample: batch larger than buffer");
  std::vector<std::size_t> out;
  out.reserve(batch);
  if (2 * batch > size_) {
    // Partial Fisher-Yates when the batch is a large share of the buffer.
    std::vector<std::size_t> all(size_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(size_ - i));
      std::swap(all[i], all[j]);
      out.push_back(all[i]);
    }
    return out;
  }
  std::unordered_set<std::size_t> seen;
  while (out.size() < batch) {
    const auto i = static_cast<std::size_t>(rng.below(size_));
    if (seen.insert(i).second) out.push_back(i);
  }
  return out;
}

void ReplayBuffer::gather(const std::vector<std::size_t>& idx, Mat& x, Mat& u, Vec& r, Mat& x_next) const {
  const auto b = static_cast<Eigen::Index>(idx.size());
  x.resize(x_.rows(), b);
  u.resize(u_.rows(), b);
  x_next.resize(x_.rows(), b);
  r.resize(b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const auto c = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]);
    x.col(k) = x_.col(c);
    u.col(k) = u_.col(c);
    x_next.col(k) = x_next_.col(c);
    r(k) = r_(c);
  }
}

Transition ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("replay index");
  const auto c = static_cast<Eigen::Index>(i);
  return {x_.col(c), u_.col(c), r_(c), x_next_.col(c)};
}

// ---------------------------------------------------------------------------
// Curriculum and configuration

double Curriculum::outer_at(long iteration) const {
  const long stages = interval > 0 ? iteration / interval : 0;
  return std::min(cap, outer_start + rate * cap * static_cast<double>(stages));
}

long HjConfig::default_iterations(Eigen::Index n) {
  if (n <= 2) return 100000;
  if (n <= 4) return 150000;
  return 500000;
}

HjConfig HjConfig::for_system(const PwaSystem& sys) {
  HjConfig c;
  c.iterations = default_iterations(sys.state_dim);
  return c;
}

HjConfig HjConfig::local_core(const PwaSystem& sys) {
  HjConfig c = for_system(sys);
  c.hidden = {64, 64};
  c.spectral_bound = 1.0;
  c.core_radius = 1.5 * sys.target_radius;
  c.inner_radius = 0.0;
  return c;
}

namespace {

double core_cap(const PwaSystem& sys, const HjConfig& cfg) {
  if (cfg.core_radius > 0.0) return cfg.core_radius;
  // Farthest domain corner from the target.
  const Vec far = (sys.domain_lower - sys.target_center).cwiseAbs().cwiseMax(
      (sys.domain_upper - sys.target_center).cwiseAbs());
  return far.norm();
}

bool inside_region(const PwaSystem& sys, const HjConfig& cfg, const Vec& x) {
  if (!sys.in_domain(x)) return false;
  return cfg.core_radius <= 0.0 || (x - sys.target_center).norm() <= cfg.core_radius;
}

}  // namespace

Vec sample_annulus(const PwaSystem& sys, double inner, double outer, CounterRng& rng) {
  const Eigen::Index n = sys.state_dim;
  const double dn = static_cast<double>(n);
  const double a = std::pow(inner, dn), b = std::pow(outer, dn);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Vec dir = rng.normal_vector(n);
    const double len = dir.norm();
    if (len == 0.0) continue;
    const double rad = std::pow(a + rng.uniform() * (b - a), 1.0 / dn);
    const Vec x = sys.target_center + (rad / len) * dir;
    if (sys.in_domain(x)) return x;
  }
  return sys.target_center;
}

// ---------------------------------------------------------------------------
// Model

HjModel HjModel::create(const PwaSystem& sys, const std::vector<Eigen::Index>& hidden, double gamma,
                        CounterRng& rng) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("discount must lie in [0, 1)");
  std::vector<Eigen::Index> aw{sys.state_dim}, cw{sys.state_dim + sys.input_dim};
  for (auto h : hidden) {
    aw.push_back(h);
    cw.push_back(h);
  }
  aw.push_back(sys.input_dim);
  cw.push_back(1);
  HjModel m;
  m.actor = Mlp::create(aw, Activation::ReLU, Activation::Tanh, rng);
  m.critic = Mlp::create(cw, Activation::ReLU, Activation::Identity, rng);
  m.target_actor = m.actor;
  m.target_critic = m.critic;
  m.gamma = gamma;
  m.action_center = sys.action_center();
  m.action_half_width = sys.action_half_width();
  return m;
}

Mlp HjModel::scaled_actor() const {
  auto layers = actor.layers();
  layers.push_back(Layer{Mat(action_half_width.asDiagonal()), action_center, Activation::Identity});
  return Mlp(std::move(layers));
}

namespace {

Mat scale_actions(const HjModel& m, const Mat& raw) {
  Mat u = m.action_half_width.asDiagonal() * raw;
  u.colwise() += m.action_center;
  return u;
}

Mat stack_rows(const Mat& top, const Mat& bottom) {
  Mat out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace

Vec HjModel::act(const Vec& x) const { return act_batch(x).col(0); }

Mat HjModel::act_batch(const Mat& x) const { return scale_actions(*this, actor.forward_batch(x)); }

double HjModel::value(const Vec& x) const { return value_batch(x)(0); }

Vec HjModel::value_batch(const Mat& x) const {
  return critic.forward_batch(stack_rows(x, act_batch(x))).row(0).transpose();
}

Mat HjModel::value_gradient_batch(const Mat& x) const {
  const Eigen::Index n = state_dim(), m = input_dim();
  const auto ca = forward_cached(actor, x);
  const Mat u = scale_actions(*this, ca.result());
  const auto cq = forward_cached(critic, stack_rows(x, u));
  const auto bq = backward(critic, cq, Mat::Ones(1, x.cols()));
  const Mat du = action_half_width.asDiagonal() * bq.input_grad.bottomRows(m);
  const auto ba = backward(actor, ca, du);
  return bq.input_grad.topRows(n) + ba.input_grad;
}

void HjModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_weights(actor, dir / "actor.json", "actor");
  save_weights(critic, dir / "critic.json", "critic");
  write_json_file(dir / "model.json", Json{{"gamma", gamma},
                                           {"action_center", to_json(action_center)},
                                           {"action_half_width", to_json(action_half_width)}});
}

HjModel HjModel::load(const std::filesystem::path& dir) {
  HjModel m;
  m.actor = load_weights(dir / "actor.json");
  m.critic = load_weights(dir / "critic.json");
  const Json meta = read_json_file(dir / "model.json");
  try {
    m.gamma = meta.at("gamma").get<double>();
    m.action_center = vector_from_json(meta.at("action_center"));
    m.action_half_width = vector_from_json(meta.at("action_half_width"));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed model.json: ") + e.what());
  }
  if (m.critic.input_dim() != m.actor.input_dim() + m.actor.output_dim() || m.critic.output_dim() != 1 ||
      m.action_center.size() != m.actor.output_dim() || m.action_half_width.size() != m.actor.output_dim())
    throw DimensionMismatch("actor, critic and action box do not fit together");
  m.target_actor = m.actor;
  m.target_critic = m.critic;
  return m;
}

// ---------------------------------------------------------------------------
// Training

HjResult train_hj(const PwaSystem& sys, const HjConfig& cfg, std::uint64_t seed,
                  const std::filesystem::path& checkpoint_dir) {
  sys.validate();
  if (cfg.batch == 0 || cfg.iterations < 0) throw std::invalid_argument("train_hj: bad batch or iteration count");
  CounterRng init_rng(seed, 1), env_rng(seed, 2), batch_rng(seed, 3);
  HjResult res;
  HjModel& m = res.model;
  m = HjModel::create(sys, cfg.hidden, cfg.gamma, init_rng);
  if (cfg.spectral_bound > 0.0) {
    project_spectral_inplace(m.actor, cfg.spectral_bound);
    project_spectral_inplace(m.critic, cfg.spectral_bound);
    m.target_actor = m.actor;
    m.target_critic = m.critic;
  }
  auto adam_a = AdamState::for_network(m.actor);
  auto adam_c = AdamState::for_network(m.critic);

  const Eigen::Index n = sys.state_dim, mu = sys.input_dim;
  ReplayBuffer replay(cfg.replay_capacity, n, mu);
  Curriculum cur;
  cur.cap = core_cap(sys, cfg);
  cur.inner = std::min(cur.cap, cfg.inner_radius >= 0.0 ? cfg.inner_radius : sys.target_radius);
  cur.outer_start = std::min(cur.cap, sys.target_radius + cfg.annulus_gap);
  cur.rate = cfg.curriculum_rate;
  cur.interval = cfg.curriculum_interval;

  const std::size_t start = std::max(cfg.warmup, cfg.batch);
  Vec x;
  int steps = 0;
  bool reset = true;
  double sum_c = 0.0, sum_a = 0.0;
  long updates = 0;
  Mat bx, bu, bxn;
  Vec br;

  auto checkpoint = [&] {
    if (!checkpoint_dir.empty()) m.save(checkpoint_dir / "checkpoint");
  };

  for (long it = 0; it < cfg.iterations; ++it) {
    const double outer = cur.outer_at(it);
    if (reset) {
      x = sample_annulus(sys, std::min(cur.inner, outer), outer, env_rng);
      if (cfg.core_radius > 0.0 && (x - sys.target_center).norm() > cfg.core_radius) x = sys.target_center;
      steps = 0;
      reset = false;
    }
    Vec u;
    if (replay.size() < cfg.warmup) {
      u = env_rng.uniform_vector(mu, 0.0, 1.0);
      u = sys.action_lower + (sys.action_upper - sys.action_lower).cwiseProduct(u);
    } else {
      u = m.act(x) + cfg.sigma_expl * sys.action_half_width().cwiseProduct(env_rng.normal_vector(mu));
      u = sys.clip_action(u);
    }
    const Vec w = env_rng.uniform_vector(n, -sys.sigma_w, sys.sigma_w);
    const Vec xn = step_point(sys, x, u, w);
    const double r = reward(sys, xn);
    replay.push(x, u, r, xn);
    ++steps;
    x = xn;
    if (steps >= cfg.episode_length || r < -0.9 * sys.target_radius || !inside_region(sys, cfg, x)) reset = true;

    if (replay.size() >= start) {
      replay.gather(replay.sample_indices(cfg.batch, batch_rng), bx, bu, br, bxn);
      const double inv_b = 1.0 / static_cast<double>(cfg.batch);

      // Critic: squared Bellman error against the target networks.
      const Mat un = m.action_half_width.asDiagonal() * m.target_actor.forward_batch(bxn);
      Mat unc = un;
      unc.colwise() += m.action_center;
      const Vec q_next = m.target_critic.forward_batch(stack_rows(bxn, unc)).row(0).transpose();
      const Vec y = br + m.gamma * q_next;
      const auto cq = forward_cached(m.critic, stack_rows(bx, bu));
      const Vec diff = cq.result().row(0).transpose() - y;
      const auto gc = backward(m.critic, cq, (2.0 * inv_b) * diff.transpose());

      // Actor: minimize Q(x, pi(x)).
      const auto ca = forward_cached(m.actor, bx);
      const auto cqa = forward_cached(m.critic, stack_rows(bx, scale_actions(m, ca.result())));
      const auto gq = backward(m.critic, cqa, Mat::Constant(1, bx.cols(), inv_b));
      const Mat du = m.action_half_width.asDiagonal() * gq.input_grad.bottomRows(mu);
      auto ga = backward(m.actor, ca, du);
      if (cfg.preactivation_penalty > 0.0) {
        // Pull the tanh pre-activations back toward the linear range.
        const auto& last = m.actor.layers().back();
        Mat z = last.w * ca.inputs.back();
        z.colwise() += last.b;
        Mlp linear = m.actor;
        linear.mutable_layers().back().activation = Activation::Identity;
        ga.params += backward(linear, ca, (2.0 * cfg.preactivation_penalty * inv_b) * z).params;
      }

      try {
        adam_step(m.critic, gc.params, adam_c, cfg.lr_critic);
        adam_step(m.actor, ga.params, adam_a, cfg.lr_actor);
      } catch (const NonFiniteGradient&) {
        checkpoint();
        throw;
      }
      if (cfg.spectral_bound > 0.0) {
        project_spectral_inplace(m.critic, cfg.spectral_bound);
        project_spectral_inplace(m.actor, cfg.spectral_bound);
      }
      polyak_update_inplace(m.target_critic, m.critic, cfg.tau);
      polyak_update_inplace(m.target_actor, m.actor, cfg.tau);
      sum_c += diff.squaredNorm() * inv_b;
      sum_a += cqa.result().sum() * inv_b;
      ++updates;
    }

    if (cfg.log_interval > 0 && (it + 1) % cfg.log_interval == 0) {
      HjLogRow row;
      row.iteration = it + 1;
      row.critic_loss = updates ? sum_c / static_cast<double>(updates) : 0.0;
      row.actor_loss = updates ? sum_a / static_cast<double>(updates) : 0.0;
      row.curriculum_outer = outer;
      row.probe_v = m.value(sys.target_center);
      res.log.push_back(row);
      sum_c = sum_a = 0.0;
      updates = 0;
    }
  }
  if (!m.actor.all_finite() || !m.critic.all_finite()) {
    checkpoint();
    throw NonFiniteGradient("train_hj: parameters became non-finite");
  }
  return res;
}

void write_hj_log(const std::filesystem::path& path, const std::vector<HjLogRow>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(10);
  out << "iteration,criticLoss,actorLoss,curriculumOuter,probeV\n";
  for (const auto& r : log)
    out << r.iteration << ',' << r.critic_loss << ',' << r.actor_loss << ',' << r.curriculum_outer << ','
        << r.probe_v << '\n';
}

}  // namespace zonocert
