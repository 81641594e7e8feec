#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "zonocert/hj_train.hpp"

using namespace zonocert;
using namespace zonocert::testing;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

HjConfig desk_config(long iterations) {
  HjConfig c;
  c.iterations = iterations;
  c.hidden = {64, 64};
  c.batch = 128;
  c.warmup = 2000;
  c.curriculum_interval = 5000;
  c.log_interval = 1000;
  return c;
}

/// Upper chi-square quantile by the Wilson-Hilferty approximation.
double chi2_quantile(double dof, double z) {
  const double a = 2.0 / (9.0 * dof);
  return dof * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

}  // namespace

TEST_CASE("reward: travel cost inside the target, zero outside") {
  const auto sys = make_benchmark(Benchmark::FourQuad);
  CHECK(reward(sys, v2(2, 2)) == doctest::Approx(-0.5));
  CHECK(reward(sys, v2(2.2, 2)) == doctest::Approx(-0.3));
  CHECK(reward(sys, v2(2.5, 2)) == 0.0);
  CHECK(reward(sys, v2(-1, -1)) == 0.0);
  CounterRng rng(1);
  for (int s = 0; s < 1000; ++s) {
    const Vec x = rng.uniform_vector(2, -3, 3);
    const double d = (x - sys.target_center).norm();
    CHECK(reward(sys, x) == doctest::Approx(std::min(0.0, d - 0.5)));
  }
}

TEST_CASE("replay buffer wraps around and samples without replacement") {
  ReplayBuffer buf(3, 1, 1);
  for (int i = 0; i < 5; ++i) buf.push(Vec::Constant(1, i), Vec::Zero(1), -i, Vec::Constant(1, i + 1));
  CHECK(buf.size() == 3);
  CHECK(buf.capacity() == 3);
  // Slots 0 and 1 were overwritten by transitions 3 and 4.
  CHECK(buf.at(0).x(0) == 3.0);
  CHECK(buf.at(1).x(0) == 4.0);
  CHECK(buf.at(2).x(0) == 2.0);
  CHECK(buf.at(1).r == -4.0);
  CHECK_THROWS(buf.at(3));
  CounterRng rng(2);
  auto idx = buf.sample_indices(3, rng);
  std::sort(idx.begin(), idx.end());
  CHECK(idx == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS(buf.sample_indices(4, rng));
  CHECK_THROWS(ReplayBuffer(0, 1, 1));
  CHECK_THROWS(buf.push(Vec::Zero(2), Vec::Zero(1), 0.0, Vec::Zero(1)));
}

TEST_CASE("replay sampling is uniform") {
  const std::size_t cells = 100;
  ReplayBuffer buf(cells, 1, 1);
  for (std::size_t i = 0; i < cells; ++i) buf.push(Vec::Zero(1), Vec::Zero(1), 0.0, Vec::Zero(1));
  for (std::size_t batch : {std::size_t{10}, std::size_t{80}}) {
    CounterRng rng(3 + batch);
    std::vector<double> counts(cells, 0.0);
    std::size_t draws = 0;
    while (draws < 100000) {
      for (auto i : buf.sample_indices(batch, rng)) counts[i] += 1.0;
      draws += batch;
    }
    const double expect = static_cast<double>(draws) / static_cast<double>(cells);
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
    // Sampling without replacement within a batch only lowers the variance.
    CHECK(chi2 < chi2_quantile(static_cast<double>(cells - 1), 2.326));
  }
}

TEST_CASE("curriculum schedule and annulus sampling") {
  Curriculum c{0.5, 0.7, 5.0, 0.1, 100};
  CHECK(c.outer_at(0) == doctest::Approx(0.7));
  CHECK(c.outer_at(99) == doctest::Approx(0.7));
  CHECK(c.outer_at(100) == doctest::Approx(1.2));
  CHECK(c.outer_at(350) == doctest::Approx(2.2));
  CHECK(c.outer_at(100000) == doctest::Approx(5.0));

  const auto sys = make_benchmark(Benchmark::FourQuad);
  CounterRng rng(4);
  for (int s = 0; s < 2000; ++s) {
    const Vec x = sample_annulus(sys, 0.5, 1.5, rng);
    const double d = (x - sys.target_center).norm();
    CHECK(d >= 0.5 - 1e-12);
    CHECK(d <= 1.5 + 1e-12);
    CHECK(sys.in_domain(x));
  }
}

TEST_CASE("model scaling, save/load and value gradient") {
  const auto sys = make_benchmark(Benchmark::FourQuad);
  CounterRng rng(5);
  const auto m = HjModel::create(sys, {16, 16}, 0.95, rng);
  CHECK_THROWS(HjModel::create(sys, {16}, 1.0, rng));
  const Mlp scaled = m.scaled_actor();
  for (int s = 0; s < 50; ++s) {
    const Vec x = rng.uniform_vector(2, -3, 3);
    const Vec u = m.act(x);
    CHECK((scaled.forward(x) - u).norm() < 1e-12);
    CHECK(sys.clip_action(u) == u);
    Vec xu(4);
    xu << x, u;
    CHECK(m.value(x) == doctest::Approx(interpret(m.critic, xu)(0)));
  }

  const auto dir = std::filesystem::temp_directory_path() / "zonocert_hj_model";
  m.save(dir);
  const auto back = HjModel::load(dir);
  CHECK(back.gamma == m.gamma);
  CHECK(back.actor.same_shape(m.actor));
  const Vec x = v2(0.3, -1.2);
  CHECK(back.value(x) == m.value(x));
  std::filesystem::remove_all(dir);

  // Finite differences of V*(x) = Q(x, pi(x)) away from kinks.
  const double h = 1e-6;
  int compared = 0;
  for (int s = 0; s < 40 && compared < 15; ++s) {
    const Vec p = rng.uniform_vector(2, -3, 3);
    Vec xu(4);
    xu << p, m.act(p);
    if (kink_margin(m.actor, p) < 1e-3 || kink_margin(m.critic, xu) < 1e-3) continue;
    const Vec g = m.value_gradient_batch(p).col(0);
    for (int i = 0; i < 2; ++i) {
      Vec e = Vec::Zero(2);
      e(i) = h;
      const double fd = (m.value(p + e) - m.value(p - e)) / (2 * h);
      CHECK(std::abs(fd - g(i)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
    ++compared;
  }
  CHECK(compared >= 10);
}

TEST_CASE("Polyak rate one half averages online and target weights") {
  CounterRng rng(6);
  const Mlp a = Mlp::create({3, 5, 1}, Activation::ReLU, Activation::Identity, rng);
  const Mlp b = Mlp::create({3, 5, 1}, Activation::ReLU, Activation::Identity, rng);
  const Mlp mid = polyak_update(a, b, 0.5);
  for (std::size_t k = 0; k < a.layers().size(); ++k)
    CHECK((mid.layers()[k].w - 0.5 * (a.layers()[k].w + b.layers()[k].w)).norm() < 1e-15);
}

TEST_CASE("training is deterministic per seed") {
  const auto sys = make_benchmark(Benchmark::FourQuad);
  HjConfig cfg = desk_config(600);
  cfg.hidden = {16, 16};
  cfg.batch = 32;
  cfg.warmup = 300;
  cfg.log_interval = 200;
  const auto a = train_hj(sys, cfg, 11);
  const auto b = train_hj(sys, cfg, 11);
  const auto c = train_hj(sys, cfg, 12);
  REQUIRE(a.log.size() == 3);
  for (std::size_t k = 0; k < a.model.critic.layers().size(); ++k) {
    CHECK(a.model.critic.layers()[k].w == b.model.critic.layers()[k].w);
    CHECK(a.model.actor.layers()[k].w == b.model.actor.layers()[k].w);
  }
  CHECK(a.log.back().probe_v == b.log.back().probe_v);
  CHECK(a.model.critic.layers()[0].w != c.model.critic.layers()[0].w);

  const auto path = std::filesystem::temp_directory_path() / "zonocert_hj_log.csv";
  write_hj_log(path, a.log);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,criticLoss,actorLoss,curriculumOuter,probeV");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == a.log.size());
  std::filesystem::remove(path);
}

TEST_CASE("discount zero: critic fits the immediate reward") {
  const auto sys = make_benchmark(Benchmark::FourQuad);
  HjConfig cfg = desk_config(8000);
  cfg.gamma = 0.0;
  cfg.batch = 256;
  cfg.curriculum_interval = 0;
  const auto res = train_hj(sys, cfg, 21);
  // Held-out transitions from fresh episodes run like the training episodes.
  CounterRng rng(99);
  const double inner = sys.target_radius, outer = inner + cfg.annulus_gap;
  double mse = 0.0;
  const int count = 2000;
  Vec x;
  int steps = cfg.episode_length;
  for (int s = 0; s < count; ++s) {
    if (steps >= cfg.episode_length) {
      x = sample_annulus(sys, inner, outer, rng);
      steps = 0;
    }
    const Vec u = sys.clip_action(res.model.act(x) + cfg.sigma_expl * rng.normal_vector(2));
    const Vec xn = step_point(sys, x, u, rng.uniform_vector(2, -sys.sigma_w, sys.sigma_w));
    Vec xu(4);
    xu << x, u;
    const double r = reward(sys, xn);
    const double e = res.model.critic.forward(xu)(0) - r;
    mse += e * e / count;
    x = xn;
    ++steps;
    if (r < -0.9 * sys.target_radius || !sys.in_domain(x)) steps = cfg.episode_length;
  }
  CHECK(mse < 1e-3);
}

TEST_CASE("trained 4Quad value has a basin at the target and decreases along rollouts") {
  const auto sys = make_benchmark(Benchmark::FourQuad);
  const auto res = train_hj(sys, desk_config(20000), 1);
  const auto& m = res.model;
  const double v_target = m.value(sys.target_center);
  CHECK(v_target < -5.0);
  CHECK(res.log.back().probe_v == doctest::Approx(v_target));
  for (const Vec& far : {v2(-2.5, -2.5), v2(-2.5, 2.5), v2(2.5, -2.5)}) CHECK(m.value(far) > v_target);

  CounterRng rng(8);
  const double outer = 2.7;
  long descending = 0, steps = 0;
  for (int e = 0; e < 50; ++e) {
    Vec x = sample_annulus(sys, sys.target_radius, outer, rng);
    for (int k = 0; k < 30 && (x - sys.target_center).norm() >= sys.target_radius && sys.in_domain(x); ++k) {
      const Vec xn = step_point(sys, x, m.act(x), rng.uniform_vector(2, -sys.sigma_w, sys.sigma_w));
      descending += m.value(xn) <= m.value(x);
      ++steps;
      x = xn;
    }
  }
  REQUIRE(steps > 0);
  CHECK(static_cast<double>(descending) >= 0.9 * static_cast<double>(steps));
}
