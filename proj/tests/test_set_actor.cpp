#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "zonocert/errors.hpp"
#include "zonocert/set_actor.hpp"

using namespace zonocert;
using namespace zonocert::testing;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

const PwaSystem& four_quad() {
  static const PwaSystem sys = make_benchmark(Benchmark::FourQuad);
  return sys;
}

/// One desk-scale HJ model shared by the tests that need a trained value.
const HjModel& trained_model() {
  static const HjModel model = [] {
    HjConfig c;
    c.iterations = 10000;
    c.hidden = {64, 64};
    c.batch = 128;
    c.warmup = 2000;
    c.curriculum_interval = 2500;
    return train_hj(four_quad(), c, 3).model;
  }();
  return model;
}

ZonotopeFamily three_fragments() {
  Mat g2(2, 2), g1(2, 1);
  g2 << 0.2, -0.1, 0.05, 0.3;
  g1 << 0.1, 0.1;
  ZonotopeFamily fam;
  fam.fragments.emplace_back(v2(-1, -1), g2);
  fam.fragments.emplace_back(v2(0.5, 1.5));
  fam.fragments.emplace_back(v2(1.2, -0.3), g1);
  return fam;
}

double pairing(const SetActor& a, const TokenSet& t, const Vec& up) { return up.dot(a.act_tokens(t)); }

}  // namespace

TEST_CASE("tokenize: token count and flags") {
  const auto single = tokenize(ZonotopeFamily(Zonotope(v2(1, 2))));
  REQUIRE(single.size() == 1);
  CHECK(single.tokens.col(0) == Vec((Vec(3) << 1, 2, 1).finished()));

  Mat g(2, 2);
  g << 0.1, 0.2, 0.3, 0.4;
  const auto two = tokenize(ZonotopeFamily(Zonotope(v2(0, 0), g)));
  REQUIRE(two.size() == 3);
  CHECK(two.tokens.row(2) == Eigen::RowVector3d(1, 0, 0));
  CHECK(two.tokens.col(2).head(2) == g.col(1));

  const auto three = tokenize(three_fragments());
  CHECK(three.size() == 6);
  CHECK(three.mask_length == 6);
  CHECK(three.tokens.row(2).sum() == 3.0);
  CHECK_THROWS(tokenize(ZonotopeFamily()));
}

TEST_CASE("act_on_set is invariant to token order, duplication and padding") {
  CounterRng rng(1);
  const auto a = SetActor::create(four_quad(), rng);
  CHECK(a.encoder.output_dim() == SetActor::kEmbedding);
  const auto fam = three_fragments();
  const Vec u = a.act(fam);
  CHECK(four_quad().action_admissible(u));

  for (int trial = 0; trial < 20; ++trial) {
    ZonotopeFamily shuffled;
    std::vector<std::size_t> order{0, 1, 2};
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (auto i : order) {
      const auto& z = fam.fragments[i];
      Mat g = z.generators();
      if (g.cols() == 2 && rng.uniform() < 0.5) g.col(0).swap(g.col(1));
      shuffled.fragments.emplace_back(z.center(), g);
    }
    CHECK((a.act(shuffled) - u).norm() < 1e-12);
  }

  ZonotopeFamily dup = fam;
  dup.fragments.push_back(fam.fragments[0]);
  CHECK(a.act(dup) == u);

  auto padded = pad_token_sets({tokenize(fam), tokenize(dup), tokenize(ZonotopeFamily(Zonotope(v2(0, 0))))});
  CHECK(padded[0].size() == padded[1].size());
  CHECK(padded[2].mask_length == 1);
  CHECK((a.act_tokens(padded[0]) - u).norm() < 1e-12);
  CHECK(a.act_tokens(padded[2]) == a.act(ZonotopeFamily(Zonotope(v2(0, 0)))));
}

TEST_CASE("max-pool ties resolve to the lowest token index") {
  CounterRng rng(2);
  const auto a = SetActor::create(four_quad(), rng);
  ZonotopeFamily fam(Zonotope(v2(0.3, 0.4)));
  fam.fragments.push_back(fam.fragments[0]);
  std::vector<Eigen::Index> arg;
  a.pool(tokenize(fam), &arg);
  CHECK(std::all_of(arg.begin(), arg.end(), [](Eigen::Index i) { return i == 0; }));
}

TEST_CASE("set actor backward matches finite differences away from ties") {
  CounterRng rng(3);
  const auto a = SetActor::create(four_quad(), rng);
  std::vector<TokenSet> sets{tokenize(three_fragments()),
                             tokenize(ZonotopeFamily(Zonotope(v2(-2, 1), 0.3 * Mat::Identity(2, 2))))};
  Mat up(2, 2);
  up << 0.7, -0.4, 1.3, 0.2;
  const auto g = a.backward(sets, up);
  const double h = 1e-6;
  int compared = 0;
  for (int trial = 0; trial < 200 && compared < 40; ++trial) {
    const bool enc = trial % 2 == 0;
    SetActor p = a, q = a;
    auto& lp = (enc ? p.encoder : p.decoder).mutable_layers();
    auto& lq = (enc ? q.encoder : q.decoder).mutable_layers();
    const auto k = static_cast<std::size_t>(rng.below(lp.size()));
    const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(lp[k].w.rows())));
    const auto c = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(lp[k].w.cols())));
    lp[k].w(r, c) += h;
    lq[k].w(r, c) -= h;
    double plus = 0.0, minus = 0.0, mid = 0.0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
      plus += pairing(p, sets[s], up.col(static_cast<Eigen::Index>(s)));
      minus += pairing(q, sets[s], up.col(static_cast<Eigen::Index>(s)));
      mid += pairing(a, sets[s], up.col(static_cast<Eigen::Index>(s)));
    }
    // Skip parameters whose perturbation crosses a kink or a pooling tie.
    if (std::abs((plus - mid) - (mid - minus)) > 1e-9 * std::max(1.0, std::abs(plus - mid))) continue;
    const double fd = (plus - minus) / (2 * h);
    const double an = (enc ? g.encoder : g.decoder).w[k](r, c);
    CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
    ++compared;
  }
  CHECK(compared >= 30);
}

TEST_CASE("top-30% aggregator") {
  std::vector<double> r{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(top_positive_mean(r, 0.3) == doctest::Approx(9.0));
  CHECK(top_positive_indices(r, 0.3) == std::vector<std::size_t>{9, 8, 7});
  CHECK(top_positive_mean({-1, -2, 0}, 0.3) == 0.0);
  CHECK(top_positive_indices({-1, -2, 0}, 0.3).empty());
  CHECK(top_positive_mean({-1, 2, 4}, 0.3) == doctest::Approx(3.0));

  CounterRng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng.below(60));
    for (auto& x : v) x = rng.uniform(-1, 1);
    std::vector<double> pos;
    for (double x : v)
      if (x > 0) pos.push_back(x);
    std::sort(pos.rbegin(), pos.rend());
    if (pos.size() >= 4) pos.resize(static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(pos.size()) - 1e-9)));
    double expect = 0.0;
    for (double x : pos) expect += x / static_cast<double>(pos.size());
    CHECK(top_positive_mean(v, 0.3) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("regret is zero for the oracle action and rejects inadmissible actions") {
  CounterRng rng(5);
  const auto model = HjModel::create(four_quad(), {16, 16}, 0.95, rng);
  for (int s = 0; s < 100; ++s) {
    const Vec p = rng.uniform_vector(2, -3, 3);
    CHECK(regret(model, four_quad(), p, model.act(p)) == 0.0);
  }
  CHECK_THROWS(regret(model, four_quad(), v2(0, 0), v2(3, 0)));
}

TEST_CASE("oracle actions are no worse than random actions on a trained value") {
  const auto& model = trained_model();
  CounterRng rng(6);
  double mean = 0.0;
  const int count = 500;
  for (int s = 0; s < count; ++s) {
    const Vec p = sample_annulus(four_quad(), 0.5, 3.0, rng);
    mean += regret(model, four_quad(), p, rng.uniform_vector(2, -1, 1)) / count;
  }
  CHECK(mean >= 0.0);
}

TEST_CASE("distillation reduces the loss and is deterministic") {
  const auto& model = trained_model();
  DistillConfig c;
  c.iterations = 200;
  c.batch_zonotopes = 24;
  const auto res = distill(model, four_quad(), c, 7);
  REQUIRE(res.log.size() == 200);
  CHECK(res.log.back().loss < res.log.front().loss);
  for (const auto& row : res.log) CHECK(row.loss >= 0.0);
  CHECK(res.log.front().lr == doctest::Approx(c.lr_start));
  CHECK(res.log.back().lr == doctest::Approx(c.lr_end));

  DistillConfig small = c;
  small.iterations = 3;
  small.batch_zonotopes = 4;
  const auto x = distill(model, four_quad(), small, 9);
  const auto y = distill(model, four_quad(), small, 9);
  CHECK(x.actor.decoder.layers()[0].w == y.actor.decoder.layers()[0].w);
  CHECK(x.log.back().loss == y.log.back().loss);

  const auto path = std::filesystem::temp_directory_path() / "zonocert_distill.csv";
  write_distill_log(path, x.log);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,loss,maxRegret,lr");
  std::filesystem::remove(path);
}

TEST_CASE("training families") {
  DistillConfig c;
  CounterRng rng(8);
  for (int s = 0; s < 200; ++s) {
    const auto one = sample_training_family(four_quad(), c, false, rng);
    REQUIRE(one.size() == 1);
    CHECK(one.fragments[0].order() >= 2);
    CHECK(one.fragments[0].order() <= 10);
    CHECK(four_quad().in_domain(one.fragments[0].center()));
    const auto many = sample_training_family(four_quad(), c, true, rng);
    CHECK(many.size() >= 2);
    CHECK(many.size() <= 4);
    for (const auto& z : many.fragments)
      CHECK(z.generators().colwise().norm().maxCoeff() <= c.cluster_scale * c.generator_scale_max + 1e-12);
  }
}

TEST_CASE("set actor save/load round trip and role check") {
  CounterRng rng(10);
  const auto a = SetActor::create(four_quad(), rng);
  const auto dir = std::filesystem::temp_directory_path() / "zonocert_set_actor";
  a.save(dir / "set_actor.json");
  const auto b = SetActor::load(dir / "set_actor.json");
  CHECK(b.act(three_fragments()) == a.act(three_fragments()));
  save_weights(a.decoder, dir / "plain.json", "actor");
  CHECK_THROWS_AS(SetActor::load(dir / "plain.json"), FormatError);
  CHECK_THROWS_AS(SetActor::load(dir / "missing.json"), FormatError);
  std::filesystem::remove_all(dir);
}
