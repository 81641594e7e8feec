#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>

#include "oracles.hpp"
#include "zonocert/errors.hpp"
#include "zonocert/json_io.hpp"
#include "zonocert/pwa.hpp"

using namespace zonocert;
using namespace zonocert::testing;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

/// Sector index of a point by its polar angle (sector i spans [i pi/4, (i+1) pi/4)).
std::size_t sector_by_angle(const Vec& x) {
  double phi = std::atan2(x(1), x(0));
  if (phi < 0) phi += 2 * std::numbers::pi;
  return static_cast<std::size_t>(std::floor(phi / (std::numbers::pi / 4)));
}

double two_norm(const Mat& a) { return Eigen::JacobiSVD<Mat>(a).singularValues()(0); }

}  // namespace

TEST_CASE("benchmarks validate and partition their domains") {
  for (auto b : {Benchmark::FourQuad, Benchmark::EightSec, Benchmark::CoupledOsc, Benchmark::TripleOsc}) {
    const auto sys = make_benchmark(b);
    CHECK_NOTHROW(sys.validate());
    const auto pc = check_partition(sys, 20000, 3);
    CHECK(pc.uncovered == 0);
    CHECK(pc.interior_overlap == 0);
    CHECK(parse_benchmark(to_string(b)) == b);
  }
  CHECK_THROWS(make_benchmark("NineSec"));
}

TEST_CASE("benchmark norms match the reported bands") {
  for (auto b : {Benchmark::FourQuad, Benchmark::EightSec}) {
    const auto sys = make_benchmark(b);
    for (const auto& m : sys.modes) CHECK(std::abs(two_norm(m.a) - 0.79) <= 0.005);
  }
  const auto four = make_benchmark(Benchmark::FourQuad);
  Mat base(2, 2);
  base << 0.75, 0.25, -0.25, 0.75;
  CHECK(four.modes[0].a == base);
  CHECK(four.modes[2].a == base);
  CHECK(four.modes[1].a == base.transpose());
  CHECK(four.modes[3].a == base.transpose());

  for (auto b : {Benchmark::CoupledOsc, Benchmark::TripleOsc}) {
    const auto sys = make_benchmark(b);
    for (const auto& m : sys.modes) {
      CHECK(two_norm(m.a) >= 1.1);
      CHECK(two_norm(m.a) <= 1.4);
      CHECK(spectral_radius(m.a) < 1.0);
    }
  }
  const auto osc = make_benchmark(Benchmark::CoupledOsc);
  CHECK(two_norm(osc.modes[0].b) == doctest::Approx(0.006).epsilon(1e-9));
}

TEST_CASE("mode_of on 4Quad and 8Sec") {
  const auto four = make_benchmark(Benchmark::FourQuad);
  CHECK(mode_of(four, v2(1, 1)) == 0);
  CHECK(mode_of(four, v2(-1, 1)) == 1);
  CHECK(mode_of(four, v2(-1, -1)) == 2);
  CHECK(mode_of(four, v2(1, -1)) == 3);
  CHECK(mode_of(four, v2(0, 0)) == 0);

  const auto eight = make_benchmark(Benchmark::EightSec);
  CHECK(mode_of(eight, v2(1, 0.1)) == sector_by_angle(v2(1, 0.1)));
  CounterRng rng(2);
  for (int s = 0; s < 2000; ++s) {
    const Vec x = rng.uniform_vector(2, -3, 3);
    CHECK(mode_of(eight, x) == sector_by_angle(x));
  }
}

TEST_CASE("mode_of throws when no region contains the point") {
  auto sys = make_benchmark(Benchmark::FourQuad);
  sys.modes.resize(1);
  CHECK_THROWS_AS(mode_of(sys, v2(-1, -1)), NoMode);
}

TEST_CASE("step_point examples") {
  for (auto b : {Benchmark::FourQuad, Benchmark::EightSec, Benchmark::CoupledOsc, Benchmark::TripleOsc}) {
    const auto sys = make_benchmark(b);
    const Vec z = Vec::Zero(sys.state_dim);
    CHECK(step_point(sys, z, Vec::Zero(sys.input_dim), z).norm() == 0.0);
  }
  const auto four = make_benchmark(Benchmark::FourQuad);
  const Vec y = step_point(four, v2(2, 2), Vec::Zero(2), Vec::Zero(2));
  CHECK(y(0) == doctest::Approx(2.0));
  CHECK(y(1) == doctest::Approx(1.0));
  CounterRng rng(4);
  for (int s = 0; s < 100; ++s) {
    const Vec x = rng.uniform_vector(2, -3, 3);
    const Vec u = rng.uniform_vector(2, -1, 1);
    const Vec d = nominal_step(four, x, u) - nominal_step(four, x, Vec::Zero(2));
    CHECK((d - u).norm() < 1e-12);
  }
}

TEST_CASE("step_family: interior fragment produces one exact child") {
  auto sys = make_benchmark(Benchmark::FourQuad);
  sys.sigma_w = 0.0;
  const Zonotope z(v2(2, 2), 0.5 * Mat::Identity(2, 2));
  const Vec u = v2(0.1, -0.2);
  const auto st = step_family(sys, ZonotopeFamily(z), u, StepBudgets{});
  REQUIRE(st.family.size() == 1);
  CHECK(st.family.step == 1);
  const auto& child = st.family.fragments[0];
  CHECK((child.center() - (sys.modes[0].a * z.center() + u)).norm() < 1e-12);
  CounterRng rng(5);
  for (const auto& x : probe_points(z, rng, 2000)) CHECK(contains(child, nominal_step(sys, x, u)));
}

TEST_CASE("step_family: 4Quad box around the origin splits into four quadrants") {
  const auto sys = make_benchmark(Benchmark::FourQuad);
  const Zonotope z(Vec::Zero(2), 0.5 * Mat::Identity(2, 2));
  const auto st = step_family(sys, ZonotopeFamily(z), Vec::Zero(2), StepBudgets{});
  // Sign-pattern oracle: every quadrant meets the box interior.
  std::size_t patterns = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1}) {
      const bool hx = sx > 0 ? z.hull_upper()(0) > 0 : z.hull_lower()(0) < 0;
      const bool hy = sy > 0 ? z.hull_upper()(1) > 0 : z.hull_lower()(1) < 0;
      patterns += hx && hy;
    }
  CHECK(st.family.size() == patterns);
  CHECK(st.eta_step >= sys.sigma_w * 2 - 1e-15);
}

TEST_CASE("step_family rejects inadmissible actions and empty output") {
  const auto sys = make_benchmark(Benchmark::FourQuad);
  const ZonotopeFamily fam(Zonotope(v2(1, 1), 0.1 * Mat::Identity(2, 2)));
  CHECK_THROWS(step_family(sys, fam, v2(2, 0), StepBudgets{}));
  const ZonotopeFamily outside(Zonotope(v2(9, 9), 0.1 * Mat::Identity(2, 2)));
  auto one = sys;
  one.modes.resize(1);
  one.modes[0].region.halfspaces.push_back(Halfspace(v2(1, 0), 5.0));
  CHECK_THROWS_AS(step_family(one, outside, Vec::Zero(2), StepBudgets{}), EmptyReachSet);
}

TEST_CASE("step_family splitting soundness over several steps") {
  for (auto b : {Benchmark::FourQuad, Benchmark::EightSec, Benchmark::CoupledOsc}) {
    const auto sys = make_benchmark(b);
    const Eigen::Index n = sys.state_dim;
    CounterRng rng(17 + static_cast<std::uint64_t>(b));
    ZonotopeFamily fam(Zonotope(Vec::Zero(n), 0.4 * Mat::Identity(n, n)));
    // Carry sampled trajectories along with the family.
    std::vector<Vec> pts = probe_points(fam.fragments[0], rng, 2000);
    double dropped_prev = 0.0;
    for (int k = 0; k < 4; ++k) {
      const Vec u = rng.uniform_vector(sys.input_dim, -1, 1);
      const auto st = step_family(sys, fam, u, StepBudgets{});
      CHECK(st.family.size() <= fam.size() * sys.modes.size());
      CHECK(st.eta_step >= sys.sigma_w * static_cast<double>(n) - 1e-15);
      CHECK(st.family.dropped_volume_fraction >= dropped_prev);
      dropped_prev = st.family.dropped_volume_fraction;
      for (auto& x : pts) x = step_point(sys, x, u, rng.uniform_vector(n, -sys.sigma_w, sys.sigma_w));
      if (st.family.dropped_volume_fraction == 0.0)
        for (const auto& x : pts) REQUIRE(st.family.contains(x));
      fam = st.family;
    }
  }
}

TEST_CASE("step_family output is independent of the worker count") {
  const auto sys = make_benchmark(Benchmark::EightSec);
  ZonotopeFamily fam(Zonotope(v2(0.1, -0.05), 0.6 * Mat::Identity(2, 2)));
  fam = step_family(sys, fam, v2(0.2, 0.1), StepBudgets{}).family;
  setenv("ZONOCERT_THREADS", "1", 1);
  const auto serial = step_family(sys, fam, Vec::Zero(2), StepBudgets{});
  setenv("ZONOCERT_THREADS", "4", 1);
  const auto threaded = step_family(sys, fam, Vec::Zero(2), StepBudgets{});
  unsetenv("ZONOCERT_THREADS");
  REQUIRE(serial.family.size() == threaded.family.size());
  for (std::size_t i = 0; i < serial.family.size(); ++i) {
    CHECK(serial.family.fragments[i].center() == threaded.family.fragments[i].center());
    CHECK(serial.family.fragments[i].generators() == threaded.family.fragments[i].generators());
  }
  CHECK(serial.eta_step == threaded.eta_step);
}

TEST_CASE("fragment budget keeps the largest fragments and records the loss") {
  const auto sys = make_benchmark(Benchmark::EightSec);
  const ZonotopeFamily fam(Zonotope(v2(0.05, 0.02), 0.8 * Mat::Identity(2, 2)));
  const auto full = step_family(sys, fam, Vec::Zero(2), StepBudgets{});
  REQUIRE(full.family.size() == 8);
  const auto cut = step_family(sys, fam, Vec::Zero(2), StepBudgets{3, 40});
  CHECK(cut.family.size() == 3);
  CHECK(cut.budget_hit);
  CHECK(cut.dropped_fragments == 5);
  CHECK(cut.family.dropped_volume_fraction > 0.0);
  CHECK(cut.family.dropped_volume_fraction < 1.0);
  double kept_min = 1e300, dropped_max = 0.0;
  for (const auto& f : full.family.fragments) {
    bool kept = false;
    for (const auto& g : cut.family.fragments) kept |= (g.center() == f.center());
    (kept ? kept_min : dropped_max) = kept ? std::min(kept_min, f.hull_volume()) : std::max(dropped_max, f.hull_volume());
  }
  CHECK(kept_min >= dropped_max);
}

TEST_CASE("noise radius and system JSON round trip") {
  const auto sys = make_benchmark(Benchmark::TripleOsc);
  CHECK(noise_radius(sys) == doctest::Approx(sys.sigma_w * 6));
  const auto back = system_from_json(system_to_json(sys));
  REQUIRE(back.modes.size() == sys.modes.size());
  for (std::size_t i = 0; i < sys.modes.size(); ++i) {
    CHECK(back.modes[i].a == sys.modes[i].a);
    CHECK(back.modes[i].b == sys.modes[i].b);
  }
  CHECK(back.target_radius == sys.target_radius);
  CHECK(back.sigma_w == sys.sigma_w);
}
