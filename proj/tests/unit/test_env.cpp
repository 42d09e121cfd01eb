#include <doctest.h>

#include "sacx/env/ball_in_cup.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace sacx::env;

namespace {

PhysicsState hanging(const BallInCupConfig& cfg) { return reset_state(cfg, 0.0); }

}  // namespace

TEST_CASE("reset") {
  BallInCupConfig cfg;
  SUBCASE("zero perturbation hangs straight down") {
    PhysicsState s = reset_state(cfg, 0.0);
    CHECK(s.ball_position.x() == cfg.start_position.x());
    CHECK(s.ball_position.y() == cfg.start_position.y() - 0.40);
  }
  SUBCASE("same seed, same state") {
    std::mt19937_64 a(3), b(3);
    PhysicsState s1 = reset_state(cfg, a), s2 = reset_state(cfg, b);
    CHECK(s1.ball_position == s2.ball_position);
  }
  SUBCASE("string taut at rest") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
      PhysicsState s = reset_state(cfg, rng);
      CHECK(std::abs((s.ball_position - s.cup_position).norm() - 0.40) <= 1e-9);
      CHECK(std::abs(std::asin((s.ball_position - s.cup_position).x() / 0.40)) <= 0.05 + 1e-12);
    }
  }
}

TEST_CASE("action low-pass filter") {
  BallInCupConfig cfg;
  const double tau = 1.0 / (2.0 * std::numbers::pi * 0.5);
  CHECK(cfg.filter_coefficient() == doctest::Approx(0.05 / (tau + 0.05)).epsilon(1e-12));
  CHECK(cfg.filter_coefficient() == doctest::Approx(0.13576).epsilon(1e-4));

  SUBCASE("step response after one second") {
    ActionFilterState f;
    Vec2 cmd;
    for (int i = 0; i < 20; ++i) cmd = filter_action(cfg, Vec2(0.7, -0.7), f);
    const double beta = cfg.filter_coefficient();
    CHECK(f.value.x() / 0.7 == doctest::Approx(1.0 - std::pow(1.0 - beta, 20)).epsilon(1e-12));
    CHECK(f.value.x() / 0.7 >= 0.94);
    CHECK(cmd.x() == doctest::Approx(2.0 * f.value.x()));
  }
  SUBCASE("zero in, zero out") {
    ActionFilterState f;
    for (int i = 0; i < 100; ++i) CHECK(filter_action(cfg, Vec2::Zero(), f) == Vec2::Zero());
  }
  SUBCASE("nyquist input is attenuated") {
    ActionFilterState f;
    for (int i = 0; i < 200; ++i) {
      filter_action(cfg, Vec2::Constant(i % 2 == 0 ? 1.0 : -1.0), f);
      if (i >= 60) CHECK(f.value.cwiseAbs().maxCoeff() < 0.15);
    }
  }
  SUBCASE("out-of-range input is clipped") {
    ActionFilterState a, b;
    bool clipped = false;
    filter_action(cfg, Vec2(3.0, -5.0), a, &clipped);
    CHECK(clipped);
    filter_action(cfg, Vec2(1.0, -1.0), b);
    CHECK(a.value == b.value);
  }
}

TEST_CASE("physics") {
  BallInCupConfig cfg;
  SUBCASE("slack-string free fall follows g t^2 / 2") {
    PhysicsState s = hanging(cfg);
    s.ball_position = s.cup_position + Vec2(0.01, 0.0);
    const double z0 = s.ball_position.y();
    for (int k = 1; k <= 4; ++k) {
      s = step_physics(cfg, s, Vec2::Zero());
      const double t = 0.05 * k;
      CHECK(std::abs((z0 - s.ball_position.y()) - 0.5 * 9.81 * t * t) <= 1e-3);
    }
  }
  SUBCASE("small-angle pendulum period") {
    PhysicsState s = reset_state(cfg, 0.05);
    std::vector<double> crossings;
    double prev = s.ball_position.x() - s.cup_position.x();
    for (int k = 0; k < 200; ++k) {
      s = step_physics(cfg, s, Vec2::Zero());
      const double x = s.ball_position.x() - s.cup_position.x();
      if (prev > 0.0 && x <= 0.0) crossings.push_back(0.05 * (k + prev / (prev - x)));
      prev = x;
    }
    REQUIRE(crossings.size() >= 3);
    const double period = (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
    const double expected = 2.0 * std::numbers::pi * std::sqrt(0.40 / 9.81);
    CHECK(std::abs(period - expected) / expected <= 0.05);
  }
  SUBCASE("passive swing never gains energy") {
    for (double angle : {0.05, 0.5, 1.2, 2.5}) {
      PhysicsState s = reset_state(cfg, angle);
      double e = specific_energy(cfg, s);
      for (int k = 0; k < 400; ++k) {
        s = step_physics(cfg, s, Vec2::Zero());
        const double next = specific_energy(cfg, s);
        CHECK(next <= e + 1e-6);
        e = next;
      }
    }
  }
  SUBCASE("string length bound under random driving") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PhysicsState s = reset_state(cfg, rng);
    ActionFilterState f;
    for (int k = 0; k < 2000; ++k) {
      s = step_physics(cfg, s, filter_action(cfg, Vec2(u(rng), u(rng)), f));
      CHECK((s.ball_position - s.cup_position).norm() <= 0.40 + 1e-6);
      CHECK((s.cup_position.array() >= cfg.workspace_min.array()).all());
      CHECK((s.cup_position.array() <= cfg.workspace_max.array()).all());
    }
  }
  SUBCASE("a ball dropped through the opening stays in the cup") {
    PhysicsState s = hanging(cfg);
    s.ball_position = s.cup_position + Vec2(0.01, 0.25);
    int inside = 0;
    for (int k = 0; k < 40; ++k) {
      s = step_physics(cfg, s, Vec2::Zero());
      inside += compute_rewards(cfg, s, Vec2::Zero())[4] > 0.0;
    }
    CHECK(s.ball_in_cup);
    CHECK(inside >= 30);
    CHECK(ball_in_cup_frame(s).y() == doctest::Approx(cfg.ball_radius()));
  }
  SUBCASE("the base blocks a ball rising from below") {
    PhysicsState s = hanging(cfg);
    s.ball_position = s.cup_position + Vec2(0.0, -0.05);
    s.ball_velocity = Vec2(0.0, 3.0);
    for (int k = 0; k < 10; ++k) {
      s = step_physics(cfg, s, Vec2::Zero());
      CHECK(compute_rewards(cfg, s, Vec2::Zero())[4] == 0.0);
    }
  }
  SUBCASE("non-finite commands abort") {
    PhysicsState s = hanging(cfg);
    CHECK_THROWS_AS(step_physics(cfg, s, Vec2(std::nan(""), 0.0)), SimulationError);
  }
}

TEST_CASE("rewards") {
  BallInCupConfig cfg;
  PhysicsState s = hanging(cfg);
  auto at = [&](double x, double z) {
    s.ball_position = s.cup_position + Vec2(x, z);
    return compute_rewards(cfg, s, Vec2::Zero());
  };
  const double peak = 1.0 / (2.0 * std::numbers::pi * 0.09 * 0.09);
  CHECK(at(0.3, 0.0)[5] == 0.5);
  CHECK(at(0.0, 0.05)[6] == doctest::Approx(peak).epsilon(1e-12));
  CHECK(peak == doctest::Approx(19.649).epsilon(1e-4));
  CHECK(at(0.18, 0.05)[6] == doctest::Approx(peak * std::exp(-2.0)).epsilon(1e-12));
  CHECK(at(0.18, 0.05)[6] == doctest::Approx(2.659).epsilon(1e-3));
  CHECK(at(0.0, -0.01)[6] == 0.0);

  auto r = at(0.0, -0.40);
  for (int i = 0; i < 5; ++i) CHECK(r[static_cast<std::size_t>(i)] <= (i == 3 ? 1.0 : 0.0));
  CHECK(r[0] == 0.0);
  CHECK(r[4] == 0.0);
  CHECK(r[5] < 0.5);

  CHECK(at(0.0, 0.1)[4] == 1.0);
  CHECK(at(0.08, 0.1)[4] == 0.0);
  CHECK(at(0.0, 0.2)[1] == 1.0);
  CHECK(at(0.0, 0.36)[2] == 1.0);
  CHECK(at(0.0, 0.34)[2] == 0.0);
  CHECK(at(0.0, 0.16)[3] == doctest::Approx(1.0));

  s.cup_velocity = Vec2(1.0, -0.5);
  CHECK(compute_rewards(cfg, s, Vec2::Zero())[7] == doctest::Approx(-0.15));
}

TEST_CASE("reward implications and monotonicity on random states") {
  BallInCupConfig cfg;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  PhysicsState s = hanging(cfg);
  for (int i = 0; i < 100000; ++i) {
    s.ball_position = s.cup_position + Vec2(u(rng), u(rng));
    s.cup_velocity = Vec2(4.0 * u(rng), 4.0 * u(rng));
    auto r = compute_rewards(cfg, s, Vec2::Zero());
    if (r[4] > 0.0) REQUIRE(r[0] > 0.0);
    if (r[1] > 0.0) REQUIRE(r[0] > 0.0);
    REQUIRE((r[5] >= 0.0 && r[5] <= 1.0));
    REQUIRE(r[6] >= 0.0);
    REQUIRE(r[7] <= 0.0);
    for (int k : {0, 1, 2, 4}) REQUIRE((r[static_cast<std::size_t>(k)] == 0.0 || r[static_cast<std::size_t>(k)] == 1.0));
  }
  double prev = -1.0;
  for (int i = -200; i <= 200; ++i) {
    const double r6 = compute_rewards(cfg, [&] {
                        s.ball_position = s.cup_position + Vec2(0.0, 0.002 * i);
                        return s;
                      }(), Vec2::Zero())[5];
    CHECK(r6 > prev);
    prev = r6;
  }
}

TEST_CASE("rendering") {
  BallInCupConfig cfg;
  PhysicsState s = hanging(cfg);
  Frame f = render(cfg, s);
  CHECK(f.size() == 32u * 32u);
  CHECK(f == render(cfg, s));
  int ball = 0, cup = 0;
  for (auto v : f) {
    ball += v == 255;
    cup += v == 128;
  }
  CHECK(ball >= 1);
  CHECK(cup >= 3);

  SUBCASE("ball out of view leaves cup pixels only") {
    s.ball_position = Vec2(5.0, 5.0);
    Frame g = render(cfg, s);
    for (auto v : g) CHECK((v == 0 || v == 128));
  }
  SUBCASE("minimum footprint anywhere in view") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> x(-0.85, 0.85), z(-0.4, 1.3);
    for (int i = 0; i < 500; ++i) {
      s.ball_position = Vec2(x(rng), z(rng));
      Frame g = render(cfg, s);
      CHECK(std::count(g.begin(), g.end(), 255) >= 1);
    }
  }
}

TEST_CASE("observations") {
  BallInCupConfig cfg;
  BallInCup env(cfg);
  std::mt19937_64 rng(8);
  Observation o0 = env.reset(rng);
  const std::size_t frame = 32 * 32;
  REQUIRE(o0.pixels.size() == 3 * frame);
  CHECK(std::equal(o0.pixels.begin(), o0.pixels.begin() + frame, o0.pixels.begin() + frame));
  CHECK(std::equal(o0.pixels.begin(), o0.pixels.begin() + frame, o0.pixels.begin() + 2 * frame));
  CHECK(o0.features.segment<2>(features::ball_velocity).isZero());
  for (std::size_t i = 0; i < o0.pixels.size(); ++i) REQUIRE((o0.pixel(i) >= 0.0 && o0.pixel(i) <= 1.0));

  SUBCASE("previous action and filter state are exposed verbatim") {
    auto r1 = env.step(Vec2(0.3, -0.2));
    CHECK(r1.observation.proprio.segment<2>(proprio::previous_action) == Vec2(0.3, -0.2));
    auto r2 = env.step(Vec2(-0.9, 0.4));
    CHECK(r2.observation.proprio.segment<2>(proprio::previous_action) == Vec2(-0.9, 0.4));
    CHECK(r2.observation.proprio.segment<2>(proprio::filter_state) == env.filter_state().value);
    CHECK(r2.observation.features.segment<2>(features::ball_relative) == ball_in_cup_frame(env.state()));
  }
  SUBCASE("static scene has zero finite-difference velocities") {
    PhysicsState rest = reset_state(cfg, 0.0);
    env.reset_to(rest);
    auto r = env.step(Vec2::Zero());
    auto r2 = env.step(Vec2::Zero());
    CHECK(r2.observation.features.segment<2>(features::ball_velocity).isZero());
    CHECK(r2.observation.features.segment<2>(features::cup_velocity).isZero());
    (void)r;
  }
  SUBCASE("frame stack is ordered oldest to newest") {
    auto r1 = env.step(Vec2(1.0, 1.0));
    auto r2 = env.step(Vec2(1.0, 1.0));
    CHECK(std::equal(r2.observation.pixels.begin() + frame, r2.observation.pixels.begin() + 2 * frame,
                     r1.observation.pixels.begin() + 2 * frame));
  }
}

TEST_CASE("identical state, filter and history give identical next observations") {
  BallInCupConfig cfg;
  BallInCup a(cfg), b(cfg);
  std::mt19937_64 ra(1), rb(1), act(2);
  a.reset(ra);
  b.reset(rb);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Vec2 action(u(act), u(act));
    auto sa = a.step(action);
    auto sb = b.step(action);
    REQUIRE(sa.observation == sb.observation);
    REQUIRE(sa.rewards == sb.rewards);
  }
}
