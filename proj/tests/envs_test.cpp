#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "flare/envs/dotcatch.hpp"
#include "flare/envs/pendulum.hpp"
#include "support/oracles.hpp"

using flare::Tensor;
namespace env = flare::env;
using env::ObsMode;

namespace {

/// Intensity-weighted centroid angle of a rendered pendulum frame, measured
/// from upright. Oracle for "the frame depicts θ".
double centroid_angle(const Tensor<float>& img) {
  const int h = img.dim(0), w = img.dim(1);
  const double cx = w / 2.0, cy = h / 2.0;
  double sx = 0, sy = 0, mass = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = img.at(y, x);
      sx += v * (x + 0.5 - cx);
      sy += v * (y + 0.5 - cy);
      mass += v;
    }
  return std::atan2(sx / mass, -(sy / mass));  // screen y points down
}

/// Fourth-order Runge-Kutta at a 200x finer step: the high-resolution
/// reference for the pendulum's conservative dynamics.
struct FinePendulum {
  double theta, omega, g_over_l;
  void advance(double seconds, double dt = 1e-4) {
    auto acc = [&](double th) { return g_over_l * std::sin(th); };
    const int n = static_cast<int>(std::round(seconds / dt));
    for (int i = 0; i < n; ++i) {
      const double k1t = omega, k1o = acc(theta);
      const double k2t = omega + 0.5 * dt * k1o, k2o = acc(theta + 0.5 * dt * k1t);
      const double k3t = omega + 0.5 * dt * k2o, k3o = acc(theta + 0.5 * dt * k2t);
      const double k4t = omega + dt * k3o, k4o = acc(theta + dt * k3t);
      theta += dt / 6 * (k1t + 2 * k2t + 2 * k3t + k4t);
      omega += dt / 6 * (k1o + 2 * k2o + 2 * k3o + k4o);
    }
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// reset
// ---------------------------------------------------------------------------

TEST_CASE("pendulum: same seed resets to identical observations") {
  env::Pendulum a, b;
  a.reset(7);
  b.reset(7);
  CHECK(a.observe(ObsMode::Full) == b.observe(ObsMode::Full));
  CHECK(flare::bitwise_equal(a.render(32), b.render(32)));
}

TEST_CASE("pendulum: reset hangs near the bottom with near-zero speed") {
  env::Pendulum p;
  p.reset(3);
  CHECK(std::abs(p.theta()) >= std::numbers::pi - p.config().reset_angle_noise - 1e-12);
  CHECK(std::abs(p.theta_dot()) <= p.config().reset_speed_noise + 1e-12);
}

TEST_CASE("pendulum: reset noise stays inside the configured range over 1000 seeds") {
  env::Pendulum p;
  const double noise = p.config().reset_angle_noise;
  double lo = 1e9, hi = -1e9;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    p.reset(seed);
    // distance from the hanging angle, accounting for the ±π wrap
    const double d = std::asin(std::sin(p.theta() - std::numbers::pi));
    CHECK(std::abs(d) <= noise + 1e-12);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    CHECK(std::abs(p.theta_dot()) <= p.config().reset_speed_noise + 1e-12);
  }
  // the draw actually exercises most of the configured interval
  CHECK(lo < -0.8 * noise);
  CHECK(hi > 0.8 * noise);
}

// ---------------------------------------------------------------------------
// step
// ---------------------------------------------------------------------------

TEST_CASE("pendulum: upright equilibrium holds with zero torque and earns reward") {
  env::Pendulum p;
  p.set_state(0.0, 0.0);
  for (int i = 0; i < 50; ++i) {
    auto r = p.step_continuous({0.0});
    CHECK(r.reward == 1.0);
    CHECK(std::abs(p.theta()) < 1e-12);
  }
}

TEST_CASE("pendulum: free swing conserves energy against the fine integrator") {
  env::Pendulum p;
  p.set_state(2.5, 0.0);
  FinePendulum ref{2.5, 0.0, p.config().gravity / p.config().length};
  ref.advance(2.0);  // one full swing is just under 2 s at this amplitude
  const double e_ref = 0.5 * ref.omega * ref.omega +
                       p.config().gravity * std::cos(ref.theta);
  CHECK(e_ref == Catch::Approx(p.energy()).epsilon(1e-7));  // RK4 calibrates E0

  const double scale = std::abs(p.energy());
  double prev = p.energy();
  const int swing_steps = static_cast<int>(std::round(2.0 / p.config().dt));
  for (int i = 0; i < swing_steps; ++i) {
    p.step_continuous({0.0});
    CHECK(std::abs(p.energy() - prev) / scale < 1e-3);  // per-step drift bound
    prev = p.energy();
  }
  // net drift per step across the swing is far tighter
  CHECK(std::abs(p.energy() - e_ref) / scale / swing_steps < 1e-4);
}

TEST_CASE("pendulum: angular speed respects the clamp") {
  env::Pendulum p;
  p.set_state(3.0, 0.0);
  for (int i = 0; i < 500; ++i) {
    p.step_continuous({1.0});
    CHECK(std::abs(p.theta_dot()) <= p.config().max_speed);
  }
}

TEST_CASE("pendulum: out-of-bounds torque is clamped and flagged") {
  env::Pendulum p;
  p.reset(1);
  auto r = p.step_continuous({3.5});
  CHECK(r.info.count("clamped") == 1);

  env::Pendulum q;
  q.reset(1);
  auto r2 = q.step_continuous({1.0});
  CHECK(r2.info.count("clamped") == 0);
  CHECK(p.theta_dot() == q.theta_dot());  // 3.5 acted as 1.0
}

TEST_CASE("pendulum: episode terminates exactly at the horizon") {
  env::Pendulum p;
  p.reset(5);
  for (int i = 0; i < p.horizon() - 1; ++i) CHECK_FALSE(p.step_continuous({0.0}).done);
  CHECK(p.step_continuous({0.0}).done);
}

TEST_CASE("pendulum: step is a pure function of state and action") {
  env::Pendulum a, b;
  a.set_state(1.234, -2.345);
  b.set_state(1.234, -2.345);
  a.step_continuous({0.7});
  b.step_continuous({0.7});
  CHECK(a.theta() == b.theta());
  CHECK(a.theta_dot() == b.theta_dot());
}

// ---------------------------------------------------------------------------
// render / observe
// ---------------------------------------------------------------------------

TEST_CASE("pendulum: frames depend on angle only, never on velocity") {
  env::Pendulum a, b;
  a.set_state(0.9, -5.0);
  b.set_state(0.9, 7.5);
  CHECK(flare::bitwise_equal(a.render(32), b.render(32)));
  CHECK(a.observe(ObsMode::PositionOnly) == b.observe(ObsMode::PositionOnly));
}

TEST_CASE("pendulum: upright rod occupies the upper half of the frame") {
  env::Pendulum p;
  p.set_state(0.0, 0.0);
  Tensor<float> img = p.render(32);
  double upper = 0, lower = 0, below_cap = 0;
  const int cap_rows = 16 + 3;  // pivot cap radius plus anti-alias falloff
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      (y < 16 ? upper : lower) += img.at(y, x);
      if (y >= cap_rows) below_cap += img.at(y, x);
    }
  CHECK(upper > 0.0);
  CHECK(below_cap == 0.0);       // the rod proper never enters the lower half
  CHECK(lower < 0.15 * upper);   // only the anti-aliased pivot cap grazes it
}

TEST_CASE("pendulum: rendered centroid recovers the true angle within 2 degrees") {
  env::Pendulum p;
  flare::Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
    p.set_state(theta, 0.0);
    const double got = centroid_angle(p.render(48));
    double diff = std::abs(env::Pendulum::wrap(got - theta));
    CHECK(diff < 2.0 * std::numbers::pi / 180.0);
  }
}

TEST_CASE("pendulum: full observation is position-only plus the velocity") {
  env::Pendulum p;
  p.set_state(0.6, -1.7);
  auto full = p.observe(ObsMode::Full);
  auto pos = p.observe(ObsMode::PositionOnly);
  REQUIRE(full.size() == 3);
  REQUIRE(pos.size() == 2);
  CHECK(full[0] == pos[0]);
  CHECK(full[1] == pos[1]);
  CHECK(full[2] == -1.7);
}

TEST_CASE("pendulum: rewards are sparse and episode return is bounded") {
  env::Pendulum p;
  p.reset(11);
  double ret = 0;
  for (int i = 0; i < p.horizon(); ++i) {
    auto r = p.step_continuous({(i % 3 - 1) * 1.0});
    CHECK((r.reward == 0.0 || r.reward == 1.0));
    ret += r.reward;
  }
  CHECK(ret >= 0);
  CHECK(ret <= p.horizon());
}

// ---------------------------------------------------------------------------
// dot-catch
// ---------------------------------------------------------------------------

TEST_CASE("dot-catch: paddle under the dot at floor contact scores and ends") {
  env::DotCatch d;
  d.set_state(4.0, d.config().height - 1.0, 0.0, 4.0);
  auto r = d.step_discrete(1);  // stay; dot falls onto the paddle row
  CHECK(r.done);
  CHECK(r.reward == 1.0);
  CHECK(r.info.at("caught") == 1.0);
}

TEST_CASE("dot-catch: paddle far away at floor contact scores nothing") {
  env::DotCatch d;
  d.set_state(1.0, d.config().height - 1.0, 0.0, 7.0);
  auto r = d.step_discrete(1);
  CHECK(r.done);
  CHECK(r.reward == 0.0);
}

TEST_CASE("dot-catch: drift reflects off the side walls") {
  env::DotCatch d;
  d.set_state(0.8, 2.0, -1.4, 4.0);
  d.step_discrete(1);
  // would land at -0.6; reflection about 0.5 puts it at 1.6 moving right
  CHECK(d.dot_x() == Catch::Approx(1.6).margin(1e-12));
  CHECK(d.drift() == Catch::Approx(1.4).margin(1e-12));
}

TEST_CASE("dot-catch: same seed gives the same episode") {
  env::DotCatch a, b;
  a.reset(21);
  b.reset(21);
  for (int i = 0; i < 10; ++i) {
    auto ra = a.step_discrete(i % 3);
    auto rb = b.step_discrete(i % 3);
    CHECK(ra.reward == rb.reward);
    CHECK(ra.done == rb.done);
    if (ra.done) break;
  }
  CHECK(a.dot_x() == b.dot_x());
}

TEST_CASE("dot-catch: frames show positions but not drift") {
  env::DotCatch a, b;
  a.set_state(3.0, 2.0, 1.4, 4.0);
  b.set_state(3.0, 2.0, -0.6, 4.0);
  CHECK(flare::bitwise_equal(a.render(16), b.render(16)));
  CHECK(a.observe(ObsMode::PositionOnly) == b.observe(ObsMode::PositionOnly));
  CHECK(a.observe(ObsMode::Full) != b.observe(ObsMode::Full));
}

TEST_CASE("dot-catch: episodes end by floor contact within the horizon") {
  env::DotCatch d;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    d.reset(seed);
    int steps = 0;
    bool done = false;
    while (!done) {
      done = d.step_discrete(1).done;
      ++steps;
      REQUIRE(steps <= d.config().horizon);
    }
    const int expected = static_cast<int>(
        std::ceil((d.config().height - 1.0) / d.config().fall_speed));
    CHECK(steps == expected);
  }
}

TEST_CASE("dot-catch: fast episodes outrun the paddle, slow ones do not") {
  env::DotCatch d;
  CHECK(d.config().drift_fast > d.config().paddle_speed);
  CHECK(d.config().drift_slow < d.config().paddle_speed);
}
