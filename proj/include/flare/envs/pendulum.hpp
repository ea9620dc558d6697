#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flare/base/rng.hpp"
#include "flare/envs/draw.hpp"
#include "flare/envs/env.hpp"

namespace flare::env {

struct PendulumConfig {
  double gravity = 10.0;       // m/s^2
  double mass = 1.0;           // kg
  double length = 1.0;         // m
  double dt = 0.02;            // s, semi-implicit Euler step
  double torque_max = 6.0;     // N·m at |u| = 1; < m·g·l, so swing-up needs pumping
  double max_speed = 8.0;      // rad/s clamp
  double reset_angle_noise = 0.1;     // θ = π ± this
  double reset_speed_noise = 0.05;    // θ̇ ~ U(±this)
  double reward_cos_threshold = 0.95; // reward 1 while cos θ exceeds this
  int horizon = 200;
};

/// Torque-limited pendulum swing-up with a sparse upright reward.
/// θ is measured from upright (θ = 0 is the reward zone, θ = π hangs down),
/// wrapped to (−π, π]. Gravity pulls away from upright: θ̈ has a +(g/l)·sin θ
/// term, so the hanging state is stable and reaching the top requires
/// injecting energy over multiple swings (torque_max < m·g·l).
class Pendulum final : public Env {
 public:
  explicit Pendulum(PendulumConfig cfg = {}) : cfg_(cfg) {}

  std::string id() const override { return "pendulum"; }
  int action_dim() const override { return 1; }
  int num_actions() const override { return 0; }
  int horizon() const override { return cfg_.horizon; }

  int state_dim(ObsMode mode) const override {
    switch (mode) {
      case ObsMode::Full: return 3;           // cos θ, sin θ, θ̇
      case ObsMode::PositionOnly: return 2;   // cos θ, sin θ
      default: return 0;
    }
  }

  void reset(uint64_t seed) override {
    Rng rng(seed);
    theta_ = wrap(std::numbers::pi + cfg_.reset_angle_noise * rng.uniform(-1.0, 1.0));
    theta_dot_ = cfg_.reset_speed_noise * rng.uniform(-1.0, 1.0);
    steps_ = 0;
  }

  StepResult step_continuous(const std::vector<double>& action) override {
    if (action.size() != 1) throw std::invalid_argument("pendulum expects a 1-d action");
    StepResult r;
    double u = action[0];
    if (u < -1.0 || u > 1.0) {
      u = std::clamp(u, -1.0, 1.0);
      r.info["clamped"] = 1.0;
    }
    const double accel = (cfg_.gravity / cfg_.length) * std::sin(theta_) +
                         u * cfg_.torque_max / (cfg_.mass * cfg_.length * cfg_.length);
    theta_dot_ = std::clamp(theta_dot_ + accel * cfg_.dt, -cfg_.max_speed, cfg_.max_speed);
    theta_ = wrap(theta_ + theta_dot_ * cfg_.dt);
    ++steps_;
    r.reward = std::cos(theta_) > cfg_.reward_cos_threshold ? 1.0 : 0.0;
    r.done = steps_ >= cfg_.horizon;
    r.info["theta"] = theta_;
    r.info["theta_dot"] = theta_dot_;
    return r;
  }

  std::vector<double> observe(ObsMode mode) const override {
    switch (mode) {
      case ObsMode::Full: return {std::cos(theta_), std::sin(theta_), theta_dot_};
      case ObsMode::PositionOnly: return {std::cos(theta_), std::sin(theta_)};
      default: throw std::invalid_argument("pixel observations come from render()");
    }
  }

  /// Grayscale frame: anti-aliased rod from the image center, length 0.4·size.
  /// Depends on θ only — two states differing in velocity render identically.
  Tensor<float> render(int size) const override {
    if (size < 16) throw std::invalid_argument("render size must be >= 16");
    Tensor<float> img({size, size});
    const double cx = size / 2.0, cy = size / 2.0;
    const double len = 0.4 * size;
    // θ = 0 points up (screen y decreases upward)
    const double tip_x = cx + len * std::sin(theta_);
    const double tip_y = cy - len * std::cos(theta_);
    draw_segment(img, cx, cy, tip_x, tip_y, std::max(1.0, size / 24.0));
    return img;
  }

  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }
  void set_state(double theta, double theta_dot) {
    theta_ = wrap(theta);
    theta_dot_ = theta_dot;
  }

  /// Mechanical energy: kinetic plus gravitational, zero level at the pivot.
  double energy() const {
    const double ke = 0.5 * cfg_.mass * cfg_.length * cfg_.length * theta_dot_ * theta_dot_;
    const double pe = cfg_.mass * cfg_.gravity * cfg_.length * std::cos(theta_);
    return ke + pe;
  }

  const PendulumConfig& config() const { return cfg_; }

  static double wrap(double a) {
    while (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
    while (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
    return a;
  }

 private:
  PendulumConfig cfg_;
  double theta_ = std::numbers::pi;
  double theta_dot_ = 0.0;
  int steps_ = 0;
};

}  // namespace flare::env
