#pragma once

#include <algorithm>
#include <cmath>

#include "flare/base/rng.hpp"
#include "flare/envs/draw.hpp"
#include "flare/envs/env.hpp"

namespace flare::env {

struct DotCatchConfig {
  int width = 8;         // cells
  int height = 8;        // cells; dot falls from row 0 to the paddle row
  double fall_speed = 0.5;            // cells per step
  double drift_slow = 0.6;            // |vx| of slow episodes
  double drift_fast = 1.4;            // |vx| of fast episodes (outruns the paddle)
  double paddle_speed = 1.0;          // cells per action
  double catch_halfwidth = 1.0;       // |paddle − dot| at floor contact that counts
  int horizon = 50;                   // safety cap; floor contact ends episodes sooner
};

/// A dot falls with constant velocity (vertical drop plus horizontal drift
/// that reflects off the side walls); a paddle at the floor moves
/// {left, stay, right}. Reward 1 if the paddle is under the dot at floor
/// contact. Half the episodes drift faster than the paddle can move, so
/// intercepting them requires predicting the landing point from motion —
/// a single rendered frame shows positions only, never the drift.
class DotCatch final : public Env {
 public:
  explicit DotCatch(DotCatchConfig cfg = {}) : cfg_(cfg) {}

  std::string id() const override { return "dotcatch"; }
  int action_dim() const override { return 0; }
  int num_actions() const override { return 3; }
  int horizon() const override { return cfg_.horizon; }

  int state_dim(ObsMode mode) const override {
    switch (mode) {
      case ObsMode::Full: return 5;          // dot x, dot y, vx, vy, paddle x
      case ObsMode::PositionOnly: return 3;  // dot x, dot y, paddle x
      default: return 0;
    }
  }

  void reset(uint64_t seed) override {
    Rng rng(seed);
    x_ = rng.uniform(1.5, cfg_.width - 1.5);
    y_ = 0.5;
    const double mag = rng.uniform() < 0.5 ? cfg_.drift_slow : cfg_.drift_fast;
    vx_ = rng.uniform() < 0.5 ? -mag : mag;
    paddle_ = cfg_.width / 2.0;
    steps_ = 0;
  }

  StepResult step_discrete(int action) override {
    StepResult r;
    if (action < 0 || action > 2) {
      action = std::clamp(action, 0, 2);
      r.info["clamped"] = 1.0;
    }
    paddle_ = std::clamp(paddle_ + (action - 1) * cfg_.paddle_speed, 0.5,
                         cfg_.width - 0.5);
    x_ += vx_;
    reflect();
    y_ += cfg_.fall_speed;
    ++steps_;

    const bool floor = y_ >= cfg_.height - 0.5;
    if (floor) {
      const bool caught = std::abs(paddle_ - x_) <= cfg_.catch_halfwidth;
      r.reward = caught ? 1.0 : 0.0;
      r.done = true;
      r.info["caught"] = caught ? 1.0 : 0.0;
    } else {
      r.done = steps_ >= cfg_.horizon;
    }
    r.info["dot_x"] = x_;
    r.info["dot_y"] = y_;
    r.info["paddle_x"] = paddle_;
    return r;
  }

  std::vector<double> observe(ObsMode mode) const override {
    const double w = cfg_.width, h = cfg_.height;
    switch (mode) {
      case ObsMode::Full:
        return {x_ / w, y_ / h, vx_, cfg_.fall_speed, paddle_ / w};
      case ObsMode::PositionOnly:
        return {x_ / w, y_ / h, paddle_ / w};
      default:
        throw std::invalid_argument("pixel observations come from render()");
    }
  }

  /// Dot as a one-cell filled square, paddle as a bar on the bottom row;
  /// positions only — drift is invisible in any single frame.
  Tensor<float> render(int size) const override {
    if (size < 16) throw std::invalid_argument("render size must be >= 16");
    Tensor<float> img({size, size});
    const double sx = static_cast<double>(size) / cfg_.width;
    const double sy = static_cast<double>(size) / cfg_.height;
    draw_rect(img, (x_ - 0.5) * sx, (y_ - 0.5) * sy, (x_ + 0.5) * sx, (y_ + 0.5) * sy);
    draw_rect(img, (paddle_ - cfg_.catch_halfwidth) * sx, (cfg_.height - 0.6) * sy,
              (paddle_ + cfg_.catch_halfwidth) * sx, static_cast<double>(size));
    return img;
  }

  double dot_x() const { return x_; }
  double dot_y() const { return y_; }
  double drift() const { return vx_; }
  double paddle_x() const { return paddle_; }
  const DotCatchConfig& config() const { return cfg_; }

  void set_state(double dot_x, double dot_y, double vx, double paddle_x) {
    x_ = dot_x;
    y_ = dot_y;
    vx_ = vx;
    paddle_ = std::clamp(paddle_x, 0.5, cfg_.width - 0.5);
    steps_ = 0;
  }

 private:
  void reflect() {
    const double lo = 0.5, hi = cfg_.width - 0.5;
    while (x_ < lo || x_ > hi) {
      if (x_ < lo) {
        x_ = 2.0 * lo - x_;
        vx_ = -vx_;
      } else {
        x_ = 2.0 * hi - x_;
        vx_ = -vx_;
      }
    }
  }

  DotCatchConfig cfg_;
  double x_ = 4.0, y_ = 0.5, vx_ = 0.0, paddle_ = 4.0;
  int steps_ = 0;
};

}  // namespace flare::env
