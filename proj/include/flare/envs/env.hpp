#pragma once

#include <map>
#include <string>
#include <vector>

#include "flare/base/tensor.hpp"

namespace flare::env {

enum class ObsMode { Full, PositionOnly, Pixels };

inline const char* to_string(ObsMode m) {
  switch (m) {
    case ObsMode::Full: return "full";
    case ObsMode::PositionOnly: return "position_only";
    default: return "pixels";
  }
}

struct StepResult {
  double reward = 0.0;
  bool done = false;
  std::map<std::string, double> info;
};

/// Desk-scale environment contract. Continuous envs implement
/// step_continuous, discrete envs step_discrete; the observation for the
/// new state comes from observe()/render(), which are pure views of the
/// current internal state.
class Env {
 public:
  virtual ~Env() = default;

  virtual std::string id() const = 0;
  virtual int action_dim() const = 0;    // continuous action dimensions (0 = discrete env)
  virtual int num_actions() const = 0;   // discrete action count (0 = continuous env)
  virtual int state_dim(ObsMode mode) const = 0;
  virtual int horizon() const = 0;

  virtual void reset(uint64_t seed) = 0;
  virtual StepResult step_continuous(const std::vector<double>& action) {
    (void)action;
    throw std::logic_error(id() + ": continuous actions not supported");
  }
  virtual StepResult step_discrete(int action) {
    (void)action;
    throw std::logic_error(id() + ": discrete actions not supported");
  }

  virtual std::vector<double> observe(ObsMode mode) const = 0;
  virtual Tensor<float> render(int size) const = 0;
};

}  // namespace flare::env
