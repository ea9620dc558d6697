#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/augment/translate.hpp"
#include "flare/base/rng.hpp"
#include "flare/base/tensor.hpp"
#include "flare/core/representation.hpp"
#include "flare/nn/adam.hpp"
#include "flare/nn/modules.hpp"
#include "flare/nn/params.hpp"
#include "flare/nn/tape.hpp"
#include "flare/replay/buffer.hpp"

namespace flare::dqn {

struct DqnHyper {
  float gamma = 0.99f;
  float lr = 1e-3f;
  int batch_size = 32;
  int target_copy_every = 1000;  // learner steps between hard copies
  float epsilon_start = 1.0f;
  float epsilon_end = 0.05f;
  int64_t epsilon_anneal_steps = 1;  // env steps to reach epsilon_end
};

/// Linear anneal from epsilon_start to epsilon_end over the first
/// epsilon_anneal_steps environment steps, flat afterwards.
inline double epsilon_at(int64_t env_step, const DqnHyper& h) {
  if (env_step >= h.epsilon_anneal_steps) return h.epsilon_end;
  const double frac = double(env_step) / double(h.epsilon_anneal_steps);
  return h.epsilon_start + (h.epsilon_end - h.epsilon_start) * frac;
}

/// Uniform random action with probability eps, otherwise the greedy action;
/// ties resolve to the lowest index (std::max_element keeps the first max).
inline int epsilon_greedy(const std::vector<double>& q, double eps, Rng& rng) {
  if (q.empty()) throw std::invalid_argument("epsilon_greedy: empty value vector");
  if (eps > 0.0 && rng.uniform() < eps)
    return rng.uniform_int(0, static_cast<int>(q.size()) - 1);
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

/// Minimal Q-learner: representation -> MLP head over discrete actions,
/// with a hard-copied target network. No distributional/double/dueling
/// machinery — the experiments here vary only the representation.
template <typename S>
class QAgent {
 public:
  using Var = typename nn::Tape<S>::Var;
  using Params = nn::NamedTensors<S>;

  struct Metrics {
    int64_t step = 0;
    double loss = 0;
    double batch_reward_mean = 0;
  };

  QAgent(core::Representation<S> rep, int num_actions, std::vector<int> hidden,
         DqnHyper hyper, uint64_t init_seed, aug::TranslateSpec translate = {},
         bool augment = false)
      : rep_(std::move(rep)),
        num_actions_(num_actions),
        hyper_(hyper),
        translate_(translate),
        augment_(augment) {
    if (num_actions_ < 2) throw std::invalid_argument("dqn: need at least 2 actions");
    if (augment_ && !core::is_pixel_mode(rep_.mode))
      throw std::invalid_argument("dqn: augmentation is a pixel-mode feature");
    head_.prefix = "qhead";
    head_.dims.push_back(rep_.feature_dim());
    head_.dims.insert(head_.dims.end(), hidden.begin(), hidden.end());
    head_.dims.push_back(num_actions_);

    Rng rng(init_seed);
    rep_.init(params_, rng);
    head_.init(params_, rng);
    for (const auto& [name, tsr] : params_) target_.insert(name, tsr);
    opt_ = nn::Adam<S>(params_.names(), S(hyper_.lr));
  }

  int num_actions() const { return num_actions_; }
  int64_t learner_steps() const { return steps_; }
  const DqnHyper& hyper() const { return hyper_; }
  Params& parameters() { return params_; }
  const Params& parameters() const { return params_; }
  Params& target_parameters() { return target_; }
  const Params& target_parameters() const { return target_; }
  const core::Representation<S>& representation() const { return rep_; }
  const nn::Mlp<S>& head() const { return head_; }

  /// Adam moments and step counter, for checkpoints.
  void export_optimizer_state(Params& out) const { opt_.export_state("opt", out); }

  /// Q(o, ·) on tape, one column per action.
  Var q_values(nn::Tape<S>& t, const Params& p, Var feat) const {
    return head_.forward(t, p, feat);
  }

  /// Gradient-free Q(o, ·) for acting and target evaluation.
  Tensor<S> raw_q_values(const Params& p, const Tensor<S>& window) const {
    const Tensor<S> feat = rep_.raw_features(p, rep_.preprocess(window));
    return head_.raw_forward(p, feat);
  }

  /// Epsilon-greedy action for one observation window (canvas-sized for
  /// pixel modes).
  int act(const Tensor<S>& window, double eps, Rng& rng) const {
    const Tensor<S> q = raw_q_values(params_, window);
    if (!q.all_finite()) throw std::runtime_error("dqn: non-finite action values");
    std::vector<double> row(static_cast<size_t>(num_actions_));
    for (int a = 0; a < num_actions_; ++a) row[static_cast<size_t>(a)] = q.at(0, a);
    return epsilon_greedy(row, eps, rng);
  }

  /// y = r + gamma * (1 - done) * max_a Q_target(o', a), all raw-side.
  Tensor<S> bellman_targets(const Tensor<S>& next_window,
                            const std::vector<float>& rewards,
                            const std::vector<uint8_t>& done) const {
    const Tensor<S> q = raw_q_values(target_, next_window);
    const int batch = q.dim(0);
    Tensor<S> y({batch, 1});
    for (int b = 0; b < batch; ++b) {
      double best = q.at(b, 0);
      for (int a = 1; a < num_actions_; ++a) best = std::max(best, double(q.at(b, a)));
      y[b] = S(double(rewards[size_t(b)]) +
               (done[size_t(b)] ? 0.0 : double(hyper_.gamma) * best));
    }
    return y;
  }

  /// Mean squared error between Q(o_t, a_t) and the detached targets. The
  /// taken action is selected with a one-hot mask so no gather op is needed.
  Var q_loss(nn::Tape<S>& t, const Tensor<S>& obs, const std::vector<int>& actions,
             const Tensor<S>& targets) const {
    Var feat = rep_.features(t, params_, t.constant(obs));
    Var q = q_values(t, params_, feat);
    const int batch = int(actions.size());
    Tensor<S> onehot({batch, num_actions_});
    for (int b = 0; b < batch; ++b) {
      const int a = actions[size_t(b)];
      if (a < 0 || a >= num_actions_)
        throw std::invalid_argument("dqn: action index out of range");
      onehot.at(b, a) = S{1};
    }
    Var taken = t.row_sum(t.mul(q, t.constant(onehot)));
    return t.mean_all(t.square(t.sub(taken, t.constant(targets))));
  }

  /// Replay windows -> network input, mirroring the actor-critic path:
  /// canvas placement (random per stack while training, centered otherwise)
  /// then mode preprocessing.
  Tensor<S> prepare_windows(const Tensor<S>& windows, Rng& rng,
                            bool random_offsets) const {
    if (!core::is_pixel_mode(rep_.mode)) return windows;
    const int batch = windows.dim(0), n = windows.dim(1);
    if (windows.dim(2) != translate_.in_h || windows.dim(3) != translate_.in_w)
      throw std::invalid_argument("dqn: frame size does not match translate spec");
    Tensor<S> out({batch, n, translate_.out_h, translate_.out_w});
    Tensor<S> item({n, translate_.in_h, translate_.in_w});
    const int64_t in_sz = item.numel();
    const int64_t out_sz = int64_t(n) * translate_.out_h * translate_.out_w;
    for (int b = 0; b < batch; ++b) {
      std::copy_n(windows.data() + b * in_sz, in_sz, item.data());
      auto placed = random_offsets ? aug::random_translate(item, translate_, rng)
                                   : aug::center_translate(item, translate_);
      std::copy_n(placed.frames.data(), out_sz, out.data() + b * out_sz);
    }
    return rep_.preprocess(out);
  }

  /// Center-place one raw frame stack and add the batch dimension.
  Tensor<S> observe(const Tensor<S>& frames) const {
    if (!core::is_pixel_mode(rep_.mode)) {
      std::vector<int> shape{1};
      for (int i = 0; i < frames.rank(); ++i) shape.push_back(frames.dim(i));
      return frames.reshaped(shape);
    }
    auto placed = aug::center_translate(frames, translate_);
    return placed.frames.reshaped(
        {1, frames.dim(0), translate_.out_h, translate_.out_w});
  }

  /// One learner step: sample, build targets from the target network,
  /// descend the Bellman error, and hard-copy the target on schedule.
  Metrics train_step(replay::Buffer& buffer, Rng& rng) {
    auto batch = buffer.sample(hyper_.batch_size, rep_.window(), rng);
    const Tensor<S> obs = prepare_windows(batch.obs.template cast<S>(), rng, augment_);
    const Tensor<S> next =
        prepare_windows(batch.next_obs.template cast<S>(), rng, augment_);
    const Tensor<S> y = bellman_targets(next, batch.rewards, batch.done);

    Metrics m;
    nn::Tape<S> t;
    Var loss = q_loss(t, obs, batch.actions_disc, y);
    m.loss = double(t.value(loss)[0]);
    t.backward(loss);
    opt_.step(params_, t);

    ++steps_;
    if (steps_ % hyper_.target_copy_every == 0)
      nn::ema_update(target_, params_, params_.names(), S{1});

    m.step = steps_;
    double r = 0;
    for (float x : batch.rewards) r += double(x);
    m.batch_reward_mean = r / double(batch.rewards.size());
    return m;
  }

 private:
  core::Representation<S> rep_;
  int num_actions_ = 2;
  DqnHyper hyper_;
  aug::TranslateSpec translate_;
  bool augment_ = false;

  nn::Mlp<S> head_;
  Params params_, target_;
  nn::Adam<S> opt_;
  int64_t steps_ = 0;
};

}  // namespace flare::dqn
