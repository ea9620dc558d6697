#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
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

namespace flare::sac {

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

struct SacHyper {
  float gamma = 0.99f;
  float critic_tau = 0.01f;    // EMA rate for target critics
  float encoder_tau = 0.05f;   // EMA rate for target encoder + fusion head
  int target_update_every = 2; // learner steps between EMA sweeps
  float init_temperature = 0.1f;
  float actor_lr = 2e-4f;
  float critic_lr = 2e-4f;
  float encoder_lr = 1e-3f;
  float alpha_lr = 1e-4f;
  float alpha_beta1 = 0.5f;
  int batch_size = 16;
};

/// Smooth bound for the raw log-std head: tanh maps it into
/// [kLogStdMin, kLogStdMax] with nonzero gradient everywhere, unlike a hard
/// clamp that parks saturated units.
inline double squash_log_std(double raw) {
  return kLogStdMin + 0.5 * (kLogStdMax - kLogStdMin) * (std::tanh(raw) + 1.0);
}

/// log-density of a = tanh(u) for u ~ N(mu, e^{log_std}), evaluated at u.
/// The change-of-variables term uses the identity
/// log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u)), exact and stable for
/// large |u| where 1 - tanh(u)^2 underflows.
inline double squashed_logp(double mu, double log_std, double u) {
  const double eps = (u - mu) / std::exp(log_std);
  const double gauss =
      -0.5 * eps * eps - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
  const double x = -2.0 * u;
  const double softplus = std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
  return gauss - 2.0 * (std::log(2.0) - u - softplus);
}

/// Entropy-regularized one-sample value: min of the twin estimates minus the
/// temperature-weighted log-probability of the sampled action.
inline double soft_value(double q1, double q2, double log_prob, double alpha) {
  return std::min(q1, q2) - alpha * log_prob;
}

namespace detail {
template <typename S>
Tensor<S> concat_cols_raw(const Tensor<S>& a, const Tensor<S>& b) {
  const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  if (b.dim(0) != rows) throw std::invalid_argument("concat: row mismatch");
  Tensor<S> out({rows, ca + cb});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < ca; ++c) out.at(r, c) = a.at(r, c);
    for (int c = 0; c < cb; ++c) out.at(r, ca + c) = b.at(r, c);
  }
  return out;
}
}  // namespace detail

/// Soft actor-critic over any of the representation variants. Twin critics
/// with EMA targets, a squashed-Gaussian actor, and a learned temperature.
/// The encoder (and fusion head) train on the critic loss only; the actor
/// sees stop-gradded features.
template <typename S>
class SacAgent {
 public:
  using Var = typename nn::Tape<S>::Var;
  using Params = nn::NamedTensors<S>;

  struct Metrics {
    int64_t step = 0;
    double critic_loss = 0;
    double actor_loss = 0;
    double alpha = 0;
    double batch_reward_mean = 0;
  };

  struct PolicyVars {
    Var mean, log_std;
  };
  struct SampleVars {
    Var action, log_prob, pre_squash;
  };

  SacAgent(core::Representation<S> rep, int action_dim, std::vector<int> hidden,
           SacHyper hyper, uint64_t init_seed, aug::TranslateSpec translate = {},
           bool augment = false)
      : rep_(std::move(rep)),
        action_dim_(action_dim),
        hyper_(hyper),
        translate_(translate),
        augment_(augment) {
    if (action_dim_ < 1) throw std::invalid_argument("sac: action_dim must be >= 1");
    if (augment_ && !core::is_pixel_mode(rep_.mode))
      throw std::invalid_argument("sac: augmentation is a pixel-mode feature");
    const int feat = rep_.feature_dim();
    actor_.prefix = "actor";
    actor_.dims = chain(feat, hidden, 2 * action_dim_);
    critic1_.prefix = "critic1";
    critic1_.dims = chain(feat + action_dim_, hidden, 1);
    critic2_.prefix = "critic2";
    critic2_.dims = critic1_.dims;

    Rng rng(init_seed);
    rep_.init(params_, rng);
    encoder_names_ = params_.names();  // representation tensors land first
    actor_.init(params_, rng);
    critic1_.init(params_, rng);
    critic2_.init(params_, rng);
    params_.insert("log_alpha",
                   Tensor<S>::full({1}, S(std::log(double(hyper_.init_temperature)))));
    critic_names_ = params_.names_with_prefix("critic");
    for (const auto& name : encoder_names_) target_.insert(name, params_.at(name));
    for (const auto& name : critic_names_) target_.insert(name, params_.at(name));

    opt_encoder_ = nn::Adam<S>(encoder_names_, S(hyper_.encoder_lr));
    opt_actor_ = nn::Adam<S>(params_.names_with_prefix("actor."), S(hyper_.actor_lr));
    opt_critic_ = nn::Adam<S>(critic_names_, S(hyper_.critic_lr));
    opt_alpha_ = nn::Adam<S>({"log_alpha"}, S(hyper_.alpha_lr), S(hyper_.alpha_beta1));
  }

  double alpha() const { return std::exp(double(params_.at("log_alpha")[0])); }
  double target_entropy() const { return -double(action_dim_); }
  int64_t learner_steps() const { return steps_; }
  int action_dim() const { return action_dim_; }
  const SacHyper& hyper() const { return hyper_; }

  Params& parameters() { return params_; }
  const Params& parameters() const { return params_; }
  Params& target_parameters() { return target_; }
  const Params& target_parameters() const { return target_; }
  const core::Representation<S>& representation() const { return rep_; }
  const nn::Mlp<S>& actor() const { return actor_; }
  const nn::Mlp<S>& critic_net(int i) const { return i == 0 ? critic1_ : critic2_; }
  const std::vector<std::string>& encoder_names() const { return encoder_names_; }
  const std::vector<std::string>& critic_names() const { return critic_names_; }

  /// Adam moments and step counters of all four groups, for checkpoints.
  void export_optimizer_state(Params& out) const {
    opt_encoder_.export_state("opt.encoder", out);
    opt_actor_.export_state("opt.actor", out);
    opt_critic_.export_state("opt.critic", out);
    opt_alpha_.export_state("opt.alpha", out);
  }

  /// Actor heads on tape: mean and smoothly-bounded log-std, each [B, A].
  PolicyVars policy_heads(nn::Tape<S>& t, const Params& p, Var feat) const {
    Var out = actor_.forward(t, p, feat);
    if (!t.value(out).all_finite())
      throw std::runtime_error("sac: policy heads are non-finite");
    Var mean = t.slice_cols(out, 0, action_dim_);
    Var raw = t.slice_cols(out, action_dim_, action_dim_);
    Var log_std = t.add_const(
        t.scale(t.add_const(t.tanh_(raw), S{1}), S(0.5 * (kLogStdMax - kLogStdMin))),
        S(kLogStdMin));
    return {mean, log_std};
  }

  /// Reparameterized draw a = tanh(mu + sigma * eps) with its log-probability.
  /// eps is injected (one standard normal per action dimension) so callers can
  /// fix the noise when checking gradients. With u = mu + sigma * eps
  /// substituted, the Gaussian quadratic term reduces to eps^2; gradients
  /// reach the parameters through log_std and through u in the squash term.
  SampleVars policy_sample(nn::Tape<S>& t, const Params& p, Var feat,
                           const Tensor<S>& eps) const {
    auto heads = policy_heads(t, p, feat);
    Var sigma = t.exp_(heads.log_std);
    Var epsv = t.constant(eps);
    Var u = t.add(heads.mean, t.mul(sigma, epsv));
    Var action = t.tanh_(u);
    Var gauss = t.neg(
        t.add(t.scale(t.square(epsv), S{0.5}),
              t.add_const(heads.log_std, S(0.5 * std::log(2.0 * std::numbers::pi)))));
    Var squash = t.scale(
        t.add_const(t.sub(t.neg(u), t.softplus(t.scale(u, S{-2}))), S(std::log(2.0))),
        S{2});
    Var log_prob = t.row_sum(t.sub(gauss, squash));
    return {action, log_prob, u};
  }

  /// Action for a single observation window (canvas-sized for pixel modes).
  /// Deterministic evaluation takes tanh(mean); exploration draws one sample.
  std::vector<double> act(const Tensor<S>& window, Rng& rng, bool deterministic) const {
    const Tensor<S> feat = rep_.raw_features(params_, rep_.preprocess(window));
    const Tensor<S> heads = actor_.raw_forward(params_, feat);
    if (!heads.all_finite()) throw std::runtime_error("sac: policy heads are non-finite");
    std::vector<double> a(static_cast<size_t>(action_dim_));
    for (int i = 0; i < action_dim_; ++i) {
      const double mu = heads.at(0, i);
      const double ls = squash_log_std(heads.at(0, action_dim_ + i));
      const double u = deterministic ? mu : mu + std::exp(ls) * rng.normal();
      a[size_t(i)] = std::tanh(u);
    }
    return a;
  }

  /// One-sample soft value of each next observation: a fresh action from the
  /// current policy (features from the online encoder), scored by the EMA
  /// encoder and target critics. Gradient-free by construction. Draws are
  /// batch-major, dimension-minor.
  std::vector<double> target_value(const Tensor<S>& next_window, Rng& rng) const {
    const Tensor<S> proc = rep_.preprocess(next_window);
    const Tensor<S> feat_pi = rep_.raw_features(params_, proc);
    const Tensor<S> heads = actor_.raw_forward(params_, feat_pi);
    if (!heads.all_finite()) throw std::runtime_error("sac: policy heads are non-finite");
    const int batch = feat_pi.dim(0);
    Tensor<S> actions({batch, action_dim_});
    std::vector<double> logp(static_cast<size_t>(batch), 0.0);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < action_dim_; ++i) {
        const double mu = heads.at(b, i);
        const double ls = squash_log_std(heads.at(b, action_dim_ + i));
        const double u = mu + std::exp(ls) * rng.normal();
        actions.at(b, i) = S(std::tanh(u));
        logp[size_t(b)] += squashed_logp(mu, ls, u);
      }
    const Tensor<S> feat_tgt = rep_.raw_features(target_, proc);
    const Tensor<S> joint = detail::concat_cols_raw(feat_tgt, actions);
    const Tensor<S> q1 = critic1_.raw_forward(target_, joint);
    const Tensor<S> q2 = critic2_.raw_forward(target_, joint);
    const double a = alpha();
    std::vector<double> v(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b)
      v[size_t(b)] = soft_value(q1[b], q2[b], logp[size_t(b)], a);
    return v;
  }

  /// y = r + gamma * (1 - done) * V(o'). Terminal transitions keep only the
  /// immediate reward.
  Tensor<S> bellman_targets(const std::vector<float>& rewards,
                            const std::vector<uint8_t>& done,
                            const std::vector<double>& next_value) const {
    const int batch = int(rewards.size());
    Tensor<S> y({batch, 1});
    for (int b = 0; b < batch; ++b)
      y[b] = S(double(rewards[size_t(b)]) +
               (done[size_t(b)] ? 0.0 : double(hyper_.gamma) * next_value[size_t(b)]));
    return y;
  }

  /// Mean over the batch and both critics of (Q_i - y)^2. Encoder gradients
  /// flow from here and only here. obs must already be preprocessed.
  Var critic_loss(nn::Tape<S>& t, const Tensor<S>& obs, const Tensor<S>& actions,
                  const Tensor<S>& targets) const {
    Var feat = rep_.features(t, params_, t.constant(obs));
    Var joint = t.concat_cols({feat, t.constant(actions)});
    Var q1 = critic1_.forward(t, params_, joint);
    Var q2 = critic2_.forward(t, params_, joint);
    Var y = t.constant(targets);
    return t.scale(t.add(t.mean_all(t.square(t.sub(q1, y))),
                         t.mean_all(t.square(t.sub(q2, y)))),
                   S{0.5});
  }

  /// mean(alpha * log pi - min_i Q_i) under fresh reparameterized actions.
  /// Features are stop-gradded so the actor step cannot move the encoder;
  /// critic gradients land on the tape but the actor optimizer ignores them.
  Var actor_loss(nn::Tape<S>& t, const Tensor<S>& obs, const Tensor<S>& eps,
                 double* mean_log_prob = nullptr) const {
    Var feat = t.stop_grad(rep_.features(t, params_, t.constant(obs)));
    auto s = policy_sample(t, params_, feat, eps);
    Var joint = t.concat_cols({feat, s.action});
    Var q1 = critic1_.forward(t, params_, joint);
    Var q2 = critic2_.forward(t, params_, joint);
    Var loss =
        t.mean_all(t.sub(t.scale(s.log_prob, S(alpha())), t.minimum(q1, q2)));
    if (mean_log_prob) {
      const Tensor<S>& lp = t.value(s.log_prob);
      double m = 0;
      for (int64_t i = 0; i < lp.numel(); ++i) m += double(lp[i]);
      *mean_log_prob = m / double(lp.numel());
    }
    return loss;
  }

  /// loss = -log_alpha * (mean log pi + target entropy), log pi held fixed.
  /// The temperature rises while the policy is more deterministic than the
  /// entropy target and falls once it is more random.
  Var alpha_loss(nn::Tape<S>& t, double mean_log_prob) const {
    Var la = t.param("log_alpha", params_.at("log_alpha"));
    return t.scale(la, S(-(mean_log_prob + target_entropy())));
  }

  /// Polyak sweep: critics at critic_tau, encoder (and head) at encoder_tau.
  void update_targets() {
    nn::ema_update(target_, params_, critic_names_, S(hyper_.critic_tau));
    nn::ema_update(target_, params_, encoder_names_, S(hyper_.encoder_tau));
  }

  /// Replay windows -> network input. Pixel stacks are placed on the padded
  /// canvas (one random offset per stack during training, center otherwise),
  /// then mode preprocessing runs. State windows pass through unchanged.
  Tensor<S> prepare_windows(const Tensor<S>& windows, Rng& rng,
                            bool random_offsets) const {
    if (!core::is_pixel_mode(rep_.mode)) return windows;
    const int batch = windows.dim(0), n = windows.dim(1);
    if (windows.dim(2) != translate_.in_h || windows.dim(3) != translate_.in_w)
      throw std::invalid_argument("sac: frame size does not match translate spec");
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

  /// Center-place one raw frame stack and add the batch dimension (acting
  /// path). State windows only gain the batch dimension.
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

  /// One learner step: sample, build targets, descend the critic (encoder
  /// included), the actor, and the temperature, then periodically refresh the
  /// EMA targets.
  Metrics train_step(replay::Buffer& buffer, Rng& rng) {
    auto batch = buffer.sample(hyper_.batch_size, rep_.window(), rng);
    const Tensor<S> obs = prepare_windows(batch.obs.template cast<S>(), rng, augment_);
    const Tensor<S> next =
        prepare_windows(batch.next_obs.template cast<S>(), rng, augment_);
    const std::vector<double> v = target_value(next, rng);
    const Tensor<S> y = bellman_targets(batch.rewards, batch.done, v);
    const Tensor<S> actions = batch.actions.template cast<S>();

    Metrics m;
    {
      nn::Tape<S> t;
      Var loss = critic_loss(t, obs, actions, y);
      m.critic_loss = double(t.value(loss)[0]);
      t.backward(loss);
      opt_critic_.step(params_, t);
      opt_encoder_.step(params_, t);
    }
    double mean_logp = 0;
    {
      nn::Tape<S> t;
      Tensor<S> eps({hyper_.batch_size, action_dim_});
      for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = S(rng.normal());
      Var loss = actor_loss(t, obs, eps, &mean_logp);
      m.actor_loss = double(t.value(loss)[0]);
      t.backward(loss);
      opt_actor_.step(params_, t);
    }
    {
      nn::Tape<S> t;
      Var loss = alpha_loss(t, mean_logp);
      t.backward(loss);
      opt_alpha_.step(params_, t);
    }
    ++steps_;
    if (steps_ % hyper_.target_update_every == 0) update_targets();

    m.step = steps_;
    m.alpha = alpha();
    double r = 0;
    for (float x : batch.rewards) r += double(x);
    m.batch_reward_mean = r / double(batch.rewards.size());
    return m;
  }

 private:
  static std::vector<int> chain(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> dims{in};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    return dims;
  }

  core::Representation<S> rep_;
  int action_dim_ = 1;
  SacHyper hyper_;
  aug::TranslateSpec translate_;
  bool augment_ = false;

  nn::Mlp<S> actor_, critic1_, critic2_;
  Params params_, target_;
  std::vector<std::string> encoder_names_, critic_names_;
  nn::Adam<S> opt_encoder_, opt_actor_, opt_critic_, opt_alpha_;
  int64_t steps_ = 0;
};

}  // namespace flare::sac
