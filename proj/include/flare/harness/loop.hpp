#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/augment/translate.hpp"
#include "flare/base/rng.hpp"
#include "flare/base/tensor.hpp"
#include "flare/core/representation.hpp"
#include "flare/dqn/dqn.hpp"
#include "flare/envs/dotcatch.hpp"
#include "flare/envs/pendulum.hpp"
#include "flare/harness/config.hpp"
#include "flare/harness/log.hpp"
#include "flare/nn/checkpoint.hpp"
#include "flare/replay/buffer.hpp"
#include "flare/sac/sac.hpp"

namespace flare::harness {

// RNG stream ids under the master seed. Training actions, learner draws
// (batch sampling, policy noise, augmentation offsets), evaluation episode
// seeds, environment reset seeds and network initialization are all separate
// streams, so e.g. changing the eval cadence never perturbs training.
inline constexpr uint64_t kStreamEnv = 0;
inline constexpr uint64_t kStreamAct = 1;
inline constexpr uint64_t kStreamLearn = 2;
inline constexpr uint64_t kStreamEval = 3;
inline constexpr uint64_t kStreamInit = 4;

inline env::ObsMode obs_mode_for(core::RepMode m) {
  if (core::is_pixel_mode(m)) return env::ObsMode::Pixels;
  return m == core::RepMode::StateFull ? env::ObsMode::Full
                                       : env::ObsMode::PositionOnly;
}

inline std::unique_ptr<env::Env> make_env(const RunConfig& cfg) {
  if (cfg.env == "pendulum") {
    env::PendulumConfig pc;
    pc.reward_cos_threshold = cfg.pendulum_reward_threshold;
    pc.torque_max = cfg.pendulum_torque_max;
    pc.horizon = cfg.pendulum_horizon;
    return std::make_unique<env::Pendulum>(pc);
  }
  if (cfg.env == "dotcatch") {
    env::DotCatchConfig dc;
    dc.drift_slow = cfg.dotcatch_drift_slow;
    dc.drift_fast = cfg.dotcatch_drift_fast;
    return std::make_unique<env::DotCatch>(dc);
  }
  throw std::invalid_argument("harness: unknown env '" + cfg.env + "'");
}

/// Single observation in the form the replay buffer stores: a state vector
/// [D] or one rendered frame [H, W].
inline Tensor<float> observe_env(const env::Env& e, env::ObsMode mode, int frame_size) {
  if (mode == env::ObsMode::Pixels) return e.render(frame_size);
  const std::vector<double> v = e.observe(mode);
  Tensor<float> t({static_cast<int>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = float(v[i]);
  return t;
}

template <typename S>
core::Representation<S> build_representation(const RunConfig& cfg, const env::Env& e) {
  return core::Representation<S>::make(
      cfg.rep_mode(), cfg.frames, e.state_dim(env::ObsMode::PositionOnly),
      e.state_dim(env::ObsMode::Full), cfg.canvas_size, cfg.canvas_size,
      cfg.is_pixel() ? cfg.conv_layers() : std::vector<nn::ConvLayerSpec>{},
      cfg.latent_dim, cfg.head_width);
}

/// The most recent `win` raw observations, oldest to newest, for the acting
/// path. Mirrors the replay buffer's episode-start padding: a reset fills
/// every slot with the first observation.
struct FrameWindow {
  int win = 1;
  std::deque<Tensor<float>> frames;

  void reset(const Tensor<float>& first) { frames.assign(size_t(win), first); }
  void push(const Tensor<float>& f) {
    frames.pop_front();
    frames.push_back(f);
  }

  template <typename S>
  Tensor<S> stacked() const {
    std::vector<int> shape{win};
    for (int d : frames.front().shape()) shape.push_back(d);
    Tensor<S> out(shape);
    const int64_t per = frames.front().numel();
    int64_t off = 0;
    for (const Tensor<float>& f : frames) {
      for (int64_t i = 0; i < per; ++i) out[off + i] = S(f[i]);
      off += per;
    }
    return out;
  }
};

/// Uniform facade over the two learners so the training loop, evaluation and
/// checkpointing are written once.
template <typename S>
struct Learner {
  std::optional<sac::SacAgent<S>> actor_critic;
  std::optional<dqn::QAgent<S>> q;

  struct UpdateMetrics {
    double critic_loss = 0;
    double actor_loss = 0;
  };

  bool discrete() const { return q.has_value(); }
  const core::Representation<S>& representation() const {
    return discrete() ? q->representation() : actor_critic->representation();
  }
  int window() const { return representation().window(); }

  Tensor<S> observe(const Tensor<S>& frames) const {
    return discrete() ? q->observe(frames) : actor_critic->observe(frames);
  }

  UpdateMetrics train(replay::Buffer& buffer, Rng& rng) {
    UpdateMetrics m;
    if (discrete()) {
      m.critic_loss = q->train_step(buffer, rng).loss;
    } else {
      const auto x = actor_critic->train_step(buffer, rng);
      m.critic_loss = x.critic_loss;
      m.actor_loss = x.actor_loss;
    }
    return m;
  }

  nn::NamedTensors<S>& parameters() {
    return discrete() ? q->parameters() : actor_critic->parameters();
  }
  const nn::NamedTensors<S>& parameters() const {
    return discrete() ? q->parameters() : actor_critic->parameters();
  }
  nn::NamedTensors<S>& target_parameters() {
    return discrete() ? q->target_parameters() : actor_critic->target_parameters();
  }
  const nn::NamedTensors<S>& target_parameters() const {
    return discrete() ? q->target_parameters() : actor_critic->target_parameters();
  }
  void export_optimizer_state(nn::NamedTensors<S>& out) const {
    if (discrete()) q->export_optimizer_state(out);
    else actor_critic->export_optimizer_state(out);
  }
};

template <typename S>
Learner<S> make_learner(const RunConfig& cfg, const env::Env& e, uint64_t init_seed) {
  core::Representation<S> rep = build_representation<S>(cfg, e);
  aug::TranslateSpec tr;
  if (cfg.is_pixel())
    tr = {cfg.frame_size, cfg.frame_size, cfg.canvas_size, cfg.canvas_size};
  Learner<S> L;
  if (cfg.learner == "sac") {
    sac::SacHyper h;
    h.gamma = float(cfg.gamma);
    h.critic_tau = float(cfg.critic_tau);
    h.encoder_tau = float(cfg.encoder_tau);
    h.target_update_every = cfg.target_update_every;
    h.init_temperature = float(cfg.init_temperature);
    h.actor_lr = float(cfg.actor_lr);
    h.critic_lr = float(cfg.critic_lr);
    h.encoder_lr = float(cfg.encoder_lr);
    h.alpha_lr = float(cfg.alpha_lr);
    h.alpha_beta1 = float(cfg.alpha_beta1);
    h.batch_size = cfg.batch_size;
    L.actor_critic.emplace(std::move(rep), e.action_dim(), cfg.hidden, h, init_seed,
                           tr, cfg.augment);
  } else {
    dqn::DqnHyper h;
    h.gamma = float(cfg.gamma);
    h.lr = float(cfg.lr);
    h.batch_size = cfg.batch_size;
    h.target_copy_every = static_cast<int>(cfg.target_copy_every);
    h.epsilon_start = float(cfg.epsilon_start);
    h.epsilon_end = float(cfg.epsilon_end);
    h.epsilon_anneal_steps = cfg.epsilon_anneal_steps;
    L.q.emplace(std::move(rep), e.num_actions(), cfg.hidden, h, init_seed, tr,
                cfg.augment);
  }
  return L;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

template <typename S>
void save_checkpoint(const Learner<S>& L, const RunConfig& cfg, int seed,
                     int64_t env_step, const std::string& path) {
  nn::Checkpoint<S> ck;
  nn::NamedTensors<S> params, target, opt;
  for (const auto& [name, t] : L.parameters()) params.insert(name, t);
  for (const auto& [name, t] : L.target_parameters()) target.insert(name, t);
  L.export_optimizer_state(opt);
  ck.sections.emplace("params", std::move(params));
  ck.sections.emplace("target", std::move(target));
  ck.sections.emplace("optimizer", std::move(opt));
  ck.text["format"] = "flare-run-1";
  ck.text["config"] = cfg.serialize();
  ck.text["seed"] = detail::format_int(seed);
  ck.text["env_step"] = detail::format_int(env_step);
  ck.save(path);
}

template <typename S>
struct RestoredRun {
  RunConfig cfg;
  int seed = 0;
  int64_t env_step = 0;
  std::unique_ptr<env::Env> environment;
  Learner<S> learner;
};

/// Rebuilds the learner a checkpoint was saved from: the embedded config
/// reconstructs the architecture, then the stored tensors replace the fresh
/// initialization. Shapes are verified name by name.
template <typename S>
RestoredRun<S> restore_run(const std::string& path) {
  const nn::Checkpoint<S> ck = nn::Checkpoint<S>::load(path);
  if (!ck.text.count("config"))
    throw std::runtime_error("checkpoint: " + path + " carries no config");
  RestoredRun<S> r;
  r.cfg = parse_config_text(ck.text.at("config"));
  r.cfg.validate();
  if (ck.text.count("seed")) detail::parse_value("seed", ck.text.at("seed"), r.seed);
  if (ck.text.count("env_step"))
    detail::parse_value("env_step", ck.text.at("env_step"), r.env_step);
  r.environment = make_env(r.cfg);
  r.learner = make_learner<S>(r.cfg, *r.environment, 0);
  const auto restore_section = [&](const char* section, nn::NamedTensors<S>& dst) {
    for (const auto& [name, t] : ck.sections.at(section)) {
      Tensor<S>& cur = dst.at(name);
      if (cur.shape() != t.shape())
        throw std::runtime_error("checkpoint: shape mismatch at " + name);
      cur = t;
    }
  };
  restore_section("params", r.learner.parameters());
  restore_section("target", r.learner.target_parameters());
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  double mean = 0;
  double dev = 0;  // population standard deviation over episodes
  std::vector<double> returns;
};

/// Runs `eval_episodes` episodes with the deterministic policy (policy mean /
/// greedy action; no exploration randomness is consumed). Episode seeds come
/// from the dedicated eval stream, so they are disjoint from training resets;
/// `eval_ordinal` keeps successive evaluations on fresh seeds.
template <typename S>
EvalResult evaluate(const Learner<S>& L, env::Env& e, const RunConfig& cfg,
                    uint64_t eval_seed_base, int64_t eval_ordinal) {
  EvalResult res;
  const env::ObsMode mode = obs_mode_for(cfg.rep_mode());
  FrameWindow w;
  w.win = L.window();
  Rng idle;  // never consumed by deterministic acting
  for (int ep = 0; ep < cfg.eval_episodes; ++ep) {
    e.reset(derive_stream(eval_seed_base,
                          static_cast<uint64_t>(eval_ordinal) * 4096 +
                              static_cast<uint64_t>(ep)));
    w.reset(observe_env(e, mode, cfg.frame_size));
    double ret = 0;
    bool done = false;
    while (!done) {
      const Tensor<S> obs = L.observe(w.template stacked<S>());
      std::vector<double> ca;
      int da = 0;
      if (L.discrete()) da = L.q->act(obs, 0.0, idle);
      else ca = L.actor_critic->act(obs, idle, true);
      for (int r = 0; r < cfg.action_repeat && !done; ++r) {
        const env::StepResult sr =
            L.discrete() ? e.step_discrete(da) : e.step_continuous(ca);
        ret += sr.reward;
        done = sr.done;
      }
      w.push(observe_env(e, mode, cfg.frame_size));
    }
    res.returns.push_back(ret);
  }
  double sum = 0, sq = 0;
  for (double v : res.returns) {
    sum += v;
    sq += v * v;
  }
  const double n = double(res.returns.size());
  res.mean = sum / n;
  res.dev = std::sqrt(std::max(0.0, sq / n - res.mean * res.mean));
  return res;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One fully seeded training run. Warm-up takes uniform random actions; after
/// it, the loop interleaves environment steps (each selected action held for
/// `action_repeat` steps with rewards summed into one stored transition) with
/// one learner update per environment step. Rows are logged on the fixed
/// evaluation grid k * eval_interval. When `out_dir` is given, log.csv is
/// appended row by row, and final.ck is written on completion; a non-finite
/// loss (or non-finite policy output) aborts the run with a diagnostic
/// snapshot retained next to the log.
template <typename S>
RunLog run_training(const RunConfig& cfg, int seed, const std::string& out_dir = "",
                    const std::function<void(const RunRecord&)>& on_row = {}) {
  cfg.validate();
  const uint64_t master = static_cast<uint64_t>(static_cast<int64_t>(seed));
  std::unique_ptr<env::Env> train_env = make_env(cfg);
  std::unique_ptr<env::Env> eval_env = make_env(cfg);
  if (train_env->horizon() % cfg.action_repeat != 0)
    throw std::invalid_argument("run: horizon must be a multiple of action_repeat");
  if (cfg.eval_interval < train_env->horizon())
    throw std::invalid_argument(
        "run: eval_interval shorter than the episode horizon leaves rows without "
        "fresh episode returns");

  Learner<S> L = make_learner<S>(cfg, *train_env, derive_stream(master, kStreamInit));
  Rng env_rng(derive_stream(master, kStreamEnv));
  Rng act_rng(derive_stream(master, kStreamAct));
  Rng learn_rng(derive_stream(master, kStreamLearn));
  const uint64_t eval_base = derive_stream(master, kStreamEval);

  const env::ObsMode mode = obs_mode_for(cfg.rep_mode());
  const int action_dim = train_env->action_dim();
  const int num_actions = train_env->num_actions();
  replay::Buffer buffer(cfg.replay_capacity);
  FrameWindow window;
  window.win = L.window();

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir + "/log.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("run: cannot open " + out_dir + "/log.csv");
    csv << kCsvHeader << '\n';
  }

  RunLog log;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    int64_t env_step = 0, next_eval = cfg.eval_interval, eval_ordinal = 0;
    bool need_reset = true;
    Tensor<float> cur_obs;
    double ep_return = 0, last_ep_mean = 0;
    std::vector<double> completed;
    double critic_sum = 0, actor_sum = 0;
    int64_t updates = 0;

    while (env_step < cfg.steps) {
      if (need_reset) {
        train_env->reset(env_rng.bits());
        cur_obs = observe_env(*train_env, mode, cfg.frame_size);
        window.reset(cur_obs);
        ep_return = 0;
        need_reset = false;
      }

      // Select one action (random during warm-up), hold it for action_repeat
      // steps, and store the summed-reward transition.
      const bool warm = env_step < cfg.warmup_steps;
      std::vector<double> ca;
      int da = 0;
      if (L.discrete()) {
        da = warm ? act_rng.uniform_int(0, num_actions - 1)
                  : L.q->act(L.observe(window.stacked<S>()),
                             dqn::epsilon_at(env_step, L.q->hyper()), act_rng);
      } else if (warm) {
        ca.resize(static_cast<size_t>(action_dim));
        for (double& a : ca) a = act_rng.uniform(-1.0, 1.0);
      } else {
        ca = L.actor_critic->act(L.observe(window.stacked<S>()), act_rng, false);
      }

      double reward_sum = 0;
      bool done = false;
      int taken = 0;
      for (int r = 0; r < cfg.action_repeat && !done; ++r) {
        const env::StepResult sr =
            L.discrete() ? train_env->step_discrete(da) : train_env->step_continuous(ca);
        reward_sum += sr.reward;
        done = sr.done;
        ++env_step;
        ++taken;
      }
      const Tensor<float> next_obs = observe_env(*train_env, mode, cfg.frame_size);
      if (L.discrete()) {
        buffer.push(cur_obs, da, float(reward_sum), next_obs, done);
      } else {
        const std::vector<float> af(ca.begin(), ca.end());
        buffer.push(cur_obs, af, float(reward_sum), next_obs, done);
      }
      window.push(next_obs);
      cur_obs = next_obs;
      ep_return += reward_sum;
      if (done) {
        completed.push_back(ep_return);
        need_reset = true;
      }

      // One learner update per post-warm-up environment step.
      const int64_t past =
          std::min<int64_t>(taken, std::max<int64_t>(0, env_step - cfg.warmup_steps));
      for (int64_t u = 0; u < past && buffer.size() >= cfg.batch_size; ++u) {
        const auto m = L.train(buffer, learn_rng);
        if (!std::isfinite(m.critic_loss) || !std::isfinite(m.actor_loss))
          throw std::runtime_error("run: non-finite loss at env step " +
                                   detail::format_int(env_step));
        critic_sum += m.critic_loss;
        actor_sum += m.actor_loss;
        ++updates;
      }

      while (env_step >= next_eval && next_eval <= cfg.steps) {
        const EvalResult ev = evaluate(L, *eval_env, cfg, eval_base, eval_ordinal++);
        if (!completed.empty()) {
          double s = 0;
          for (double v : completed) s += v;
          last_ep_mean = s / double(completed.size());
        }
        RunRecord rec;
        rec.env_step = next_eval;
        rec.episode_return = last_ep_mean;
        rec.eval_return_mean = ev.mean;
        rec.eval_return_std = ev.dev;
        rec.critic_loss = updates ? critic_sum / double(updates) : 0.0;
        rec.actor_loss = updates ? actor_sum / double(updates) : 0.0;
        rec.alpha = L.discrete() ? dqn::epsilon_at(next_eval, L.q->hyper())
                                 : L.actor_critic->alpha();
        rec.wall_time = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        log.rows.push_back(rec);
        if (csv.is_open()) {
          csv << csv_row(rec) << '\n';
          csv.flush();
        }
        if (on_row) on_row(rec);
        completed.clear();
        critic_sum = actor_sum = 0;
        updates = 0;
        next_eval += cfg.eval_interval;
      }
    }
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    if (!out_dir.empty()) {
      const std::string snap = out_dir + "/diagnostic.ck";
      try {
        save_checkpoint(L, cfg, seed, -1, snap);
        msg += "; diagnostic snapshot: " + snap;
      } catch (const std::exception&) {
        // keep the original error if the snapshot itself cannot be written
      }
    }
    throw std::runtime_error(msg);
  }

  if (!out_dir.empty())
    save_checkpoint(L, cfg, seed, cfg.steps, out_dir + "/final.ck");
  return log;
}

}  // namespace flare::harness
