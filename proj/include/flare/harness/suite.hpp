#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "flare/harness/config.hpp"
#include "flare/harness/log.hpp"
#include "flare/harness/loop.hpp"
#include "flare/harness/plot.hpp"

namespace flare::harness {

// ---------------------------------------------------------------------------
// Experiment suites: named bundles of runs whose relative ordering carries the
// claims this library makes. Each suite lists labeled configurations; the
// runner executes every (configuration, seed) pair that is not already cached
// under the output root, aggregates the curves, and grades the orderings.
//
// Runs are cached at <root>/runs/<config-hash>/seed<k>/ and keyed by the
// configuration's canonical serialization, so two suites that share a
// configuration share its runs no matter which executed first.
// ---------------------------------------------------------------------------

struct SuiteVariant {
  std::string label;
  RunConfig cfg;
};

struct SuiteDef {
  std::string name;
  std::string title;  // plot title
  std::vector<SuiteVariant> variants;
};

// ---------------------------------------------------------------------------
// Base configurations. These are the calibrated desk-scale presets every
// suite derives from; the config files shipped under configs/ mirror them.
// ---------------------------------------------------------------------------

/// Soft actor-critic on pendulum swing-up from state vectors.
inline RunConfig state_base_config() {
  RunConfig c;
  c.env = "pendulum";
  c.learner = "sac";
  c.rep = "state_full";
  c.frames = 1;
  c.steps = 100000;
  c.warmup_steps = 1000;
  c.eval_interval = 2500;
  c.eval_episodes = 10;
  c.action_repeat = 1;
  c.replay_capacity = 100000;
  c.batch_size = 32;
  c.hidden = {64, 64};
  c.gamma = 0.99;
  c.seeds = {0, 1, 2, 3, 4};
  c.pendulum_reward_threshold = -0.9;
  c.pendulum_torque_max = 6.0;
  // Long episodes widen the representation gap: a memoryless tilt policy
  // collects a fixed fraction of the horizon, while swing-up policies
  // amortize their transient, so the relative ordering margins grow.
  c.pendulum_horizon = 600;
  c.critic_tau = 0.01;
  c.encoder_tau = 0.05;
  c.target_update_every = 2;
  c.init_temperature = 0.2;
  c.actor_lr = 1e-3;
  c.critic_lr = 1e-3;
  c.encoder_lr = 1e-3;
  c.alpha_lr = 1e-4;
  c.alpha_beta1 = 0.9;
  return c;
}

/// Soft actor-critic on pendulum swing-up from rendered frames.
inline RunConfig pixel_base_config() {
  RunConfig c = state_base_config();
  c.rep = "flare_pixel";
  c.frames = 2;
  c.steps = 150000;
  c.eval_interval = 5000;
  c.action_repeat = 2;
  c.replay_capacity = 30000;
  c.batch_size = 16;
  c.frame_size = 16;
  c.canvas_size = 20;
  c.conv = "8x3x2,8x3x2";
  c.latent_dim = 32;
  c.head_width = 128;
  c.augment = true;
  return c;
}

/// Q-learner on dot-catch from rendered frames.
inline RunConfig discrete_base_config() {
  RunConfig c;
  c.env = "dotcatch";
  c.learner = "dqn";
  c.rep = "flare_pixel";
  c.frames = 2;
  c.steps = 200000;
  c.warmup_steps = 2000;
  c.eval_interval = 5000;
  c.eval_episodes = 20;
  c.action_repeat = 1;
  c.replay_capacity = 50000;
  c.batch_size = 32;
  c.hidden = {64};
  c.gamma = 0.99;
  c.seeds = {0, 1, 2, 3, 4};
  c.dotcatch_drift_slow = 0.6;
  c.dotcatch_drift_fast = 1.4;
  c.lr = 1e-3;
  c.target_copy_every = 1000;
  c.epsilon_start = 1.0;
  c.epsilon_end = 0.05;
  c.epsilon_anneal_steps = 50000;
  c.frame_size = 16;
  c.canvas_size = 20;
  c.conv = "8x3x2,8x3x2";
  c.latent_dim = 32;
  c.head_width = 128;
  c.augment = false;
  return c;
}

inline std::vector<std::string> suite_names() {
  return {"motivation",          "state_ablation",       "pixel_main",
          "pixel_ablation_flow", "pixel_ablation_stack", "pixel_ablation_frames",
          "discrete"};
}

inline SuiteDef suite_def(const std::string& name) {
  auto with_rep = [](RunConfig c, const char* rep) {
    c.rep = rep;
    return c;
  };
  if (name == "motivation") {
    const RunConfig base = state_base_config();
    return {name,
            "Pendulum swing-up: what the observation carries",
            {{"state_full", base},
             {"state_position_only", with_rep(base, "state_position_only")},
             {"state_flare", with_rep(base, "state_flare")}}};
  }
  if (name == "state_ablation") {
    const RunConfig base = state_base_config();
    return {name,
            "Pendulum swing-up: recovering motion from position histories",
            {{"state_full", base},
             {"state_flare", with_rep(base, "state_flare")},
             {"state_stack", with_rep(base, "state_stack")},
             {"state_recurrent", with_rep(base, "state_recurrent")}}};
  }
  if (name == "pixel_main") {
    const RunConfig px = pixel_base_config();
    return {name,
            "Pendulum swing-up from pixels",
            {{"state_reference", state_base_config()},
             {"pixel_flare", px},
             {"pixel_latent_concat", with_rep(px, "latent_concat_pixel")},
             {"pixel_frame_stack", with_rep(px, "frame_stack_pixel")}}};
  }
  if (name == "pixel_ablation_flow") {
    const RunConfig px = pixel_base_config();
    return {name,
            "Latent flow versus pixel-difference channels",
            {{"pixel_flare", px}, {"pixel_flow", with_rep(px, "pixel_flow")}}};
  }
  if (name == "pixel_ablation_stack") {
    const RunConfig px = pixel_base_config();
    return {name,
            "Latent flow versus plain latent stacking",
            {{"pixel_flare", px},
             {"pixel_latent_concat", with_rep(px, "latent_concat_pixel")}}};
  }
  if (name == "pixel_ablation_frames") {
    const RunConfig px = pixel_base_config();
    RunConfig n3 = px;
    n3.frames = 3;
    RunConfig n5 = px;
    n5.frames = 5;
    return {name,
            "Frame-window width for latent flow",
            {{"flare_frames_2", px}, {"flare_frames_3", n3}, {"flare_frames_5", n5}}};
  }
  if (name == "discrete") {
    const RunConfig fl = discrete_base_config();
    RunConfig single = fl;
    single.rep = "frame_stack_pixel";
    single.frames = 1;
    single.latent_dim = 64;  // parameter parity with the flare variant's head
    single.hidden = {192};
    return {name,
            "Dot-catch: value learner with and without motion features",
            {{"dqn_flare", fl}, {"dqn_single_frame", single}}};
  }
  std::string known;
  for (const std::string& s : suite_names()) known += (known.empty() ? "" : ", ") + s;
  throw std::invalid_argument("unknown suite '" + name + "' (expected one of: " + known + ")");
}

// ---------------------------------------------------------------------------
// Cached execution
// ---------------------------------------------------------------------------

using ProgressFn = std::function<void(const std::string&)>;

inline std::string run_dir(const RunConfig& cfg, int seed, const std::string& root) {
  return root + "/runs/" + config_hash(cfg) + "/seed" + detail::format_int(seed);
}

/// A run is cached when its directory holds a log and a completion marker
/// whose hash pins the exact configuration and seed. The marker is written
/// last, so interrupted runs never count.
inline bool run_is_cached(const RunConfig& cfg, int seed, const std::string& root) {
  const std::string dir = run_dir(cfg, seed, root);
  return std::filesystem::exists(dir + "/log.csv") &&
         read_meta_hash(dir + "/meta.json") == run_hash(cfg, seed);
}

struct RunHandle {
  std::string dir;
  bool cached = false;
};

/// Execute one (configuration, seed) run unless a cached copy exists.
inline RunHandle ensure_run(const RunConfig& cfg, int seed, const std::string& root,
                            const std::string& label, const ProgressFn& progress = {}) {
  const std::string dir = run_dir(cfg, seed, root);
  const std::string tag = label + " seed " + detail::format_int(seed);
  if (run_is_cached(cfg, seed, root)) {
    if (progress) progress("cached   " + tag);
    return {dir, true};
  }
  std::filesystem::create_directories(dir);
  RunConfig mine = cfg;
  mine.seeds = {seed};  // the stored config describes exactly this run
  {
    std::ofstream f(dir + "/config.cfg", std::ios::trunc);
    if (!f) throw std::runtime_error("suite: cannot write " + dir + "/config.cfg");
    f << mine.serialize();
  }
  if (progress) progress("running  " + tag);
  const auto t0 = std::chrono::steady_clock::now();
  run_training<float>(mine, seed, dir);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_meta(dir + "/meta.json", run_hash(cfg, seed), label, seed, cfg.steps, wall,
             mine.serialize());
  if (progress) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), " in %.1fs", wall);
    progress("done     " + tag + buf);
  }
  return {dir, false};
}

// ---------------------------------------------------------------------------
// Results and verdicts
// ---------------------------------------------------------------------------

struct VariantResult {
  std::string label;
  RunConfig cfg;
  Curve curve;                // empty when no seed finished
  double final_score = 0.0;   // mean of the last evaluation points
  double auc = 0.0;           // area under the aggregated curve
  std::vector<int> seeds;     // seeds with a finished run
  int seeds_expected = 0;
};

struct Verdict {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteResult {
  std::string name;
  std::vector<VariantResult> variants;
  std::vector<Verdict> verdicts;
  std::vector<std::string> failures;  // "label seed k: error"
  int runs_executed = 0;
  int runs_cached = 0;
  bool complete = false;  // every requested run finished

  bool all_pass() const {
    if (!complete) return false;
    for (const Verdict& v : verdicts)
      if (!v.pass) return false;
    return true;
  }
};

inline const VariantResult* find_variant(const std::vector<VariantResult>& vs,
                                         const std::string& label) {
  for (const VariantResult& v : vs)
    if (v.label == label) return &v;
  return nullptr;
}

namespace detail {
inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return std::string(buf);
}
}  // namespace detail

/// Grade one suite's orderings from aggregated per-variant results. Pure,
/// so synthetic results can exercise every branch.
inline std::vector<Verdict> suite_verdicts(const std::string& suite,
                                           const std::vector<VariantResult>& vs) {
  std::vector<Verdict> out;
  auto get = [&](const std::string& label) -> const VariantResult* {
    const VariantResult* p = find_variant(vs, label);
    return (p && !p->curve.mean.empty()) ? p : nullptr;
  };
  auto need = [&](const std::string& verdict,
                  std::initializer_list<const char*> labels) -> bool {
    for (const char* l : labels)
      if (!get(l)) {
        out.push_back({verdict, false, std::string("missing data for ") + l});
        return false;
      }
    return true;
  };
  auto ordering = [&](const std::string& verdict, const char* hi, const char* lo) {
    if (!need(verdict, {hi, lo})) return;
    const double a = get(hi)->final_score, b = get(lo)->final_score;
    out.push_back({verdict, a >= b,
                   std::string(hi) + " " + detail::num(a) + " vs " + lo + " " +
                       detail::num(b)});
  };
  auto margin = [&](const std::string& verdict, const char* hi, const char* lo,
                    const char* ref, double frac) {
    if (!need(verdict, {hi, lo, ref})) return;
    const double gap = get(hi)->final_score - get(lo)->final_score;
    const double bar = frac * get(ref)->final_score;
    out.push_back({verdict, gap >= bar,
                   std::string(hi) + " - " + lo + " = " + detail::num(gap) +
                       ", needs >= " + detail::num(bar) + " (" + detail::num(frac * 100) +
                       "% of " + ref + " " + detail::num(get(ref)->final_score) + ")"});
  };

  if (suite == "motivation") {
    ordering("full_at_least_flare", "state_full", "state_flare");
    margin("flare_minus_position_at_least_quarter_of_full", "state_flare",
           "state_position_only", "state_full", 0.25);
  } else if (suite == "state_ablation") {
    ordering("flare_at_least_stack", "state_flare", "state_stack");
    ordering("flare_at_least_recurrent", "state_flare", "state_recurrent");
    if (need("best_gap_at_least_15pct_of_full",
             {"state_flare", "state_stack", "state_recurrent", "state_full"})) {
      const double fl = get("state_flare")->final_score;
      const double gap = std::max(fl - get("state_stack")->final_score,
                                  fl - get("state_recurrent")->final_score);
      const double bar = 0.15 * get("state_full")->final_score;
      out.push_back({"best_gap_at_least_15pct_of_full", gap >= bar,
                     "largest flare gap " + detail::num(gap) + ", needs >= " +
                         detail::num(bar)});
    }
  } else if (suite == "pixel_main") {
    margin("flare_minus_concat_at_least_15pct_of_reference", "pixel_flare",
           "pixel_latent_concat", "state_reference", 0.15);
  } else if (suite == "pixel_ablation_flow") {
    if (need("flare_auc_at_least_flow_auc", {"pixel_flare", "pixel_flow"})) {
      const double a = get("pixel_flare")->auc, b = get("pixel_flow")->auc;
      out.push_back({"flare_auc_at_least_flow_auc", a >= b,
                     "pixel_flare auc " + detail::num(a) + " vs pixel_flow auc " +
                         detail::num(b)});
    }
  } else if (suite == "pixel_ablation_stack") {
    ordering("flare_at_least_latent_concat", "pixel_flare", "pixel_latent_concat");
  } else if (suite == "pixel_ablation_frames") {
    ordering("two_frames_at_least_five", "flare_frames_2", "flare_frames_5");
  } else if (suite == "discrete") {
    if (need("flare_catch_rate_20pts_above_single_frame",
             {"dqn_flare", "dqn_single_frame"})) {
      const double gap =
          get("dqn_flare")->final_score - get("dqn_single_frame")->final_score;
      out.push_back({"flare_catch_rate_20pts_above_single_frame", gap >= 0.20,
                     "catch-rate gap " + detail::num(gap) + ", needs >= 0.2"});
    }
  } else {
    throw std::invalid_argument("unknown suite: " + suite);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Execute a suite definition: run whatever is not cached (jobs > 1 runs that
/// many in parallel), aggregate per-variant curves, grade the orderings.
/// `seeds` overrides every variant's seed list when non-empty.
inline SuiteResult run_suite_def(const SuiteDef& def, const std::vector<int>& seeds,
                                 const std::string& root, int jobs = 1,
                                 const ProgressFn& progress = {}) {
  for (const SuiteVariant& v : def.variants) v.cfg.validate();

  struct Task {
    size_t variant;
    int seed;
  };
  std::vector<Task> tasks;
  for (size_t vi = 0; vi < def.variants.size(); ++vi)
    for (int s : seeds.empty() ? def.variants[vi].cfg.seeds : seeds)
      tasks.push_back({vi, s});

  SuiteResult res;
  res.name = def.name;
  std::mutex mu;
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
      const SuiteVariant& v = def.variants[tasks[i].variant];
      const int seed = tasks[i].seed;
      try {
        const RunHandle h = ensure_run(v.cfg, seed, root, v.label,
                                       [&](const std::string& line) {
                                         std::lock_guard<std::mutex> lk(mu);
                                         if (progress) progress(line);
                                       });
        std::lock_guard<std::mutex> lk(mu);
        ++(h.cached ? res.runs_cached : res.runs_executed);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(mu);
        const std::string what =
            v.label + " seed " + detail::format_int(seed) + ": " + e.what();
        res.failures.push_back(what);
        if (progress) progress("FAILED   " + what);
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, int(tasks.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  bool all_present = true;
  for (const SuiteVariant& v : def.variants) {
    VariantResult vr;
    vr.label = v.label;
    vr.cfg = v.cfg;
    const std::vector<int>& ss = seeds.empty() ? v.cfg.seeds : seeds;
    vr.seeds_expected = int(ss.size());
    std::vector<RunLog> logs;
    for (int s : ss) {
      if (!run_is_cached(v.cfg, s, root)) continue;
      logs.push_back(read_csv(run_dir(v.cfg, s, root) + "/log.csv"));
      vr.seeds.push_back(s);
    }
    if (!logs.empty()) {
      vr.curve = aggregate_eval(logs);
      vr.final_score = final_score(vr.curve);
      vr.auc = area_under_curve(vr.curve);
    }
    all_present = all_present && int(vr.seeds.size()) == vr.seeds_expected;
    res.variants.push_back(std::move(vr));
  }
  res.complete = all_present && res.failures.empty();
  res.verdicts = suite_verdicts(def.name, res.variants);
  return res;
}

/// Write summary.csv, verdicts.txt, and curves.svg under <root>/suites/<name>/.
inline void write_suite_outputs(const SuiteResult& res, const SuiteDef& def,
                                const std::string& root) {
  const std::string dir = root + "/suites/" + res.name;
  std::filesystem::create_directories(dir);

  {
    std::ofstream f(dir + "/summary.csv", std::ios::trunc);
    if (!f) throw std::runtime_error("suite: cannot write " + dir + "/summary.csv");
    f << "variant,final_score,auc,seeds_present,seeds_expected\n";
    for (const VariantResult& v : res.variants)
      f << v.label << ',' << detail::format_value(v.final_score) << ','
        << detail::format_value(v.auc) << ',' << v.seeds.size() << ','
        << v.seeds_expected << '\n';
  }
  {
    std::ofstream f(dir + "/verdicts.txt", std::ios::trunc);
    if (!f) throw std::runtime_error("suite: cannot write " + dir + "/verdicts.txt");
    for (const Verdict& v : res.verdicts)
      f << (v.pass ? "PASS " : "FAIL ") << v.name << ": " << v.detail << '\n';
    for (const std::string& msg : res.failures) f << "ERROR " << msg << '\n';
    f << "RESULT " << (res.all_pass() ? "PASS" : res.complete ? "FAIL" : "INCOMPLETE")
      << '\n';
  }
  std::vector<PlotSeries> series;
  for (const VariantResult& v : res.variants)
    if (!v.curve.steps.empty()) series.push_back({v.label, v.curve});
  if (!series.empty()) {
    PlotOptions opt;
    opt.title = def.title;
    opt.y_label = def.name == "discrete" ? "catch rate" : "evaluation return";
    write_svg(series, opt, dir + "/curves.svg");
  }
}

/// Run a named suite and write its report files. The convenience entry the
/// command-line tool and the acceptance checks share.
inline SuiteResult run_suite(const std::string& name, const std::vector<int>& seeds,
                             const std::string& root, int jobs = 1,
                             const ProgressFn& progress = {}) {
  const SuiteDef def = suite_def(name);
  SuiteResult res = run_suite_def(def, seeds, root, jobs, progress);
  write_suite_outputs(res, def, root);
  return res;
}

}  // namespace flare::harness
