#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "flare/core/representation.hpp"
#include "flare/nn/modules.hpp"

namespace flare::harness {

/// Everything one training run needs, as a flat typed document. Learner
/// hyperparameters default to the reference actor-critic values; loop
/// constants (step budget, warm-up, eval cadence) default to desk scale.
/// Environment physics constants that the calibration pass owns are exposed
/// here too, so a config file fully determines a run.
struct RunConfig {
  // --- run shape ---------------------------------------------------------
  std::string env = "pendulum";     // pendulum | dotcatch
  std::string learner = "sac";      // sac | dqn
  std::string rep = "state_full";   // representation mode name
  int frames = 2;                   // encoded frames n (pixel modes)
  int64_t steps = 100000;           // total environment steps
  int64_t warmup_steps = 1000;      // random-action steps before learning
  int64_t eval_interval = 2500;     // environment steps between eval rows
  int eval_episodes = 10;
  int action_repeat = 1;            // hold each action this many env steps
  int64_t replay_capacity = 100000;
  int batch_size = 32;
  std::vector<int> hidden = {64, 64};  // actor/critic (sac) or q-head (dqn)
  double gamma = 0.99;
  std::vector<int> seeds = {0, 1, 2, 3, 4};

  // --- environment constants (fixed by the calibration pass) -------------
  double pendulum_reward_threshold = 0.95;  // reward 1 while cos(theta) exceeds this
  double pendulum_torque_max = 6.0;
  int pendulum_horizon = 200;
  double dotcatch_drift_slow = 0.6;
  double dotcatch_drift_fast = 1.4;

  // --- soft actor-critic -------------------------------------------------
  double critic_tau = 0.01;
  double encoder_tau = 0.05;
  int target_update_every = 2;
  double init_temperature = 0.1;
  double actor_lr = 2e-4;
  double critic_lr = 2e-4;
  double encoder_lr = 1e-3;
  double alpha_lr = 1e-4;
  double alpha_beta1 = 0.5;

  // --- q-learning --------------------------------------------------------
  double lr = 1e-3;
  int64_t target_copy_every = 1000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int64_t epsilon_anneal_steps = 20000;

  // --- pixel pipeline ----------------------------------------------------
  int frame_size = 64;     // rendered frame edge (pixels)
  int canvas_size = 68;    // padded canvas the encoder sees
  std::string conv = "8x3x2,8x3x2";  // filters x kernel x stride, per layer
  int latent_dim = 64;
  int head_width = 1024;   // fusion head output width
  bool augment = false;    // random-translate replay batches (pixel modes)

  core::RepMode rep_mode() const { return core::parse_rep_mode(rep); }
  bool is_pixel() const { return core::is_pixel_mode(rep_mode()); }

  std::vector<nn::ConvLayerSpec> conv_layers() const;
  std::string serialize() const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Field table
// ---------------------------------------------------------------------------

/// Visits every config field as (key, member reference), in the fixed order
/// that defines the canonical serialization. The visitor must accept
/// std::string, int, int64_t, double, bool, and std::vector<int> members.
template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("env", c.env);
  f("learner", c.learner);
  f("rep", c.rep);
  f("frames", c.frames);
  f("steps", c.steps);
  f("warmup_steps", c.warmup_steps);
  f("eval_interval", c.eval_interval);
  f("eval_episodes", c.eval_episodes);
  f("action_repeat", c.action_repeat);
  f("replay_capacity", c.replay_capacity);
  f("batch_size", c.batch_size);
  f("hidden", c.hidden);
  f("gamma", c.gamma);
  f("seeds", c.seeds);
  f("pendulum_reward_threshold", c.pendulum_reward_threshold);
  f("pendulum_torque_max", c.pendulum_torque_max);
  f("pendulum_horizon", c.pendulum_horizon);
  f("dotcatch_drift_slow", c.dotcatch_drift_slow);
  f("dotcatch_drift_fast", c.dotcatch_drift_fast);
  f("critic_tau", c.critic_tau);
  f("encoder_tau", c.encoder_tau);
  f("target_update_every", c.target_update_every);
  f("init_temperature", c.init_temperature);
  f("actor_lr", c.actor_lr);
  f("critic_lr", c.critic_lr);
  f("encoder_lr", c.encoder_lr);
  f("alpha_lr", c.alpha_lr);
  f("alpha_beta1", c.alpha_beta1);
  f("lr", c.lr);
  f("target_copy_every", c.target_copy_every);
  f("epsilon_start", c.epsilon_start);
  f("epsilon_end", c.epsilon_end);
  f("epsilon_anneal_steps", c.epsilon_anneal_steps);
  f("frame_size", c.frame_size);
  f("canvas_size", c.canvas_size);
  f("conv", c.conv);
  f("latent_dim", c.latent_dim);
  f("head_width", c.head_width);
  f("augment", c.augment);
}

// ---------------------------------------------------------------------------
// Value formatting and parsing (locale-free, lossless round trip)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(bool v) { return v ? "true" : "false"; }

template <typename I>
std::string format_int(I v) {
  char buf[24];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}
inline std::string format_value(int v) { return format_int(v); }
inline std::string format_value(int64_t v) { return format_int(v); }

/// Shortest representation that parses back to the identical double.
inline std::string format_value(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string format_value(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_int(v[i]);
  }
  return out;
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& raw,
                                   const char* expected) {
  throw std::invalid_argument("config: key '" + key + "' expects " + expected +
                              ", got '" + raw + "'");
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline void parse_value(const std::string& key, const std::string& raw, std::string& dst) {
  if (raw.empty()) bad_value(key, raw, "a non-empty word");
  dst = raw;
}

inline void parse_value(const std::string& key, const std::string& raw, bool& dst) {
  if (raw == "true") dst = true;
  else if (raw == "false") dst = false;
  else bad_value(key, raw, "true or false");
}

template <typename I>
void parse_integer(const std::string& key, const std::string& raw, I& dst) {
  I v{};
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc{} || p != raw.data() + raw.size())
    bad_value(key, raw, "an integer");
  dst = v;
}
inline void parse_value(const std::string& key, const std::string& raw, int& dst) {
  parse_integer(key, raw, dst);
}
inline void parse_value(const std::string& key, const std::string& raw, int64_t& dst) {
  parse_integer(key, raw, dst);
}

inline void parse_value(const std::string& key, const std::string& raw, double& dst) {
  double v{};
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc{} || p != raw.data() + raw.size()) bad_value(key, raw, "a number");
  dst = v;
}

inline void parse_value(const std::string& key, const std::string& raw,
                        std::vector<int>& dst) {
  dst.clear();
  if (trim(raw).empty()) return;
  size_t pos = 0;
  while (pos <= raw.size()) {
    const size_t comma = raw.find(',', pos);
    const std::string item(trim(raw.substr(pos, comma - pos)));
    int v{};
    parse_integer(key, item, v);
    dst.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Key-value document: parse (with includes), apply, serialize
// ---------------------------------------------------------------------------

/// Parses `key = value` lines into `out` (later assignments override earlier
/// ones). Lines may carry `#` comments. An `include <path>` line splices
/// another file, resolved relative to the including file; includes are only
/// legal when `base_dir` is known (i.e. when parsing from a file).
inline void parse_kv_lines(const std::string& text, const std::string& origin,
                           std::map<std::string, std::string>& out,
                           const std::filesystem::path& base_dir, int depth,
                           std::set<std::string>& visited) {
  if (depth > 8) throw std::invalid_argument("config: include nesting deeper than 8");
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string_view body = detail::trim(line);
    if (body.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (body.substr(0, 8) == "include " || body == "include") {
      if (base_dir.empty())
        throw std::invalid_argument("config: " + where +
                                    ": includes are only allowed in files");
      const std::string rel(detail::trim(body.substr(7)));
      if (rel.empty())
        throw std::invalid_argument("config: " + where + ": include needs a path");
      std::filesystem::path target = base_dir / rel;
      std::error_code ec;
      std::filesystem::path canon = std::filesystem::weakly_canonical(target, ec);
      const std::string key = ec ? target.string() : canon.string();
      if (!visited.insert(key).second)
        throw std::invalid_argument("config: " + where + ": include cycle via " +
                                    target.string());
      std::ifstream f(target);
      if (!f)
        throw std::invalid_argument("config: " + where + ": cannot open include " +
                                    target.string());
      std::stringstream buf;
      buf << f.rdbuf();
      parse_kv_lines(buf.str(), target.string(), out, target.parent_path(), depth + 1,
                     visited);
      continue;
    }
    const size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: " + where + ": expected 'key = value'");
    const std::string key(detail::trim(body.substr(0, eq)));
    const std::string value(detail::trim(body.substr(eq + 1)));
    if (key.empty())
      throw std::invalid_argument("config: " + where + ": empty key");
    out[key] = value;
  }
}

/// Key-value map from bare text (no includes available).
inline std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                        const std::string& origin =
                                                            "<string>") {
  std::map<std::string, std::string> kv;
  std::set<std::string> visited;
  parse_kv_lines(text, origin, kv, {}, 0, visited);
  return kv;
}

/// Key-value map from a file, following includes.
inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  std::map<std::string, std::string> kv;
  std::set<std::string> visited;
  std::error_code ec;
  std::filesystem::path canon = std::filesystem::weakly_canonical(path, ec);
  visited.insert(ec ? path : canon.string());
  parse_kv_lines(buf.str(), path, kv, std::filesystem::path(path).parent_path(), 0,
                 visited);
  return kv;
}

/// Applies a key-value map over the defaults. Every key must belong to the
/// schema; unknown keys are an error, listed by name.
inline RunConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  std::set<std::string> unused;
  for (const auto& [k, v] : kv) unused.insert(k);
  visit_fields(cfg, [&](const char* key, auto& member) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    detail::parse_value(key, it->second, member);
    unused.erase(key);
  });
  if (!unused.empty()) {
    std::string msg = "config: unknown key(s):";
    for (const auto& k : unused) msg += " '" + k + "'";
    throw std::invalid_argument(msg);
  }
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
  return config_from_kv(parse_kv_text(text));
}

inline RunConfig load_config(const std::string& path) {
  return config_from_kv(read_kv_file(path));
}

inline std::string RunConfig::serialize() const {
  std::string out;
  visit_fields(*this, [&](const char* key, const auto& member) {
    out += key;
    out += " = ";
    out += detail::format_value(member);
    out += '\n';
  });
  return out;
}

namespace detail {
inline std::string hex16(uint64_t h) {
  static const char* hex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 0; i < 16; ++i) s[15 - i] = hex[(h >> (4 * i)) & 0xf];
  return s;
}

// The seeds list names which runs a caller wants, not what a single run
// computes, so it is canonicalized away before hashing. Two configs that
// differ only in their seed lists share every per-seed run.
inline std::string hash_basis(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.seeds = {0};
  return c.serialize();
}
}  // namespace detail

/// Cache identity of a configuration alone (all seeds of a run share it),
/// as 16 hex digits. Ignores the seeds list; see detail::hash_basis.
inline std::string config_hash(const RunConfig& cfg) {
  return detail::hex16(detail::fnv1a64(detail::hash_basis(cfg)));
}

/// Cache identity of one (config, seed) run: hash of the canonical
/// serialization plus the seed, as 16 hex digits.
inline std::string run_hash(const RunConfig& cfg, int seed) {
  return detail::hex16(detail::fnv1a64(detail::hash_basis(cfg) + "seed = " +
                                       detail::format_int(seed) + "\n"));
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline std::vector<nn::ConvLayerSpec> RunConfig::conv_layers() const {
  std::vector<nn::ConvLayerSpec> layers;
  size_t pos = 0;
  while (pos <= conv.size() && !conv.empty()) {
    const size_t comma = conv.find(',', pos);
    const std::string item(detail::trim(conv.substr(pos, comma - pos)));
    int dims[3] = {0, 0, 0};
    size_t at = 0;
    for (int d = 0; d < 3; ++d) {
      const size_t x = item.find('x', at);
      const std::string part = item.substr(at, d < 2 ? x - at : std::string::npos);
      if ((d < 2 && x == std::string::npos) || part.empty())
        detail::bad_value("conv", conv, "layers like 8x3x2, comma-separated");
      detail::parse_integer("conv", part, dims[d]);
      at = x + 1;
    }
    layers.push_back({dims[0], dims[1], dims[2]});
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return layers;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("config: " + msg);
  };
  if (env != "pendulum" && env != "dotcatch") fail("env must be pendulum or dotcatch");
  if (learner != "sac" && learner != "dqn") fail("learner must be sac or dqn");
  if (learner == "sac" && env != "pendulum")
    fail("sac drives continuous actions; use env = pendulum");
  if (learner == "dqn" && env != "dotcatch")
    fail("dqn drives discrete actions; use env = dotcatch");
  core::RepMode mode = core::RepMode::StateFull;
  bool rep_known = true;
  try {
    mode = rep_mode();
  } catch (const std::exception&) {
    rep_known = false;
  }
  if (!rep_known) fail("unknown representation '" + rep + "'");
  if (frames < 1) fail("frames must be >= 1");
  if (core::uses_flow(mode) && frames < 2) fail(rep + " needs frames >= 2");
  if (mode == core::RepMode::LatentConcatPixel && frames < 2)
    fail(rep + " needs frames >= 2");
  if (steps < 1) fail("steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > steps) fail("warmup_steps must be in [0, steps]");
  if (eval_interval < 1 || eval_interval > steps)
    fail("eval_interval must be in [1, steps]");
  if (eval_episodes < 1) fail("eval_episodes must be >= 1");
  if (action_repeat < 1) fail("action_repeat must be >= 1");
  if (eval_interval % action_repeat != 0) fail("eval_interval must be a multiple of action_repeat");
  if (warmup_steps % action_repeat != 0) fail("warmup_steps must be a multiple of action_repeat");
  if (replay_capacity < batch_size) fail("replay_capacity must hold at least one batch");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (hidden.empty()) fail("hidden must list at least one layer width");
  for (int h : hidden)
    if (h < 1) fail("hidden widths must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must be in (0, 1]");
  if (seeds.empty()) fail("seeds must list at least one seed");
  if (!(pendulum_reward_threshold >= -1.0 && pendulum_reward_threshold < 1.0))
    fail("pendulum_reward_threshold must be in [-1, 1)");
  if (pendulum_torque_max <= 0.0) fail("pendulum_torque_max must be positive");
  if (pendulum_horizon <= 0) fail("pendulum_horizon must be positive");
  if (dotcatch_drift_slow <= 0.0 || dotcatch_drift_fast <= 0.0)
    fail("dot drift speeds must be positive");
  if (dotcatch_drift_fast < dotcatch_drift_slow)
    fail("dotcatch_drift_fast must be >= dotcatch_drift_slow");
  if (critic_tau <= 0.0 || critic_tau > 1.0) fail("critic_tau must be in (0, 1]");
  if (encoder_tau <= 0.0 || encoder_tau > 1.0) fail("encoder_tau must be in (0, 1]");
  if (target_update_every < 1) fail("target_update_every must be >= 1");
  if (init_temperature <= 0.0) fail("init_temperature must be positive");
  for (double v : {actor_lr, critic_lr, encoder_lr, alpha_lr, lr})
    if (!(v > 0.0)) fail("learning rates must be positive");
  if (!(alpha_beta1 >= 0.0 && alpha_beta1 < 1.0)) fail("alpha_beta1 must be in [0, 1)");
  if (target_copy_every < 1) fail("target_copy_every must be >= 1");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0) ||
      !(epsilon_end >= 0.0 && epsilon_end <= epsilon_start))
    fail("epsilon schedule needs 0 <= epsilon_end <= epsilon_start <= 1");
  if (epsilon_anneal_steps < 1) fail("epsilon_anneal_steps must be >= 1");
  if (is_pixel()) {
    if (frame_size < 16 || frame_size > 256) fail("frame_size must be in [16, 256]");
    if (canvas_size < frame_size) fail("canvas_size must be >= frame_size");
    const auto layers = conv_layers();
    if (layers.empty()) fail("pixel modes need at least one conv layer");
    for (const auto& l : layers)
      if (l.filters < 1 || l.kernel < 1 || l.stride < 1)
        fail("conv layers need positive filters/kernel/stride");
    if (latent_dim < 1) fail("latent_dim must be >= 1");
    if ((mode == core::RepMode::FlarePixel || mode == core::RepMode::LatentConcatPixel) &&
        head_width < 1)
      fail("head_width must be >= 1 for fused representations");
  } else if (augment) {
    fail("augment applies to pixel representations only");
  }
}

}  // namespace flare::harness
