#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/base/rng.hpp"
#include "flare/base/tensor.hpp"

namespace flare::replay {

/// A batch of transition windows. Observation windows hold the newest
/// n_frames observations oldest-to-newest along the frame axis, so pixel
/// batches come out as [B, n, H, W] and state batches as [B, n, D].
struct Sampled {
  Tensor<float> obs;
  Tensor<float> next_obs;
  Tensor<float> actions;           // [B, action_dim]; empty for discrete
  std::vector<int> actions_disc;   // [B]; empty for continuous
  std::vector<float> rewards;
  std::vector<uint8_t> done;
  int n_frames = 0;
};

/// Transition store that keeps each observation exactly once. Every time
/// step is one row; a row carries the action/reward taken from it, and the
/// following row of the same episode is its successor observation. Frame
/// windows are assembled at sampling time, so k-frame stacking costs O(T)
/// stored frames rather than O(kT).
class Buffer {
 public:
  explicit Buffer(int64_t capacity_transitions) : capacity_(capacity_transitions) {
    if (capacity_ < 1) throw std::invalid_argument("replay: capacity must be positive");
  }

  /// Record one environment transition. `obs` is the observation the action
  /// was computed from, `next_obs` the observation after stepping.
  void push(const Tensor<float>& obs, const std::vector<float>& action, int action_disc,
            float reward, const Tensor<float>& next_obs, bool done) {
    if (rows_.empty() || rows_.back().episode != episode_ ||
        !rows_.back().expects_successor)
      append_row(obs);
    Row& at = rows_[rows_.size() - 1];
    at.action = action;
    at.action_disc = action_disc;
    at.reward = reward;
    at.done = done;
    at.has_action = true;
    at.expects_successor = true;
    ++transitions_;
    append_row(next_obs);
    rows_.back().expects_successor = !done;
    if (done) ++episode_;
    while (transitions_ > capacity_) evict_front();
  }

  void push(const Tensor<float>& obs, const std::vector<float>& action, float reward,
            const Tensor<float>& next_obs, bool done) {
    push(obs, action, -1, reward, next_obs, done);
  }
  void push(const Tensor<float>& obs, int action, float reward,
            const Tensor<float>& next_obs, bool done) {
    push(obs, {}, action, reward, next_obs, done);
  }

  /// Call when an episode is cut off externally (reset without a terminal
  /// step), so later pushes do not chain onto the stale tail row.
  void end_episode() {
    if (!rows_.empty() && rows_.back().expects_successor) {
      rows_.back().expects_successor = false;
      ++episode_;
    }
  }

  int64_t size() const { return transitions_; }
  int64_t capacity() const { return capacity_; }
  int64_t stored_rows() const { return static_cast<int64_t>(rows_.size()); }

  int64_t stored_obs_bytes() const {
    int64_t total = 0;
    for (const Row& r : rows_) total += r.obs.numel() * static_cast<int64_t>(sizeof(float));
    return total;
  }

  /// Uniform-with-replacement sample of `batch` transitions, each carrying
  /// an n_frames observation window. Windows never cross an episode start:
  /// positions before the first stored frame of the episode repeat it.
  Sampled sample(int batch, int n_frames, Rng& rng) const {
    if (transitions_ < 1)
      throw std::runtime_error(
          "replay: no complete transitions stored yet; run more warm-up steps "
          "before sampling");
    Sampled out;
    out.n_frames = n_frames;
    std::vector<int> wshape{batch, n_frames};
    for (int d : rows_[0].obs.shape()) wshape.push_back(d);
    out.obs = Tensor<float>(wshape);
    out.next_obs = Tensor<float>(wshape);
    out.rewards.resize(batch);
    out.done.resize(batch);
    const bool discrete = rows_[first_transition_index()].action.empty();
    if (discrete)
      out.actions_disc.resize(batch);
    else
      out.actions = Tensor<float>(
          {batch, static_cast<int>(rows_[first_transition_index()].action.size())});
    const int64_t frame_elems = rows_[0].obs.numel();
    for (int b = 0; b < batch; ++b) {
      int64_t p;
      do {
        p = rng.uniform_int(0, static_cast<int64_t>(rows_.size()) - 1);
      } while (!rows_[p].has_action);
      const Row& r = rows_[p];
      out.rewards[b] = r.reward;
      out.done[b] = r.done ? 1 : 0;
      if (discrete)
        out.actions_disc[b] = r.action_disc;
      else
        for (size_t a = 0; a < r.action.size(); ++a)
          out.actions[b * static_cast<int64_t>(r.action.size()) + a] = r.action[a];
      fill_window(p, n_frames, out.obs.data() + b * n_frames * frame_elems);
      fill_window(p + 1, n_frames, out.next_obs.data() + b * n_frames * frame_elems);
    }
    return out;
  }

  /// Window ending at row `p`, flattened frames oldest-to-newest. Positions
  /// before the episode's first stored frame repeat that frame.
  void fill_window(int64_t p, int n_frames, float* dst) const {
    const int64_t frame_elems = rows_[0].obs.numel();
    const int64_t lo = episode_start(p);
    for (int j = 0; j < n_frames; ++j) {
      int64_t q = p - (n_frames - 1 - j);
      if (q < lo) q = lo;
      const float* src = rows_[q].obs.data();
      float* slot = dst + static_cast<int64_t>(j) * frame_elems;
      for (int64_t e = 0; e < frame_elems; ++e) slot[e] = src[e];
    }
  }

  // --- snapshot -----------------------------------------------------------

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("replay: cannot open " + path + " for writing");
    f.write("flarebuf", 8);
    write_i64(f, capacity_);
    write_i64(f, transitions_);
    write_i64(f, episode_);
    write_i64(f, static_cast<int64_t>(rows_.size()));
    for (const Row& r : rows_) {
      write_i64(f, r.episode);
      const uint8_t flags = static_cast<uint8_t>((r.has_action ? 1 : 0) |
                                                 (r.done ? 2 : 0) |
                                                 (r.expects_successor ? 4 : 0));
      f.write(reinterpret_cast<const char*>(&flags), 1);
      write_i64(f, static_cast<int64_t>(r.obs.rank()));
      for (int d = 0; d < r.obs.rank(); ++d) write_i64(f, r.obs.dim(d));
      f.write(reinterpret_cast<const char*>(r.obs.data()),
              static_cast<std::streamsize>(r.obs.numel() * sizeof(float)));
      write_i64(f, static_cast<int64_t>(r.action.size()));
      f.write(reinterpret_cast<const char*>(r.action.data()),
              static_cast<std::streamsize>(r.action.size() * sizeof(float)));
      write_i64(f, r.action_disc);
      f.write(reinterpret_cast<const char*>(&r.reward), sizeof(float));
    }
    if (!f) throw std::runtime_error("replay: short write to " + path);
  }

  static Buffer load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("replay: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "flarebuf")
      throw std::runtime_error("replay: " + path + " is not a buffer snapshot");
    Buffer b(read_i64(f));
    b.transitions_ = read_i64(f);
    b.episode_ = read_i64(f);
    const int64_t nrows = read_i64(f);
    for (int64_t i = 0; i < nrows; ++i) {
      Row r;
      r.episode = read_i64(f);
      uint8_t flags = 0;
      f.read(reinterpret_cast<char*>(&flags), 1);
      r.has_action = flags & 1;
      r.done = flags & 2;
      r.expects_successor = flags & 4;
      const int64_t rank = read_i64(f);
      std::vector<int> shape(rank);
      for (int64_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_i64(f));
      r.obs = Tensor<float>(shape);
      f.read(reinterpret_cast<char*>(r.obs.data()),
             static_cast<std::streamsize>(r.obs.numel() * sizeof(float)));
      const int64_t alen = read_i64(f);
      r.action.resize(alen);
      f.read(reinterpret_cast<char*>(r.action.data()),
             static_cast<std::streamsize>(alen * sizeof(float)));
      r.action_disc = static_cast<int>(read_i64(f));
      f.read(reinterpret_cast<char*>(&r.reward), sizeof(float));
      if (!f) throw std::runtime_error("replay: truncated snapshot " + path);
      b.rows_.push_back(std::move(r));
    }
    return b;
  }

 private:
  struct Row {
    Tensor<float> obs;
    std::vector<float> action;
    int action_disc = -1;
    float reward = 0.0f;
    int64_t episode = 0;
    bool has_action = false;
    bool done = false;
    // True while this row is the live tail of its episode, i.e. the next
    // push should attach its action here instead of appending a new row.
    bool expects_successor = false;
  };

  void append_row(const Tensor<float>& obs) {
    Row r;
    r.obs = obs;
    r.episode = episode_;
    rows_.push_back(std::move(r));
  }

  void evict_front() {
    if (rows_.front().has_action) --transitions_;
    rows_.pop_front();
    // An action-less row at the front is an orphaned episode tail (its whole
    // episode was evicted before it); nothing can reference it any more.
    while (rows_.size() > 1 && !rows_.front().has_action) rows_.pop_front();
  }

  int64_t first_transition_index() const {
    for (size_t i = 0; i < rows_.size(); ++i)
      if (rows_[i].has_action) return static_cast<int64_t>(i);
    return 0;
  }

  /// Index of the first stored row belonging to row p's episode.
  int64_t episode_start(int64_t p) const {
    const int64_t ep = rows_[p].episode;
    int64_t lo = p;
    while (lo > 0 && rows_[lo - 1].episode == ep) --lo;
    return lo;
  }

  static void write_i64(std::ofstream& f, int64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static int64_t read_i64(std::ifstream& f) {
    int64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }

  std::deque<Row> rows_;
  int64_t capacity_ = 0;
  int64_t transitions_ = 0;
  int64_t episode_ = 0;
};

}  // namespace flare::replay
