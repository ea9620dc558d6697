#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "flare/nn/modules.hpp"
#include "flare/nn/tape.hpp"

namespace flare::core {

/// Input-representation variants. Pixel modes consume rendered frame
/// windows; state modes consume (windows of) proprioceptive vectors.
enum class RepMode {
  FlarePixel,        // frame-wise latents + latent flow, fused through FC+LN
  FrameStackPixel,   // frames stacked as channels into one encoder
  LatentConcatPixel, // frame-wise latents concatenated, no flow, same head
  PixelFlow,         // pixel differences appended as channels, early fusion
  StateFull,         // full observation including velocities
  StatePositionOnly, // positions only, single step
  StateStack,        // last four positions concatenated
  StateRecurrent,    // recurrent cell over the last four positions
  StateFlare,        // newest position + three lagged differences, fed raw
};

inline const char* to_string(RepMode m) {
  switch (m) {
    case RepMode::FlarePixel: return "flare_pixel";
    case RepMode::FrameStackPixel: return "frame_stack_pixel";
    case RepMode::LatentConcatPixel: return "latent_concat_pixel";
    case RepMode::PixelFlow: return "pixel_flow";
    case RepMode::StateFull: return "state_full";
    case RepMode::StatePositionOnly: return "state_position_only";
    case RepMode::StateStack: return "state_stack";
    case RepMode::StateRecurrent: return "state_recurrent";
    case RepMode::StateFlare: return "state_flare";
  }
  throw std::logic_error("unknown representation mode");
}

inline RepMode parse_rep_mode(const std::string& s) {
  for (RepMode m : {RepMode::FlarePixel, RepMode::FrameStackPixel,
                    RepMode::LatentConcatPixel, RepMode::PixelFlow, RepMode::StateFull,
                    RepMode::StatePositionOnly, RepMode::StateStack,
                    RepMode::StateRecurrent, RepMode::StateFlare})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown representation mode: " + s);
}

inline bool is_pixel_mode(RepMode m) {
  return m == RepMode::FlarePixel || m == RepMode::FrameStackPixel ||
         m == RepMode::LatentConcatPixel || m == RepMode::PixelFlow;
}

inline bool uses_flow(RepMode m) {
  return m == RepMode::FlarePixel || m == RepMode::PixelFlow;
}

// ---------------------------------------------------------------------------
// Frame-wise encoding and latent flow
// ---------------------------------------------------------------------------

/// Runs the shared encoder over each frame of a [B, n, H, W] window and
/// returns the n latent variables oldest-to-newest. Channels of a window are
/// contiguous, so each frame is a column slice of the flattened window.
template <typename S>
std::vector<typename nn::Tape<S>::Var> encode_frames(nn::Tape<S>& t,
                                                 const nn::ConvEncoder<S>& encoder,
                                                 const nn::NamedTensors<S>& params,
                                                 typename nn::Tape<S>::Var window) {
  const std::vector<int> shape = t.shape(window);  // copy: tape growth may reallocate
  if (shape.size() != 4)
    throw std::invalid_argument("encode_frames: expected [B, n, H, W] window");
  const int batch = shape[0], n = shape[1], h = shape[2], w = shape[3];
  if (h != encoder.in_h || w != encoder.in_w || encoder.in_ch != 1)
    throw std::invalid_argument("encode_frames: window does not fit the frame encoder");
  auto flat = t.reshape(window, {batch, n * h * w});
  std::vector<typename nn::Tape<S>::Var> latents;
  latents.reserve(n);
  for (int j = 0; j < n; ++j) {
    auto frame = t.reshape(t.slice_cols(flat, j * h * w, h * w), {batch, 1, h, w});
    latents.push_back(encoder.forward(t, params, frame));
  }
  return latents;
}

/// Gradient-free counterpart used when acting and for target networks.
template <typename S>
std::vector<Tensor<S>> encode_frames_raw(const nn::ConvEncoder<S>& encoder,
                                         const nn::NamedTensors<S>& params,
                                         const Tensor<S>& window) {
  if (window.rank() != 4)
    throw std::invalid_argument("encode_frames: expected [B, n, H, W] window");
  const int batch = window.dim(0), n = window.dim(1), h = window.dim(2),
            w = window.dim(3);
  std::vector<Tensor<S>> latents;
  latents.reserve(n);
  const int64_t frame_elems = static_cast<int64_t>(h) * w;
  for (int j = 0; j < n; ++j) {
    Tensor<S> frame({batch, 1, h, w});
    for (int b = 0; b < batch; ++b) {
      const S* src = window.data() + (static_cast<int64_t>(b) * n + j) * frame_elems;
      S* dst = frame.data() + static_cast<int64_t>(b) * frame_elems;
      for (int64_t i = 0; i < frame_elems; ++i) dst[i] = src[i];
    }
    latents.push_back(encoder.raw_forward(params, frame));
  }
  return latents;
}

/// Consecutive latent differences, newest last. The earlier latent of each
/// pair is detached by default, so motion gradients reach the encoder only
/// through the newer frame's application.
template <typename S>
std::vector<typename nn::Tape<S>::Var> latent_flow(nn::Tape<S>& t,
                                               const std::vector<typename nn::Tape<S>::Var>& z,
                                               bool detach_previous = true) {
  if (z.size() < 2)
    throw std::invalid_argument("latent_flow: need at least two latents");
  std::vector<typename nn::Tape<S>::Var> flows;
  flows.reserve(z.size() - 1);
  for (size_t j = 1; j < z.size(); ++j)
    flows.push_back(t.sub(z[j], detach_previous ? t.stop_grad(z[j - 1]) : z[j - 1]));
  return flows;
}

template <typename S>
std::vector<Tensor<S>> latent_flow_raw(const std::vector<Tensor<S>>& z) {
  if (z.size() < 2)
    throw std::invalid_argument("latent_flow: need at least two latents");
  std::vector<Tensor<S>> flows;
  for (size_t j = 1; j < z.size(); ++j) {
    Tensor<S> d = z[j];
    for (int64_t i = 0; i < d.numel(); ++i) d[i] -= z[j - 1][i];
    flows.push_back(std::move(d));
  }
  return flows;
}

// ---------------------------------------------------------------------------
// Fusion head: FC then layer normalization, no rectification
// ---------------------------------------------------------------------------

template <typename S>
struct FuseHead {
  std::string prefix;
  int in_dim = 0;
  int width = 1024;

  std::string fcw() const { return prefix + ".fc.w"; }
  std::string fcb() const { return prefix + ".fc.b"; }
  std::string lng() const { return prefix + ".ln.gain"; }
  std::string lnb() const { return prefix + ".ln.bias"; }

  void init(nn::NamedTensors<S>& params, Rng& rng) const {
    nn::init_linear(params, prefix + ".fc", width, in_dim, rng);
    params.insert(lng(), Tensor<S>::full({width}, S{1}));
    params.insert(lnb(), Tensor<S>({width}));
  }

  typename nn::Tape<S>::Var forward(nn::Tape<S>& t, const nn::NamedTensors<S>& params,
                                typename nn::Tape<S>::Var x) const {
    auto y = t.linear(x, t.param(fcw(), params.at(fcw())), t.param(fcb(), params.at(fcb())));
    return t.layer_norm(y, t.param(lng(), params.at(lng())),
                        t.param(lnb(), params.at(lnb())));
  }

  Tensor<S> raw_forward(const nn::NamedTensors<S>& params, const Tensor<S>& x) const {
    return nn::raw_layer_norm(nn::raw_linear(x, params.at(fcw()), params.at(fcb())),
                              params.at(lng()), params.at(lnb()));
  }
};

/// Assembles the fusion input and applies the head. With flows present, the
/// oldest latent contributes only through its flow (n−1 latents + n−1 flows,
/// each run oldest-to-newest). With flows omitted — the latent-concatenation
/// ablation — every latent enters directly.
template <typename S>
typename nn::Tape<S>::Var fuse(nn::Tape<S>& t, const nn::NamedTensors<S>& params,
                           const FuseHead<S>& head,
                           const std::vector<typename nn::Tape<S>::Var>& latents,
                           const std::vector<typename nn::Tape<S>::Var>& flows) {
  if (!flows.empty() && flows.size() + 1 != latents.size())
    throw std::invalid_argument("fuse: need one flow per consecutive latent pair");
  std::vector<typename nn::Tape<S>::Var> parts;
  const size_t first = flows.empty() ? 0 : 1;
  for (size_t j = first; j < latents.size(); ++j) parts.push_back(latents[j]);
  for (const auto& f : flows) parts.push_back(f);
  return head.forward(t, params, t.concat_cols(parts));
}

template <typename S>
Tensor<S> fuse_raw(const nn::NamedTensors<S>& params, const FuseHead<S>& head,
                   const std::vector<Tensor<S>>& latents,
                   const std::vector<Tensor<S>>& flows) {
  if (!flows.empty() && flows.size() + 1 != latents.size())
    throw std::invalid_argument("fuse: need one flow per consecutive latent pair");
  const int batch = latents[0].dim(0);
  const size_t first = flows.empty() ? 0 : 1;
  int cols = 0;
  for (size_t j = first; j < latents.size(); ++j) cols += latents[j].dim(1);
  for (const auto& f : flows) cols += f.dim(1);
  Tensor<S> fused({batch, cols});
  int at = 0;
  auto paste = [&](const Tensor<S>& part) {
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < part.dim(1); ++c) fused.at(b, at + c) = part.at(b, c);
    at += part.dim(1);
  };
  for (size_t j = first; j < latents.size(); ++j) paste(latents[j]);
  for (const auto& f : flows) paste(f);
  return head.raw_forward(params, fused);
}

// ---------------------------------------------------------------------------
// State-mode features
// ---------------------------------------------------------------------------

/// Newest position followed by the three lagged differences, newest first:
/// [p_t, p_t−p_{t−1}, p_{t−1}−p_{t−2}, p_{t−2}−p_{t−3}]. Input [B, 4, D]
/// oldest-to-newest; output [B, 4·D]. Fed to the actor/critic without any
/// learned head.
template <typename S>
Tensor<S> state_flare_features(const Tensor<S>& window) {
  if (window.rank() != 3 || window.dim(1) != 4)
    throw std::invalid_argument("state features: expected a history of 4 positions");
  const int batch = window.dim(0), d = window.dim(2);
  Tensor<S> out({batch, 4 * d});
  for (int b = 0; b < batch; ++b) {
    const S* h = window.data() + static_cast<int64_t>(b) * 4 * d;
    S* o = out.data() + static_cast<int64_t>(b) * 4 * d;
    for (int c = 0; c < d; ++c) o[c] = h[3 * d + c];
    for (int lag = 0; lag < 3; ++lag)
      for (int c = 0; c < d; ++c)
        o[(lag + 1) * d + c] = h[(3 - lag) * d + c] - h[(2 - lag) * d + c];
  }
  return out;
}

/// Convenience for a scalar history (one position dimension).
template <typename S>
std::vector<S> state_flare_features(const std::vector<S>& history) {
  Tensor<S> w({1, static_cast<int>(history.size()), 1}, history);
  Tensor<S> f = state_flare_features(w);
  return std::vector<S>(f.data(), f.data() + f.numel());
}

// ---------------------------------------------------------------------------
// Pixel-flow preprocessing (early fusion of pixel differences)
// ---------------------------------------------------------------------------

/// Appends per-pixel consecutive differences as extra channels:
/// [B, n, H, W] -> [B, 2n−1, H, W] with frames first, then differences,
/// both oldest-to-newest. The result feeds the frame-stacking path.
template <typename S>
Tensor<S> pixel_flow_preprocess(const Tensor<S>& window) {
  if (window.rank() != 4)
    throw std::invalid_argument("pixel flow: expected [B, n, H, W] window");
  const int batch = window.dim(0), n = window.dim(1), h = window.dim(2),
            w = window.dim(3);
  if (n < 2) throw std::invalid_argument("pixel flow: need at least two frames");
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor<S> out({batch, 2 * n - 1, h, w});
  for (int b = 0; b < batch; ++b) {
    const S* src = window.data() + static_cast<int64_t>(b) * n * plane;
    S* dst = out.data() + static_cast<int64_t>(b) * (2 * n - 1) * plane;
    for (int64_t i = 0; i < n * plane; ++i) dst[i] = src[i];
    for (int j = 1; j < n; ++j) {
      S* d = dst + (n + j - 1) * plane;
      const S* cur = src + static_cast<int64_t>(j) * plane;
      const S* prev = src + static_cast<int64_t>(j - 1) * plane;
      for (int64_t i = 0; i < plane; ++i) d[i] = cur[i] - prev[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispatching facade
// ---------------------------------------------------------------------------

/// Everything the learner needs to turn an observation window into the
/// feature vector its actor/critic consume, on tape (training) or raw
/// (acting, target networks). Owns whichever submodules the mode requires.
template <typename S>
struct Representation {
  RepMode mode = RepMode::StateFull;
  int n = 3;        // encoded frames for pixel modes
  int pos_dim = 0;  // state modes: position vector width
  int full_dim = 0; // StateFull observation width
  int latent_dim = 64;
  int head_width = 1024;

  nn::ConvEncoder<S> encoder;  // pixel modes
  FuseHead<S> head;            // FlarePixel, LatentConcatPixel
  nn::LstmCell<S> rnn;         // StateRecurrent

  /// frame_h/frame_w: encoder input size (after augmentation padding).
  static Representation make(RepMode mode, int n, int pos_dim, int full_dim, int frame_h,
                             int frame_w, std::vector<nn::ConvLayerSpec> conv,
                             int latent_dim, int head_width,
                             const std::string& prefix = "encoder") {
    Representation r;
    r.mode = mode;
    r.n = n;
    r.pos_dim = pos_dim;
    r.full_dim = full_dim;
    r.latent_dim = latent_dim;
    r.head_width = head_width;
    if (n < 1) throw std::invalid_argument("representation: frame count must be >= 1");
    if (uses_flow(mode) && n < 2)
      throw std::invalid_argument("representation: flow modes need at least 2 frames");
    if (is_pixel_mode(mode)) {
      r.encoder.prefix = prefix;
      r.encoder.in_ch = r.encoder_channels();
      r.encoder.in_h = frame_h;
      r.encoder.in_w = frame_w;
      r.encoder.layers = std::move(conv);
      r.encoder.latent_dim = latent_dim;
      if (mode == RepMode::FlarePixel || mode == RepMode::LatentConcatPixel) {
        r.head.prefix = prefix + ".head";
        r.head.in_dim = mode == RepMode::FlarePixel ? 2 * (n - 1) * latent_dim
                                                    : n * latent_dim;
        r.head.width = head_width;
      }
    } else if (mode == RepMode::StateRecurrent) {
      r.rnn.prefix = prefix + ".rnn";
      r.rnn.in_dim = pos_dim;
      r.rnn.hidden = 3 * pos_dim;  // matches the width of the difference features
    }
    return r;
  }

  /// Frames the replay window must carry for this mode.
  int window() const {
    switch (mode) {
      case RepMode::StateFull:
      case RepMode::StatePositionOnly: return 1;
      case RepMode::StateStack:
      case RepMode::StateRecurrent:
      case RepMode::StateFlare: return 4;
      default: return n;
    }
  }

  /// Channel count the conv encoder sees (pixel modes).
  int encoder_channels() const {
    switch (mode) {
      case RepMode::FlarePixel:
      case RepMode::LatentConcatPixel: return 1;
      case RepMode::FrameStackPixel: return n;
      case RepMode::PixelFlow: return 2 * n - 1;
      default: return 0;
    }
  }

  /// Width of the feature vector handed to the actor/critic.
  int feature_dim() const {
    switch (mode) {
      case RepMode::FlarePixel:
      case RepMode::LatentConcatPixel: return head_width;
      case RepMode::FrameStackPixel:
      case RepMode::PixelFlow: return latent_dim;
      case RepMode::StateFull: return full_dim;
      case RepMode::StatePositionOnly: return pos_dim;
      case RepMode::StateStack: return 4 * pos_dim;
      case RepMode::StateRecurrent: return 3 * pos_dim;
      case RepMode::StateFlare: return 4 * pos_dim;
    }
    throw std::logic_error("unknown representation mode");
  }

  bool has_params() const {
    return is_pixel_mode(mode) || mode == RepMode::StateRecurrent;
  }

  void init(nn::NamedTensors<S>& params, Rng& rng) const {
    if (is_pixel_mode(mode)) {
      encoder.init(params, rng);
      if (mode == RepMode::FlarePixel || mode == RepMode::LatentConcatPixel)
        head.init(params, rng);
    } else if (mode == RepMode::StateRecurrent) {
      rnn.init(params, rng);
    }
  }

  /// Raw-side preprocessing applied to the sampled window before it becomes
  /// a tape constant: pixel-flow difference channels, identity elsewhere.
  Tensor<S> preprocess(const Tensor<S>& window) const {
    return mode == RepMode::PixelFlow ? pixel_flow_preprocess(window) : window;
  }

  /// Preprocessed window -> feature vector on tape. Pixel windows arrive as
  /// [B, C, H, W] (C = encoder_channels()), state windows as [B, win, D].
  typename nn::Tape<S>::Var features(nn::Tape<S>& t, const nn::NamedTensors<S>& params,
                                 typename nn::Tape<S>::Var x, bool detach_flow = true) const {
    const std::vector<int> shape = t.shape(x);
    switch (mode) {
      case RepMode::FlarePixel: {
        auto z = encode_frames(t, encoder, params, x);
        return fuse(t, params, head, z, latent_flow(t, z, detach_flow));
      }
      case RepMode::LatentConcatPixel: {
        auto z = encode_frames(t, encoder, params, x);
        return fuse(t, params, head, z, {});
      }
      case RepMode::FrameStackPixel:
      case RepMode::PixelFlow:
        return encoder.forward(t, params, x);
      case RepMode::StateFull:
      case RepMode::StatePositionOnly:
        check_state_window(shape, 1);
        return t.reshape(x, {shape[0], shape[2]});
      case RepMode::StateStack:
        check_state_window(shape, 4);
        return t.reshape(x, {shape[0], 4 * shape[2]});
      case RepMode::StateFlare: {
        check_state_window(shape, 4);
        const int d = shape[2];
        auto flat = t.reshape(x, {shape[0], 4 * d});
        auto pos = [&](int j) { return t.slice_cols(flat, j * d, d); };
        std::vector<typename nn::Tape<S>::Var> parts{pos(3)};
        for (int lag = 0; lag < 3; ++lag)
          parts.push_back(t.sub(pos(3 - lag), pos(2 - lag)));
        return t.concat_cols(parts);
      }
      case RepMode::StateRecurrent: {
        check_state_window(shape, 4);
        const int d = shape[2];
        auto flat = t.reshape(x, {shape[0], 4 * d});
        typename nn::LstmCell<S>::TapeState state{
            t.constant(Tensor<S>({shape[0], rnn.hidden})),
            t.constant(Tensor<S>({shape[0], rnn.hidden}))};
        for (int j = 0; j < 4; ++j)
          state = rnn.step(t, params, t.slice_cols(flat, j * d, d), state);
        return state.h;
      }
    }
    throw std::logic_error("unknown representation mode");
  }

  /// Gradient-free twin of features(), same input conventions.
  Tensor<S> raw_features(const nn::NamedTensors<S>& params, const Tensor<S>& x) const {
    switch (mode) {
      case RepMode::FlarePixel: {
        auto z = encode_frames_raw(encoder, params, x);
        return fuse_raw(params, head, z, latent_flow_raw(z));
      }
      case RepMode::LatentConcatPixel: {
        auto z = encode_frames_raw(encoder, params, x);
        return fuse_raw(params, head, z, {});
      }
      case RepMode::FrameStackPixel:
      case RepMode::PixelFlow:
        return encoder.raw_forward(params, x);
      case RepMode::StateFull:
      case RepMode::StatePositionOnly:
        check_state_window(x.shape(), 1);
        return x.reshaped({x.dim(0), x.dim(2)});
      case RepMode::StateStack:
        check_state_window(x.shape(), 4);
        return x.reshaped({x.dim(0), 4 * x.dim(2)});
      case RepMode::StateFlare:
        return state_flare_features(x);
      case RepMode::StateRecurrent: {
        check_state_window(x.shape(), 4);
        const int batch = x.dim(0), d = x.dim(2);
        nn::RecurrentState<S> state = rnn.zero_state(batch);
        for (int j = 0; j < 4; ++j) {
          Tensor<S> step({batch, d});
          for (int b = 0; b < batch; ++b)
            for (int c = 0; c < d; ++c) step.at(b, c) = x[(b * 4 + j) * d + c];
          state = rnn.raw_step(params, step, state);
        }
        return state.h;
      }
    }
    throw std::logic_error("unknown representation mode");
  }

 private:
  static void check_state_window(const std::vector<int>& shape, int want) {
    if (shape.size() != 3 || shape[1] != want)
      throw std::invalid_argument("state features: expected a history of " +
                                  std::to_string(want) + " vectors, got " +
                                  shape_string(shape));
  }
};

// ---------------------------------------------------------------------------
// Encoder linearization diagnostic
// ---------------------------------------------------------------------------

struct LinearizationReport {
  double finite_diff_norm = 0;  // ‖z(o+Δ) − z(o)‖
  double jvp_norm = 0;          // ‖J·Δ‖
  double rel_err = 0;           // ‖(z(o+Δ) − z(o)) − J·Δ‖ / max(‖z(o+Δ) − z(o)‖, 1e-12)
  bool ok = false;
};

/// Compares the latent change under a frame perturbation against the
/// encoder's Jacobian-vector product — how linearly the encoder responds to
/// small frame motion. Diagnostic only.
template <typename S>
LinearizationReport linearization_check(const nn::ConvEncoder<S>& encoder,
                                        const nn::NamedTensors<S>& params,
                                        const Tensor<S>& frame, const Tensor<S>& delta,
                                        double tolerance) {
  Tensor<S> moved = frame;
  for (int64_t i = 0; i < moved.numel(); ++i) moved[i] += delta[i];
  const Tensor<S> z0 = encoder.raw_forward(params, frame);
  const Tensor<S> z1 = encoder.raw_forward(params, moved);
  const auto [zp, jv] = encoder.jvp(params, frame, delta);
  LinearizationReport rep;
  double err2 = 0;
  for (int64_t i = 0; i < z0.numel(); ++i) {
    const double fd = static_cast<double>(z1[i]) - static_cast<double>(z0[i]);
    const double d = fd - static_cast<double>(jv[i]);
    rep.finite_diff_norm += fd * fd;
    rep.jvp_norm += static_cast<double>(jv[i]) * static_cast<double>(jv[i]);
    err2 += d * d;
  }
  rep.finite_diff_norm = std::sqrt(rep.finite_diff_norm);
  rep.jvp_norm = std::sqrt(rep.jvp_norm);
  rep.rel_err = std::sqrt(err2) / std::max(rep.finite_diff_norm, 1e-12);
  rep.ok = rep.rel_err <= tolerance;
  return rep;
}

}  // namespace flare::core
