#pragma once

#include <stdexcept>

#include "flare/base/rng.hpp"
#include "flare/base/tensor.hpp"

namespace flare::aug {

struct TranslateSpec {
  int in_h = 0, in_w = 0;
  int out_h = 0, out_w = 0;
  float pad_value = 0.0f;

  void validate() const {
    if (out_h < in_h || out_w < in_w)
      throw std::invalid_argument("translate: output must be at least input size");
  }
};

template <typename S>
struct Translated {
  Tensor<S> frames;  // [n, out_h, out_w]
  int off_y = 0;
  int off_x = 0;
};

namespace detail {
template <typename S>
Translated<S> place(const Tensor<S>& frames, const TranslateSpec& spec, int oy, int ox) {
  if (frames.rank() != 3 || frames.dim(1) != spec.in_h || frames.dim(2) != spec.in_w)
    throw std::invalid_argument("translate: frames do not match spec input size");
  const int n = frames.dim(0);
  Translated<S> out{
      Tensor<S>::full({n, spec.out_h, spec.out_w}, static_cast<S>(spec.pad_value)), oy, ox};
  for (int f = 0; f < n; ++f)
    for (int y = 0; y < spec.in_h; ++y) {
      const S* src = frames.data() +
                     (static_cast<int64_t>(f) * spec.in_h + y) * spec.in_w;
      S* dst = out.frames.data() +
               (static_cast<int64_t>(f) * spec.out_h + (oy + y)) * spec.out_w + ox;
      for (int x = 0; x < spec.in_w; ++x) dst[x] = src[x];
    }
  return out;
}
}  // namespace detail

/// Places the whole stack at one uniformly random integer offset inside a
/// pad-value canvas. One offset per stack — temporal differences keep their
/// meaning — while separate calls (batch items) draw independent offsets.
template <typename S>
Translated<S> random_translate(const Tensor<S>& frames, const TranslateSpec& spec,
                               Rng& rng) {
  spec.validate();
  const int oy = rng.uniform_int(0, spec.out_h - spec.in_h);
  const int ox = rng.uniform_int(0, spec.out_w - spec.in_w);
  return detail::place(frames, spec, oy, ox);
}

/// Deterministic center placement, used at evaluation time.
template <typename S>
Translated<S> center_translate(const Tensor<S>& frames, const TranslateSpec& spec) {
  spec.validate();
  return detail::place(frames, spec, (spec.out_h - spec.in_h) / 2,
                       (spec.out_w - spec.in_w) / 2);
}

/// Crop the placed region back out (the content-preservation inverse).
template <typename S>
Tensor<S> crop(const Tensor<S>& frames, int oy, int ox, int h, int w) {
  const int n = frames.dim(0);
  Tensor<S> out({n, h, w});
  for (int f = 0; f < n; ++f)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[static_cast<int64_t>(f) * h * w + y * w + x] =
            frames[(static_cast<int64_t>(f) * frames.dim(1) + oy + y) * frames.dim(2) +
                   ox + x];
  return out;
}

}  // namespace flare::aug
