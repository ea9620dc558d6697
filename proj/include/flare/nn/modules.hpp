#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flare/base/rng.hpp"
#include "flare/base/tensor.hpp"
#include "flare/nn/gemm.hpp"
#include "flare/nn/params.hpp"
#include "flare/nn/tape.hpp"

namespace flare::nn {

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Orthogonal init: Gram-Schmidt over the rows (or columns, whichever is the
/// smaller count) of a Gaussian matrix. Deterministic given the RNG state.
template <typename S>
Tensor<S> orthogonal(int rows, int cols, Rng& rng) {
  const bool by_rows = rows <= cols;
  const int m = by_rows ? rows : cols;  // vectors to orthonormalize
  const int d = by_rows ? cols : rows;  // their dimension
  std::vector<std::vector<double>> v(m, std::vector<double>(d));
  for (int i = 0; i < m; ++i) {
    bool ok = false;
    while (!ok) {
      for (int j = 0; j < d; ++j) v[i][j] = rng.normal();
      for (int p = 0; p < i; ++p) {
        double dot = 0;
        for (int j = 0; j < d; ++j) dot += v[i][j] * v[p][j];
        for (int j = 0; j < d; ++j) v[i][j] -= dot * v[p][j];
      }
      double norm = 0;
      for (int j = 0; j < d; ++j) norm += v[i][j] * v[i][j];
      norm = std::sqrt(norm);
      if (norm > 1e-8) {  // retry on (astronomically unlikely) degeneracy
        for (int j = 0; j < d; ++j) v[i][j] /= norm;
        ok = true;
      }
    }
  }
  Tensor<S> w({rows, cols});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      w.at(r, c) = static_cast<S>(by_rows ? v[r][c] : v[c][r]);
  return w;
}

/// Creates `<prefix>.w` (orthogonal, [out,in]) and `<prefix>.b` (zeros, [out]).
template <typename S>
void init_linear(NamedTensors<S>& params, const std::string& prefix, int out, int in,
                 Rng& rng) {
  params.insert(prefix + ".w", orthogonal<S>(out, in, rng));
  params.insert(prefix + ".b", Tensor<S>({out}));
}

// ---------------------------------------------------------------------------
// Gradient-free building blocks (target networks, action selection, eval)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> raw_linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  const int rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) throw std::invalid_argument("raw_linear shape mismatch");
  Tensor<S> y({rows, out_dim});
  gemm_nt(x.data(), w.data(), y.data(), rows, in, out_dim, false);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < out_dim; ++c) y.at(r, c) += b[c];
  return y;
}

template <typename S>
void raw_relu_inplace(Tensor<S>& x) {
  for (int64_t i = 0; i < x.numel(); ++i)
    if (x[i] < S{0}) x[i] = S{0};
}

/// Per-row normalization matching Tape::layer_norm's forward pass.
template <typename S>
Tensor<S> raw_layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                         S eps = S{1e-5}) {
  const int rows = x.dim(0), cols = x.dim(1);
  if (gain.numel() != cols || bias.numel() != cols)
    throw std::invalid_argument("raw_layer_norm shape mismatch");
  Tensor<S> y({rows, cols});
  for (int r = 0; r < rows; ++r) {
    S mean{0};
    for (int c = 0; c < cols; ++c) mean += x.at(r, c);
    mean /= static_cast<S>(cols);
    S var{0};
    for (int c = 0; c < cols; ++c) {
      const S d = x.at(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<S>(cols);
    const S inv = S{1} / std::sqrt(var + eps);
    for (int c = 0; c < cols; ++c)
      y.at(r, c) = (x.at(r, c) - mean) * inv * gain[c] + bias[c];
  }
  return y;
}

// ---------------------------------------------------------------------------
// Multilayer perceptron: ReLU hidden layers, linear output
// ---------------------------------------------------------------------------

template <typename S>
struct Mlp {
  std::string prefix;
  std::vector<int> dims;  // [in, hidden..., out]

  int layer_count() const { return static_cast<int>(dims.size()) - 1; }
  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }

  std::string wname(int layer) const { return prefix + ".l" + std::to_string(layer) + ".w"; }
  std::string bname(int layer) const { return prefix + ".l" + std::to_string(layer) + ".b"; }

  void init(NamedTensors<S>& params, Rng& rng) const {
    for (int l = 0; l < layer_count(); ++l)
      init_linear(params, prefix + ".l" + std::to_string(l), dims[l + 1], dims[l], rng);
  }

  typename Tape<S>::Var forward(Tape<S>& t, const NamedTensors<S>& params,
                                typename Tape<S>::Var x) const {
    check_input(t.shape(x)[1]);
    for (int l = 0; l < layer_count(); ++l) {
      x = t.linear(x, t.param(wname(l), params.at(wname(l))),
                   t.param(bname(l), params.at(bname(l))));
      if (l + 1 < layer_count()) x = t.relu(x);
    }
    return x;
  }

  Tensor<S> raw_forward(const NamedTensors<S>& params, Tensor<S> x) const {
    check_input(x.dim(1));
    for (int l = 0; l < layer_count(); ++l) {
      x = raw_linear(x, params.at(wname(l)), params.at(bname(l)));
      if (l + 1 < layer_count()) raw_relu_inplace(x);
    }
    return x;
  }

 private:
  void check_input(int got) const {
    if (got != in_dim())
      throw std::invalid_argument(prefix + ": expected input dim " +
                                  std::to_string(in_dim()) + ", got " +
                                  std::to_string(got));
  }
};

// ---------------------------------------------------------------------------
// Convolutional encoder: conv+ReLU stack, flatten, linear map to the latent
// ---------------------------------------------------------------------------

struct ConvLayerSpec {
  int filters;
  int kernel;
  int stride;
};

template <typename S>
struct ConvEncoder {
  std::string prefix;
  int in_ch = 1, in_h = 0, in_w = 0;
  std::vector<ConvLayerSpec> layers;
  int latent_dim = 64;

  std::string wname(int l) const { return prefix + ".conv" + std::to_string(l) + ".w"; }
  std::string bname(int l) const { return prefix + ".conv" + std::to_string(l) + ".b"; }
  std::string fcw() const { return prefix + ".fc.w"; }
  std::string fcb() const { return prefix + ".fc.b"; }

  /// Spatial size after layer l (l = layers.size() gives the final map).
  std::pair<int, int> map_size(size_t upto) const {
    int h = in_h, w = in_w;
    for (size_t l = 0; l < upto; ++l) {
      if (h < layers[l].kernel || w < layers[l].kernel)
        throw std::invalid_argument(prefix + ": frame too small for conv stack");
      h = (h - layers[l].kernel) / layers[l].stride + 1;
      w = (w - layers[l].kernel) / layers[l].stride + 1;
    }
    return {h, w};
  }

  int flat_dim() const {
    auto [h, w] = map_size(layers.size());
    return (layers.empty() ? in_ch : layers.back().filters) * h * w;
  }

  void init(NamedTensors<S>& params, Rng& rng) const {
    int ch = in_ch;
    for (size_t l = 0; l < layers.size(); ++l) {
      const int k = ch * layers[l].kernel * layers[l].kernel;
      params.insert(wname(static_cast<int>(l)), orthogonal<S>(layers[l].filters, k, rng));
      params.insert(bname(static_cast<int>(l)), Tensor<S>({layers[l].filters}));
      ch = layers[l].filters;
    }
    init_linear(params, prefix + ".fc", latent_dim, flat_dim(), rng);
  }

  /// x [B, in_ch, in_h, in_w] -> latents [B, latent_dim].
  typename Tape<S>::Var forward(Tape<S>& t, const NamedTensors<S>& params,
                                typename Tape<S>::Var x) const {
    check_frame(t.shape(x));
    const int batch = t.shape(x)[0];
    for (size_t l = 0; l < layers.size(); ++l) {
      x = t.conv2d(x, t.param(wname(static_cast<int>(l)), params.at(wname(static_cast<int>(l)))),
                   t.param(bname(static_cast<int>(l)), params.at(bname(static_cast<int>(l)))),
                   layers[l].kernel, layers[l].kernel, layers[l].stride);
      x = t.relu(x);
    }
    x = t.reshape(x, {batch, flat_dim()});
    return t.linear(x, t.param(fcw(), params.at(fcw())), t.param(fcb(), params.at(fcb())));
  }

  Tensor<S> raw_forward(const NamedTensors<S>& params, const Tensor<S>& x) const {
    check_frame(x.shape());
    const int batch = x.dim(0);
    Tensor<S> cur = x;
    int ch = in_ch, h = in_h, w = in_w;
    for (size_t l = 0; l < layers.size(); ++l) {
      cur = raw_conv(cur, params.at(wname(static_cast<int>(l))),
                     params.at(bname(static_cast<int>(l))), ch, h, w,
                     layers[l], batch);
      raw_relu_inplace(cur);
      ch = layers[l].filters;
      h = (h - layers[l].kernel) / layers[l].stride + 1;
      w = (w - layers[l].kernel) / layers[l].stride + 1;
    }
    return raw_linear(cur.reshaped({batch, flat_dim()}), params.at(fcw()), params.at(fcb()));
  }

  /// Primal latent plus directional derivative (Jacobian-vector product) of
  /// the encoder at `x` in direction `dx`. Single frame: x, dx [1,C,H,W].
  std::pair<Tensor<S>, Tensor<S>> jvp(const NamedTensors<S>& params, const Tensor<S>& x,
                                      const Tensor<S>& dx) const {
    check_frame(x.shape());
    if (!same_shape(x, dx)) throw std::invalid_argument("jvp: tangent shape mismatch");
    const int batch = x.dim(0);
    Tensor<S> cur = x, tan = dx;
    const Tensor<S> zero_bias_cache;  // conv of the tangent uses zero bias
    int ch = in_ch, h = in_h, w = in_w;
    for (size_t l = 0; l < layers.size(); ++l) {
      const Tensor<S>& wt = params.at(wname(static_cast<int>(l)));
      Tensor<S> zb({layers[l].filters});
      cur = raw_conv(cur, wt, params.at(bname(static_cast<int>(l))), ch, h, w, layers[l], batch);
      tan = raw_conv(tan, wt, zb, ch, h, w, layers[l], batch);
      for (int64_t i = 0; i < cur.numel(); ++i) {
        if (cur[i] < S{0}) {
          cur[i] = S{0};
          tan[i] = S{0};  // ReLU tangent masked by the primal sign
        }
      }
      ch = layers[l].filters;
      h = (h - layers[l].kernel) / layers[l].stride + 1;
      w = (w - layers[l].kernel) / layers[l].stride + 1;
    }
    Tensor<S> zb({latent_dim});
    Tensor<S> z = raw_linear(cur.reshaped({batch, flat_dim()}), params.at(fcw()), params.at(fcb()));
    Tensor<S> dz = raw_linear(tan.reshaped({batch, flat_dim()}), params.at(fcw()), zb);
    return {std::move(z), std::move(dz)};
  }

 private:
  void check_frame(const std::vector<int>& shape) const {
    if (shape.size() != 4 || shape[1] != in_ch || shape[2] != in_h || shape[3] != in_w)
      throw std::invalid_argument(prefix + ": expected frames " +
                                  shape_string({-1, in_ch, in_h, in_w}) + ", got " +
                                  shape_string(shape));
  }

  static Tensor<S> raw_conv(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                            int ch, int h, int wid, const ConvLayerSpec& spec, int batch) {
    const int k = ch * spec.kernel * spec.kernel;
    const int oh = (h - spec.kernel) / spec.stride + 1;
    const int ow = (wid - spec.kernel) / spec.stride + 1;
    const int patches = oh * ow;
    Tensor<S> col({k, patches});
    Tensor<S> out({batch, spec.filters, oh, ow});
    for (int bi = 0; bi < batch; ++bi) {
      im2col(x.data() + static_cast<int64_t>(bi) * ch * h * wid, ch, h, wid, spec.kernel,
             spec.kernel, spec.stride, oh, ow, col.data());
      S* y = out.data() + static_cast<int64_t>(bi) * spec.filters * patches;
      gemm_nn(w.data(), col.data(), y, spec.filters, k, patches, false);
      for (int f = 0; f < spec.filters; ++f)
        for (int p = 0; p < patches; ++p) y[static_cast<int64_t>(f) * patches + p] += b[f];
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Recurrent cell (LSTM): gates [input, forget, candidate, output] from one
// linear map over concat(x, h)
// ---------------------------------------------------------------------------

template <typename S>
struct RecurrentState {
  Tensor<S> h;  // [B, hidden]
  Tensor<S> c;  // [B, hidden]
};

template <typename S>
struct LstmCell {
  std::string prefix;
  int in_dim = 0;
  int hidden = 0;

  std::string wname() const { return prefix + ".w"; }
  std::string bname() const { return prefix + ".b"; }

  void init(NamedTensors<S>& params, Rng& rng) const {
    init_linear(params, prefix, 4 * hidden, in_dim + hidden, rng);
  }

  RecurrentState<S> zero_state(int batch) const {
    return {Tensor<S>({batch, hidden}), Tensor<S>({batch, hidden})};
  }

  struct TapeState {
    typename Tape<S>::Var h;
    typename Tape<S>::Var c;
  };

  TapeState step(Tape<S>& t, const NamedTensors<S>& params, typename Tape<S>::Var x,
                 TapeState state) const {
    auto xh = t.concat_cols({x, state.h});
    auto gates = t.linear(xh, t.param(wname(), params.at(wname())),
                          t.param(bname(), params.at(bname())));
    auto i = t.sigmoid(t.slice_cols(gates, 0, hidden));
    auto f = t.sigmoid(t.slice_cols(gates, hidden, hidden));
    auto g = t.tanh_(t.slice_cols(gates, 2 * hidden, hidden));
    auto o = t.sigmoid(t.slice_cols(gates, 3 * hidden, hidden));
    auto c = t.add(t.mul(f, state.c), t.mul(i, g));
    auto h = t.mul(o, t.tanh_(c));
    return {h, c};
  }

  RecurrentState<S> raw_step(const NamedTensors<S>& params, const Tensor<S>& x,
                             const RecurrentState<S>& state) const {
    const int batch = x.dim(0);
    Tensor<S> xh({batch, in_dim + hidden});
    for (int r = 0; r < batch; ++r) {
      for (int c = 0; c < in_dim; ++c) xh.at(r, c) = x.at(r, c);
      for (int c = 0; c < hidden; ++c) xh.at(r, in_dim + c) = state.h.at(r, c);
    }
    Tensor<S> gates = raw_linear(xh, params.at(wname()), params.at(bname()));
    RecurrentState<S> next{Tensor<S>({batch, hidden}), Tensor<S>({batch, hidden})};
    auto sig = [](S v) {
      return v >= S{0} ? S{1} / (S{1} + std::exp(-v)) : std::exp(v) / (S{1} + std::exp(v));
    };
    for (int r = 0; r < batch; ++r)
      for (int c = 0; c < hidden; ++c) {
        const S i = sig(gates.at(r, c));
        const S f = sig(gates.at(r, hidden + c));
        const S g = std::tanh(gates.at(r, 2 * hidden + c));
        const S o = sig(gates.at(r, 3 * hidden + c));
        const S cc = f * state.c.at(r, c) + i * g;
        next.c.at(r, c) = cc;
        next.h.at(r, c) = o * std::tanh(cc);
      }
    return next;
  }
};

}  // namespace flare::nn
