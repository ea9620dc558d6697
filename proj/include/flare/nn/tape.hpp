#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flare/base/tensor.hpp"
#include "flare/nn/gemm.hpp"

namespace flare::nn {

/// Reverse-mode tape over dense tensors. One tape is built per training step:
/// ops record a backward closure as they run, backward() replays them in
/// reverse, and parameter gradients are read back by name.
///
/// Parameters are memoized by name, so a sub-network used twice in one step
/// (e.g. a critic encoder applied to both observation and next observation)
/// naturally accumulates gradient from both uses into a single slot.
template <typename S>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----

  Var constant(Tensor<S> v) { return push(std::move(v), false); }

  Var param(const std::string& name, const Tensor<S>& v) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end()) return Var{it->second};
    Var out = push(v, true);
    param_ids_.emplace(name, out.id);
    return out;
  }

  /// Identity in value, but gradient does not flow past it.
  Var stop_grad(Var x) { return push(nodes_[x.id].value, false); }

  // ---- accessors ----

  const Tensor<S>& value(Var x) const { return nodes_[x.id].value; }
  const std::vector<int>& shape(Var x) const { return nodes_[x.id].value.shape(); }

  bool has_param(const std::string& name) const { return param_ids_.count(name) > 0; }

  /// Accumulated gradient for a parameter; zeros if the loss never touched it.
  const Tensor<S>& grad(const std::string& name) const {
    auto it = param_ids_.find(name);
    if (it == param_ids_.end()) throw std::out_of_range("no param named " + name);
    return grads_[it->second];
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    out.reserve(param_ids_.size());
    for (const auto& [name, id] : param_ids_) out.push_back(name);
    std::sort(out.begin(), out.end());
    return out;
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor<S> out = nodes_[a.id].value;
    const Tensor<S>& bv = nodes_[b.id].value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    Var o = push(std::move(out), needs(a) || needs(b));
    if (nodes_[o.id].requires_grad)
      record(o, [a, b, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        if (t.needs(a)) t.accumulate(a, dy);
        if (t.needs(b)) t.accumulate(b, dy);
      });
    return o;
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor<S> out = nodes_[a.id].value;
    const Tensor<S>& bv = nodes_[b.id].value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    Var o = push(std::move(out), needs(a) || needs(b));
    if (nodes_[o.id].requires_grad)
      record(o, [a, b, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        if (t.needs(a)) t.accumulate(a, dy);
        if (t.needs(b)) {
          Tensor<S>& db = t.grad_slot(b);
          for (int64_t i = 0; i < dy.numel(); ++i) db[i] -= dy[i];
        }
      });
    return o;
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor<S> out = nodes_[a.id].value;
    const Tensor<S>& bv = nodes_[b.id].value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    Var o = push(std::move(out), needs(a) || needs(b));
    if (nodes_[o.id].requires_grad)
      record(o, [a, b, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& av = t.nodes_[a.id].value;
        const Tensor<S>& bv2 = t.nodes_[b.id].value;
        if (t.needs(a)) {
          Tensor<S>& da = t.grad_slot(a);
          for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * bv2[i];
        }
        if (t.needs(b)) {
          Tensor<S>& db = t.grad_slot(b);
          for (int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * av[i];
        }
      });
    return o;
  }

  /// Elementwise min of two same-shape tensors; gradient follows the smaller
  /// input (ties go to the first).
  Var minimum(Var a, Var b) {
    check_same(a, b, "minimum");
    const Tensor<S>& av = nodes_[a.id].value;
    const Tensor<S>& bv = nodes_[b.id].value;
    Tensor<S> out(av.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(av[i], bv[i]);
    Var o = push(std::move(out), needs(a) || needs(b));
    if (nodes_[o.id].requires_grad)
      record(o, [a, b, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& av2 = t.nodes_[a.id].value;
        const Tensor<S>& bv2 = t.nodes_[b.id].value;
        for (int64_t i = 0; i < dy.numel(); ++i) {
          if (av2[i] <= bv2[i]) {
            if (t.needs(a)) t.grad_slot(a)[i] += dy[i];
          } else if (t.needs(b)) {
            t.grad_slot(b)[i] += dy[i];
          }
        }
      });
    return o;
  }

  Var scale(Var x, S c) {
    Tensor<S> out = nodes_[x.id].value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return unary(x, std::move(out), [c](Tape& t, Var xin, const Tensor<S>& dy) {
      Tensor<S>& dx = t.grad_slot(xin);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += c * dy[i];
    });
  }

  Var neg(Var x) { return scale(x, S{-1}); }

  Var add_const(Var x, S c) {
    Tensor<S> out = nodes_[x.id].value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    return unary(x, std::move(out), [](Tape& t, Var xin, const Tensor<S>& dy) {
      t.accumulate(xin, dy);
    });
  }

  Var square(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * xv[i];
    return unary(x, std::move(out), [](Tape& t, Var xin, const Tensor<S>& dy) {
      const Tensor<S>& xv2 = t.nodes_[xin.id].value;
      Tensor<S>& dx = t.grad_slot(xin);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += S{2} * xv2[i] * dy[i];
    });
  }

  Var exp_(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(xv[i]);
    Var o = push(std::move(out), needs(x));
    if (nodes_[o.id].requires_grad)
      record(o, [x, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& yv = t.nodes_[o.id].value;
        Tensor<S>& dx = t.grad_slot(x);
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += yv[i] * dy[i];
      });
    return o;
  }

  Var log_(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(xv[i]);
    return unary(x, std::move(out), [](Tape& t, Var xin, const Tensor<S>& dy) {
      const Tensor<S>& xv2 = t.nodes_[xin.id].value;
      Tensor<S>& dx = t.grad_slot(xin);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] / xv2[i];
    });
  }

  Var tanh_(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(xv[i]);
    Var o = push(std::move(out), needs(x));
    if (nodes_[o.id].requires_grad)
      record(o, [x, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& yv = t.nodes_[o.id].value;
        Tensor<S>& dx = t.grad_slot(x);
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += (S{1} - yv[i] * yv[i]) * dy[i];
      });
    return o;
  }

  Var sigmoid(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = xv[i] >= S{0} ? S{1} / (S{1} + std::exp(-xv[i]))
                             : std::exp(xv[i]) / (S{1} + std::exp(xv[i]));
    Var o = push(std::move(out), needs(x));
    if (nodes_[o.id].requires_grad)
      record(o, [x, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& yv = t.nodes_[o.id].value;
        Tensor<S>& dx = t.grad_slot(x);
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += yv[i] * (S{1} - yv[i]) * dy[i];
      });
    return o;
  }

  Var relu(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > S{0} ? xv[i] : S{0};
    return unary(x, std::move(out), [](Tape& t, Var xin, const Tensor<S>& dy) {
      const Tensor<S>& xv2 = t.nodes_[xin.id].value;
      Tensor<S>& dx = t.grad_slot(xin);
      for (int64_t i = 0; i < dy.numel(); ++i)
        if (xv2[i] > S{0}) dx[i] += dy[i];
    });
  }

  /// log(1 + exp(x)), evaluated without overflow on either tail.
  Var softplus(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = xv[i] > S{0} ? xv[i] + std::log1p(std::exp(-xv[i]))
                            : std::log1p(std::exp(xv[i]));
    return unary(x, std::move(out), [](Tape& t, Var xin, const Tensor<S>& dy) {
      const Tensor<S>& xv2 = t.nodes_[xin.id].value;
      Tensor<S>& dx = t.grad_slot(xin);
      for (int64_t i = 0; i < dy.numel(); ++i) {
        const S s = xv2[i] >= S{0} ? S{1} / (S{1} + std::exp(-xv2[i]))
                                   : std::exp(xv2[i]) / (S{1} + std::exp(xv2[i]));
        dx[i] += s * dy[i];
      }
    });
  }

  // ---- shape / gather ----

  Var reshape(Var x, std::vector<int> shape) {
    Tensor<S> out = nodes_[x.id].value.reshaped(std::move(shape));
    return unary(x, std::move(out), [](Tape& t, Var xin, const Tensor<S>& dy) {
      Tensor<S>& dx = t.grad_slot(xin);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
  }

  /// Column slice of a [B, D] matrix: columns [start, start+len).
  Var slice_cols(Var x, int start, int len) {
    const Tensor<S>& xv = nodes_[x.id].value;
    require(xv.rank() == 2, "slice_cols expects rank-2 input");
    const int rows = xv.dim(0), cols = xv.dim(1);
    require(start >= 0 && start + len <= cols, "slice_cols out of range");
    Tensor<S> out({rows, len});
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < len; ++c) out.at(r, c) = xv.at(r, start + c);
    return unary(x, std::move(out), [start, len](Tape& t, Var xin, const Tensor<S>& dy) {
      Tensor<S>& dx = t.grad_slot(xin);
      const int rows = dy.dim(0);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < len; ++c) dx.at(r, start + c) += dy.at(r, c);
    });
  }

  /// Concatenate [B, D_i] matrices along columns.
  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols of nothing");
    const int rows = nodes_[parts[0].id].value.dim(0);
    int total = 0;
    bool any_grad = false;
    for (Var p : parts) {
      const Tensor<S>& v = nodes_[p.id].value;
      require(v.rank() == 2 && v.dim(0) == rows, "concat_cols shape mismatch");
      total += v.dim(1);
      any_grad = any_grad || needs(p);
    }
    Tensor<S> out({rows, total});
    int offset = 0;
    for (Var p : parts) {
      const Tensor<S>& v = nodes_[p.id].value;
      const int w = v.dim(1);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < w; ++c) out.at(r, offset + c) = v.at(r, c);
      offset += w;
    }
    Var o = push(std::move(out), any_grad);
    if (nodes_[o.id].requires_grad) {
      std::vector<Var> saved = parts;
      record(o, [saved, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const int rows2 = dy.dim(0);
        int off = 0;
        for (Var p : saved) {
          const int w = t.nodes_[p.id].value.dim(1);
          if (t.needs(p)) {
            Tensor<S>& dp = t.grad_slot(p);
            for (int r = 0; r < rows2; ++r)
              for (int c = 0; c < w; ++c) dp.at(r, c) += dy.at(r, off + c);
          }
          off += w;
        }
      });
    }
    return o;
  }

  /// Per-row gather: out[b, 0] = x[b, idx[b]]. Used to pick the Q-value of
  /// the action actually taken.
  Var select_cols(Var x, const std::vector<int>& idx) {
    const Tensor<S>& xv = nodes_[x.id].value;
    require(xv.rank() == 2, "select_cols expects rank-2 input");
    require(static_cast<int>(idx.size()) == xv.dim(0), "select_cols index count");
    Tensor<S> out({xv.dim(0), 1});
    for (int r = 0; r < xv.dim(0); ++r) {
      require(idx[r] >= 0 && idx[r] < xv.dim(1), "select_cols index out of range");
      out.at(r, 0) = xv.at(r, idx[r]);
    }
    return unary(x, std::move(out), [idx](Tape& t, Var xin, const Tensor<S>& dy) {
      Tensor<S>& dx = t.grad_slot(xin);
      for (int r = 0; r < dy.dim(0); ++r) dx.at(r, idx[r]) += dy.at(r, 0);
    });
  }

  // ---- reductions ----

  /// [B, D] -> [B, 1], summing within each row.
  Var row_sum(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    require(xv.rank() == 2, "row_sum expects rank-2 input");
    Tensor<S> out({xv.dim(0), 1});
    for (int r = 0; r < xv.dim(0); ++r) {
      S acc{0};
      for (int c = 0; c < xv.dim(1); ++c) acc += xv.at(r, c);
      out.at(r, 0) = acc;
    }
    return unary(x, std::move(out), [](Tape& t, Var xin, const Tensor<S>& dy) {
      Tensor<S>& dx = t.grad_slot(xin);
      for (int r = 0; r < dx.dim(0); ++r)
        for (int c = 0; c < dx.dim(1); ++c) dx.at(r, c) += dy.at(r, 0);
    });
  }

  Var sum_all(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    S acc{0};
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    return unary(x, Tensor<S>::scalar(acc), [](Tape& t, Var xin, const Tensor<S>& dy) {
      Tensor<S>& dx = t.grad_slot(xin);
      for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy[0];
    });
  }

  Var mean_all(Var x) {
    const Tensor<S>& xv = nodes_[x.id].value;
    const S inv = S{1} / static_cast<S>(xv.numel());
    S acc{0};
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    return unary(x, Tensor<S>::scalar(acc * inv),
                 [inv](Tape& t, Var xin, const Tensor<S>& dy) {
                   Tensor<S>& dx = t.grad_slot(xin);
                   for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += inv * dy[0];
                 });
  }

  // ---- linear algebra ----

  /// [m,k] x [k,n] -> [m,n].
  Var matmul(Var a, Var b) {
    const Tensor<S>& av = nodes_[a.id].value;
    const Tensor<S>& bv = nodes_[b.id].value;
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
            "matmul shape mismatch");
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor<S> out({m, n});
    gemm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
    Var o = push(std::move(out), needs(a) || needs(b));
    if (nodes_[o.id].requires_grad)
      record(o, [a, b, o, m, k, n](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        if (t.needs(a))
          gemm_nt(dy.data(), t.nodes_[b.id].value.data(), t.grad_slot(a).data(), m, n, k,
                  true);
        if (t.needs(b))
          gemm_tn(t.nodes_[a.id].value.data(), dy.data(), t.grad_slot(b).data(), k, m, n,
                  true);
      });
    return o;
  }

  /// x [B,in] -> x W^T + b with W [out,in], b [out].
  Var linear(Var x, Var w, Var b) {
    const Tensor<S>& xv = nodes_[x.id].value;
    const Tensor<S>& wv = nodes_[w.id].value;
    const Tensor<S>& bv = nodes_[b.id].value;
    require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
            "linear shape mismatch");
    require(bv.numel() == wv.dim(0), "linear bias size");
    const int rows = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
    Tensor<S> out({rows, out_dim});
    gemm_nt(xv.data(), wv.data(), out.data(), rows, in, out_dim, false);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < out_dim; ++c) out.at(r, c) += bv[c];
    Var o = push(std::move(out), needs(x) || needs(w) || needs(b));
    if (nodes_[o.id].requires_grad)
      record(o, [x, w, b, o, rows, in, out_dim](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        if (t.needs(x))
          gemm_nn(dy.data(), t.nodes_[w.id].value.data(), t.grad_slot(x).data(), rows,
                  out_dim, in, true);
        if (t.needs(w))
          gemm_tn(dy.data(), t.nodes_[x.id].value.data(), t.grad_slot(w).data(), out_dim,
                  rows, in, true);
        if (t.needs(b)) {
          Tensor<S>& db = t.grad_slot(b);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out_dim; ++c) db[c] += dy.at(r, c);
        }
      });
    return o;
  }

  /// Multiply every element of x by a single learned scalar s (shape [1]).
  Var scale_by(Var x, Var s) {
    const Tensor<S>& xv = nodes_[x.id].value;
    const Tensor<S>& sv = nodes_[s.id].value;
    require(sv.numel() == 1, "scale_by expects a scalar");
    Tensor<S> out(xv.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * sv[0];
    Var o = push(std::move(out), needs(x) || needs(s));
    if (nodes_[o.id].requires_grad)
      record(o, [x, s, o](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& xv2 = t.nodes_[x.id].value;
        const S sval = t.nodes_[s.id].value[0];
        if (t.needs(x)) {
          Tensor<S>& dx = t.grad_slot(x);
          for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += sval * dy[i];
        }
        if (t.needs(s)) {
          S acc{0};
          for (int64_t i = 0; i < dy.numel(); ++i) acc += xv2[i] * dy[i];
          t.grad_slot(s)[0] += acc;
        }
      });
    return o;
  }

  /// Normalize each row of x [B,D] to zero mean / unit variance, then apply
  /// a learned per-feature gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, S eps = S{1e-5}) {
    const Tensor<S>& xv = nodes_[x.id].value;
    require(xv.rank() == 2, "layer_norm expects rank-2 input");
    const int rows = xv.dim(0), cols = xv.dim(1);
    require(nodes_[gain.id].value.numel() == cols, "layer_norm gain size");
    require(nodes_[bias.id].value.numel() == cols, "layer_norm bias size");
    const Tensor<S>& g = nodes_[gain.id].value;
    const Tensor<S>& bb = nodes_[bias.id].value;

    auto xhat = std::make_shared<Tensor<S>>(std::vector<int>{rows, cols});
    auto inv_std = std::make_shared<Tensor<S>>(std::vector<int>{rows});
    Tensor<S> out({rows, cols});
    for (int r = 0; r < rows; ++r) {
      S mean{0};
      for (int c = 0; c < cols; ++c) mean += xv.at(r, c);
      mean /= static_cast<S>(cols);
      S var{0};
      for (int c = 0; c < cols; ++c) {
        const S d = xv.at(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<S>(cols);
      const S inv = S{1} / std::sqrt(var + eps);
      (*inv_std)[r] = inv;
      for (int c = 0; c < cols; ++c) {
        const S xh = (xv.at(r, c) - mean) * inv;
        xhat->at(r, c) = xh;
        out.at(r, c) = xh * g[c] + bb[c];
      }
    }
    Var o = push(std::move(out), needs(x) || needs(gain) || needs(bias));
    if (nodes_[o.id].requires_grad)
      record(o, [x, gain, bias, o, rows, cols, xhat, inv_std](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& g2 = t.nodes_[gain.id].value;
        if (t.needs(gain)) {
          Tensor<S>& dg = t.grad_slot(gain);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) dg[c] += dy.at(r, c) * xhat->at(r, c);
        }
        if (t.needs(bias)) {
          Tensor<S>& db = t.grad_slot(bias);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) db[c] += dy.at(r, c);
        }
        if (t.needs(x)) {
          Tensor<S>& dx = t.grad_slot(x);
          for (int r = 0; r < rows; ++r) {
            S mean_h{0}, mean_hx{0};
            for (int c = 0; c < cols; ++c) {
              const S h = dy.at(r, c) * g2[c];
              mean_h += h;
              mean_hx += h * xhat->at(r, c);
            }
            mean_h /= static_cast<S>(cols);
            mean_hx /= static_cast<S>(cols);
            const S inv = (*inv_std)[r];
            for (int c = 0; c < cols; ++c) {
              const S h = dy.at(r, c) * g2[c];
              dx.at(r, c) += inv * (h - mean_h - xhat->at(r, c) * mean_hx);
            }
          }
        }
      });
    return o;
  }

  /// 2D convolution, valid padding. x [B,C,H,W], w [F, C*kh*kw], b [F]
  /// -> [B,F,OH,OW]. Runs as im2col plus one GEMM per batch item.
  Var conv2d(Var x, Var w, Var b, int kh, int kw, int stride) {
    const Tensor<S>& xv = nodes_[x.id].value;
    const Tensor<S>& wv = nodes_[w.id].value;
    const Tensor<S>& bv = nodes_[b.id].value;
    require(xv.rank() == 4, "conv2d expects [B,C,H,W] input");
    const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), wid = xv.dim(3);
    const int k = ch * kh * kw;
    require(wv.rank() == 2 && wv.dim(1) == k, "conv2d kernel shape");
    const int filters = wv.dim(0);
    require(bv.numel() == filters, "conv2d bias size");
    require(h >= kh && wid >= kw && stride >= 1, "conv2d geometry");
    const int oh = (h - kh) / stride + 1;
    const int ow = (wid - kw) / stride + 1;
    const int patches = oh * ow;

    auto cols = std::make_shared<Tensor<S>>(std::vector<int>{batch, k, patches});
    Tensor<S> out({batch, filters, oh, ow});
    for (int bi = 0; bi < batch; ++bi) {
      S* col = cols->data() + static_cast<int64_t>(bi) * k * patches;
      const S* img = xv.data() + static_cast<int64_t>(bi) * ch * h * wid;
      im2col(img, ch, h, wid, kh, kw, stride, oh, ow, col);
      S* y = out.data() + static_cast<int64_t>(bi) * filters * patches;
      gemm_nn(wv.data(), col, y, filters, k, patches, false);
      for (int f = 0; f < filters; ++f)
        for (int p = 0; p < patches; ++p) y[static_cast<int64_t>(f) * patches + p] += bv[f];
    }
    Var o = push(std::move(out), needs(x) || needs(w) || needs(b));
    if (nodes_[o.id].requires_grad)
      record(o, [x, w, b, o, kh, kw, stride, batch, ch, h, wid, filters, patches, k, oh,
                 ow, cols](Tape& t) {
        const Tensor<S>& dy = t.grads_[o.id];
        const Tensor<S>& wv2 = t.nodes_[w.id].value;
        for (int bi = 0; bi < batch; ++bi) {
          const S* dyb = dy.data() + static_cast<int64_t>(bi) * filters * patches;
          const S* col = cols->data() + static_cast<int64_t>(bi) * k * patches;
          if (t.needs(w))
            gemm_nt(dyb, col, t.grad_slot(w).data(), filters, patches, k, true);
          if (t.needs(b)) {
            Tensor<S>& db = t.grad_slot(b);
            for (int f = 0; f < filters; ++f) {
              S acc{0};
              for (int p = 0; p < patches; ++p) acc += dyb[static_cast<int64_t>(f) * patches + p];
              db[f] += acc;
            }
          }
          if (t.needs(x)) {
            Tensor<S> dcol({k, patches});
            gemm_tn(wv2.data(), dyb, dcol.data(), k, filters, patches, false);
            S* dx = t.grad_slot(x).data() + static_cast<int64_t>(bi) * ch * h * wid;
            col2im(dcol.data(), ch, h, wid, kh, kw, stride, oh, ow, dx);
          }
        }
      });
    return o;
  }

  // ---- backward ----

  /// Seed d(loss)/d(loss) = 1 and sweep the tape in reverse. `loss` must be
  /// a single element.
  void backward(Var loss) {
    require(nodes_[loss.id].value.numel() == 1, "backward needs a scalar loss");
    grads_.clear();
    grads_.resize(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].requires_grad) grads_[i] = Tensor<S>(nodes_[i].value.shape());
    if (!nodes_[loss.id].requires_grad) return;  // loss doesn't touch any param
    grads_[loss.id][0] = S{1};
    for (auto it = backward_steps_.rbegin(); it != backward_steps_.rend(); ++it)
      (*it)(*this);
  }

 private:
  struct Node {
    Tensor<S> value;
    bool requires_grad = false;
  };

  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  Var push(Tensor<S> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), requires_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void record(Var, std::function<void(Tape&)> fn) {
    backward_steps_.push_back(std::move(fn));
  }

  Tensor<S>& grad_slot(Var v) { return grads_[v.id]; }

  void accumulate(Var v, const Tensor<S>& dy) {
    Tensor<S>& g = grads_[v.id];
    for (int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i];
  }

  template <typename F>
  Var unary(Var x, Tensor<S> out, F&& back) {
    Var o = push(std::move(out), needs(x));
    if (nodes_[o.id].requires_grad)
      record(o, [x, o, back = std::forward<F>(back)](Tape& t) {
        back(t, x, t.grads_[o.id]);
      });
    return o;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!same_shape(nodes_[a.id].value, nodes_[b.id].value))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_string(nodes_[a.id].value.shape()) + " vs " +
                                  shape_string(nodes_[b.id].value.shape()));
  }

  static void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
  std::vector<std::function<void(Tape&)>> backward_steps_;
  std::unordered_map<std::string, int> param_ids_;
};

}  // namespace flare::nn
