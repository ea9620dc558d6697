#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/base/tensor.hpp"
#include "flare/nn/params.hpp"
#include "flare/nn/tape.hpp"

namespace flare::nn {

/// Bias-corrected Adam over a named subset of a parameter set. One instance
/// per network group (encoder, actor, critic, temperature) so each group
/// carries its own learning rate and betas.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::string> names, S lr, S beta1 = S{0.9}, S beta2 = S{0.999},
       S eps = S{1e-8})
      : names_(std::move(names)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  const std::vector<std::string>& names() const { return names_; }
  S learning_rate() const { return lr_; }
  int64_t step_count() const { return step_; }

  /// One update. Names absent from the tape (loss never touched them) are
  /// treated as zero-gradient: moments decay, parameter barely moves.
  void step(NamedTensors<S>& params, const Tape<S>& tape) {
    ensure_moments(params);
    ++step_;
    const S c1 = S{1} - static_cast<S>(std::pow(static_cast<double>(beta1_), static_cast<double>(step_)));
    const S c2 = S{1} - static_cast<S>(std::pow(static_cast<double>(beta2_), static_cast<double>(step_)));
    for (size_t i = 0; i < names_.size(); ++i) {
      Tensor<S>& p = params.at(names_[i]);
      Tensor<S>& m = m_[i];
      Tensor<S>& v = v_[i];
      const Tensor<S>* g = tape.has_param(names_[i]) ? &tape.grad(names_[i]) : nullptr;
      if (g && !same_shape(p, *g))
        throw std::invalid_argument("adam: gradient shape mismatch at " + names_[i]);
      for (int64_t j = 0; j < p.numel(); ++j) {
        const S gj = g ? (*g)[j] : S{0};
        m[j] = beta1_ * m[j] + (S{1} - beta1_) * gj;
        v[j] = beta2_ * v[j] + (S{1} - beta2_) * gj * gj;
        const S mhat = m[j] / c1;
        const S vhat = v[j] / c2;
        p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  // ---- checkpoint plumbing ----

  /// Moment tensors and step counter, flattened under a label for storage.
  void export_state(const std::string& label, NamedTensors<S>& out) const {
    out.set(label + ".step", Tensor<S>::scalar(static_cast<S>(step_)));
    for (size_t i = 0; i < names_.size(); ++i) {
      out.set(label + ".m." + names_[i], m_.empty() ? Tensor<S>() : m_[i]);
      out.set(label + ".v." + names_[i], v_.empty() ? Tensor<S>() : v_[i]);
    }
  }

  void import_state(const std::string& label, const NamedTensors<S>& in,
                    const NamedTensors<S>& params) {
    ensure_moments(params);
    step_ = static_cast<int64_t>(in.at(label + ".step")[0]);
    for (size_t i = 0; i < names_.size(); ++i) {
      const Tensor<S>& m = in.at(label + ".m." + names_[i]);
      const Tensor<S>& v = in.at(label + ".v." + names_[i]);
      // A state exported before the first update holds empty moments; the
      // zeros ensure_moments() just created already describe that state.
      if (m.empty() && v.empty()) continue;
      if (!same_shape(m, params.at(names_[i])) || !same_shape(v, params.at(names_[i])))
        throw std::invalid_argument("adam: imported moment shape mismatch at " + names_[i]);
      m_[i] = m;
      v_[i] = v;
    }
  }

 private:
  void ensure_moments(const NamedTensors<S>& params) {
    if (!m_.empty()) return;
    m_.reserve(names_.size());
    v_.reserve(names_.size());
    for (const auto& name : names_) {
      m_.emplace_back(params.at(name).shape());
      v_.emplace_back(params.at(name).shape());
    }
  }

  std::vector<std::string> names_;
  S lr_{1e-3}, beta1_{0.9}, beta2_{0.999}, eps_{1e-8};
  int64_t step_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace flare::nn
