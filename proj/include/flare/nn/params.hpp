#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/base/tensor.hpp"

namespace flare::nn {

/// Ordered name -> tensor map. Lexicographic iteration keeps optimizer
/// updates, EMA sweeps and checkpoint layout deterministic.
template <typename S>
class NamedTensors {
 public:
  using Map = std::map<std::string, Tensor<S>>;

  bool contains(const std::string& name) const { return map_.count(name) > 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("no tensor named " + name);
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("no tensor named " + name);
    return it->second;
  }

  void insert(const std::string& name, Tensor<S> t) {
    if (!map_.emplace(name, std::move(t)).second)
      throw std::invalid_argument("duplicate tensor name " + name);
  }
  void set(const std::string& name, Tensor<S> t) { map_[name] = std::move(t); }

  size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [name, t] : map_) n += t.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(map_.size());
    for (const auto& [name, t] : map_) out.push_back(name);
    return out;
  }

  /// Names sharing a prefix, e.g. every tensor of one sub-network.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, t] : map_)
      if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
  }

  typename Map::iterator begin() { return map_.begin(); }
  typename Map::iterator end() { return map_.end(); }
  typename Map::const_iterator begin() const { return map_.begin(); }
  typename Map::const_iterator end() const { return map_.end(); }

 private:
  Map map_;
};

/// Polyak average: target <- (1 - tau) * target + tau * online, applied to
/// every name in `names`. tau = 1 is a hard copy.
template <typename S>
void ema_update(NamedTensors<S>& target, const NamedTensors<S>& online,
                const std::vector<std::string>& names, S tau) {
  for (const auto& name : names) {
    Tensor<S>& t = target.at(name);
    const Tensor<S>& o = online.at(name);
    if (!same_shape(t, o)) throw std::invalid_argument("ema shape mismatch at " + name);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = (S{1} - tau) * t[i] + tau * o[i];
  }
}

}  // namespace flare::nn
