#pragma once

#include <cmath>

#include "gelp/ad/backward.hpp"
#include "gelp/train/config.hpp"

namespace gelp::train {

/// A named trainable tensor (shares its node with the owning Weights).
template <class T>
struct Param {
  std::string name;
  ad::Tensor<T> tensor;
};

/// First and second moments for one group of parameters, plus the number of
/// updates taken.
template <class T>
struct AdamState {
  std::vector<std::string> names;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  static AdamState zeros(const std::vector<Param<T>>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.names.push_back(p.name);
      s.m.emplace_back(p.tensor.size(), T(0));
      s.v.emplace_back(p.tensor.size(), T(0));
    }
    return s;
  }

  void check(const std::vector<Param<T>>& params) const {
    require(names.size() == params.size(), "optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
      require(names[i] == params[i].name && m[i].size() == params[i].tensor.size() &&
                  v[i].size() == params[i].tensor.size(),
              "optimizer moments for " + params[i].name + " do not match the parameter");
  }
};

/// True when every present gradient is finite.
template <class T>
bool all_finite(const std::vector<std::optional<ad::Tensor<T>>>& grads) {
  for (const auto& g : grads)
    if (g)
      for (T x : g->data())
        if (!std::isfinite(x)) return false;
  return true;
}

/// One bias-corrected Adam update. Absent gradients count as zero.
template <class T>
void adam_step(const std::vector<Param<T>>& params, const std::vector<std::optional<ad::Tensor<T>>>& grads,
               AdamState<T>& state, const AdamConfig& cfg) {
  state.check(params);
  require(grads.size() == params.size(), "one gradient slot per parameter expected");
  ++state.step;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    auto p = tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const T g = grads[i] ? (*grads[i])[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

}  // namespace gelp::train
