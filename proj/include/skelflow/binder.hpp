// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "skelflow/param_store.hpp"
#include "skelflow/tape.hpp"

namespace skelflow {

/// Registers store entries as tape leaves. In training mode, non-frozen
/// entries get gradients and are listed in `trainable` for extraction after
/// the backward pass. Frozen entries always pass gradients through without
/// materializing their own.
template <typename T>
class Binder {
 public:
  Binder(Tape<T>& tape, const ParamStore<T>& store, bool train)
      : tape_(&tape), store_(&store), train_(train) {}

  int operator()(const std::string& name) {
    bool ng = train_ && !store_->frozen(name);
    int id = tape_->leaf(store_->at(name), ng);
    if (ng) trainable_.emplace_back(name, id);
    return id;
  }

  const std::vector<std::pair<std::string, int>>& trainable() const { return trainable_; }

  /// Copies gradients of all bound trainable leaves into `grads`,
  /// accumulating (scaled) into existing entries.
  void collect_grads(GradMap<T>& grads, double scale = 1.0) const {
    for (const auto& [name, id] : trainable_) {
      const Tensor<T>& g = tape_->grad(id);
      auto it = grads.find(name);
      if (it == grads.end()) {
        Tensor<T> gg = g;
        if (scale != 1.0)
          for (auto& v : gg.data) v *= static_cast<T>(scale);
        grads.emplace(name, std::move(gg));
      } else {
        require(it->second.same_shape(g), errc::shape_mismatch, "grad accumulate: " + name);
        for (std::size_t i = 0; i < g.numel(); ++i)
          it->second.data[i] += static_cast<T>(scale) * g.data[i];
      }
    }
  }

  Tape<T>& tape() { return *tape_; }

 private:
  Tape<T>* tape_;
  const ParamStore<T>* store_;
  bool train_;
  std::vector<std::pair<std::string, int>> trainable_;
};

/// Shared init helpers: weights N(0, 0.02), biases zero, norms identity.
template <typename T>
inline void init_linear(ParamStore<T>& store, const std::string& prefix, int in, int out, Rng& rng,
                        bool zero = false) {
  Tensor<T> w({in, out});
  if (!zero) rng.normal_fill(w.data.data(), w.numel(), 0.02);
  store.add(prefix + ".w", std::move(w));
  store.add(prefix + ".b", Tensor<T>::zeros({out}));
}

template <typename T>
inline void init_norm(ParamStore<T>& store, const std::string& prefix, int width) {
  store.add(prefix + ".scale", Tensor<T>::full({width}, T(1)));
  store.add(prefix + ".shift", Tensor<T>::zeros({width}));
}

struct NormIds {
  int scale = -1, shift = -1;
};
struct LinearIds {
  int w = -1, b = -1;
};

template <typename T>
inline NormIds bind_norm(Binder<T>& bind, const std::string& prefix) {
  return {bind(prefix + ".scale"), bind(prefix + ".shift")};
}
template <typename T>
inline LinearIds bind_linear(Binder<T>& bind, const std::string& prefix) {
  return {bind(prefix + ".w"), bind(prefix + ".b")};
}

}  // namespace skelflow
