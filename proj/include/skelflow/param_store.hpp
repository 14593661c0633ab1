// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "skelflow/tensor.hpp"

namespace skelflow {

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Named parameter tensors with per-tensor frozen flags. Iteration order is
/// lexicographic by name (std::map), which pins optimizer update order and
/// checkpoint layout.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    bool frozen = false;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> value, bool frozen = false) {
    require(entries_.find(name) == entries_.end(), errc::config_mismatch,
            "duplicate parameter name: " + name);
    auto res = entries_.emplace(name, Entry{std::move(value), frozen});
    return res.first->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), errc::config_mismatch, "unknown parameter: " + name);
    return it->second.value;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), errc::config_mismatch, "unknown parameter: " + name);
    return it->second.value;
  }

  bool frozen(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), errc::config_mismatch, "unknown parameter: " + name);
    return it->second.frozen;
  }

  void freeze_prefix(const std::string& prefix) {
    for (auto& [name, e] : entries_)
      if (name.rfind(prefix, 0) == 0) e.frozen = true;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_)
      if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_)
      if (!e.frozen) n += e.value.numel();
    return n;
  }

  std::uint64_t content_hash(const std::string& name) const {
    const Tensor<T>& v = at(name);
    return fnv1a(v.data.data(), v.data.size() * sizeof(T));
  }

  /// Combined hash over all entries whose name starts with `prefix`,
  /// in lexicographic order (names included, so renames change the hash).
  std::uint64_t prefix_hash(const std::string& prefix) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, e] : entries_) {
      if (name.rfind(prefix, 0) != 0) continue;
      h = fnv1a(name.data(), name.size(), h);
      h = fnv1a(e.value.data.data(), e.value.data.size() * sizeof(T), h);
    }
    return h;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

 private:
  std::map<std::string, Entry> entries_;
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

/// Bias-corrected Adam. Steps only non-frozen entries; a gradient supplied
/// for a frozen tensor is ignored.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& params, const GradMap<T>& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, entry] : params) {
      if (entry.frozen) continue;
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Tensor<T>& g = git->second;
      require(g.same_shape(entry.value), errc::shape_mismatch, "adam: grad shape for " + name);
      auto& st = state_[name];
      if (st.m.numel() != g.numel()) {
        st.m = Tensor<double>::zeros(g.shape);
        st.v = Tensor<double>::zeros(g.shape);
      }
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double gi = static_cast<double>(g.data[i]);
        st.m.data[i] = b1_ * st.m.data[i] + (1.0 - b1_) * gi;
        st.v.data[i] = b2_ * st.v.data[i] + (1.0 - b2_) * gi * gi;
        double mhat = st.m.data[i] / bc1;
        double vhat = st.v.data[i] / bc2;
        entry.value.data[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    Tensor<double> m, v;
  };
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace skelflow
