// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <string>
#include <vector>

#include "skelflow/error.hpp"
#include "skelflow/rng.hpp"

namespace skelflow {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major tensor. Plain value type; copy is a deep copy.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    require(data.size() == shape_numel(shape), errc::shape_mismatch,
            "tensor data length does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    rng.normal_fill(t.data.data(), t.data.size(), stddev);
    return t;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  // 2-D accessors (most of the codebase works on [rows x cols] views)
  int rows() const { return shape.size() >= 1 ? shape[0] : 1; }
  int cols() const {
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= static_cast<std::size_t>(shape[i]);
    return static_cast<int>(c);
  }
  T* row(int i) { return data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()); }
  const T* row(int i) const {
    return data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cols());
  }

  T& at(int i) { return data[static_cast<std::size_t>(i)]; }
  const T& at(int i) const { return data[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& x : data)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  bool bit_equal(const Tensor& o) const {
    return shape == o.shape &&
           std::memcmp(data.data(), o.data.data(), data.size() * sizeof(T)) == 0;
  }
};

/// Integer index tensor (embedding lookups, topology codes).
struct ITensor {
  Shape shape;
  std::vector<int> data;

  ITensor() = default;
  explicit ITensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0) {}
  ITensor(Shape s, std::vector<int> d) : shape(std::move(s)), data(std::move(d)) {
    require(data.size() == shape_numel(shape), errc::shape_mismatch, "index tensor size mismatch");
  }

  std::size_t numel() const { return data.size(); }
  int& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  int at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
};

// ---- fixed-order kernels ------------------------------------------------
// Reductions use four accumulator lanes combined in a fixed order, so every
// run of the same binary produces identical bits.

template <typename T>
inline T dot_fixed(const T* a, const T* b, int n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3));
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

/// y(MxN) += x(MxK) * w(KxN), row-major.
template <typename T>
inline void matmul_acc(const T* x, const T* w, T* y, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * K;
    T* yi = y + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      axpy(xi[k], w + static_cast<std::size_t>(k) * N, yi, N);
    }
  }
}

}  // namespace skelflow
