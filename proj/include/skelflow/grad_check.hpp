// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "skelflow/tape.hpp"

namespace skelflow {

/// Builds a graph from leaf ids and returns the output node id.
using GraphBuilder = std::function<int(Tape<double>&, const std::vector<int>&)>;

/// Central finite differences against the tape gradient, on a random scalar
/// projection of the output. Inputs are perturbed entry by entry. Relative
/// error uses max(1, |analytic|, |numeric|) as the denominator. Double
/// precision only; eps defaults to 1e-5.
inline double grad_check_fn(const GraphBuilder& build, std::vector<Tensor<double>> inputs,
                            double eps = 1e-5, std::uint64_t seed = 0x5eed) {
  auto eval = [&](const std::vector<Tensor<double>>& xs, const Tensor<double>& r) {
    Tape<double> t;
    std::vector<int> ids;
    ids.reserve(xs.size());
    for (const auto& x : xs) ids.push_back(t.leaf(x, false));
    int out = build(t, ids);
    int loss = t.dot_const(out, r);
    return t.val(loss).data[0];
  };

  // analytic pass
  Tape<double> t;
  std::vector<int> ids;
  for (const auto& x : inputs) ids.push_back(t.leaf(x, true));
  int out = build(t, ids);
  Rng rng(seed);
  Tensor<double> r(t.val(out).shape);
  rng.normal_fill(r.data.data(), r.numel());
  int loss = t.dot_const(out, r);
  t.backward(loss);

  double max_rel = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& ga = t.grad(ids[i]);
    for (std::size_t e = 0; e < inputs[i].numel(); ++e) {
      double keep = inputs[i].data[e];
      inputs[i].data[e] = keep + eps;
      double lp = eval(inputs, r);
      inputs[i].data[e] = keep - eps;
      double lm = eval(inputs, r);
      inputs[i].data[e] = keep;
      double gn = (lp - lm) / (2.0 * eps);
      double a = ga.data[e];
      if (!std::isfinite(gn) || !std::isfinite(a))
        fail(errc::non_finite_gradient, "finite-difference check hit NaN/Inf");
      double rel = std::abs(a - gn) / std::max({1.0, std::abs(a), std::abs(gn)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

/// Named dispatcher over the layer primitives, with canonical input layouts:
///   linear:              {x MxK, w KxN, b N}
///   embedding_lookup:    {table KxF}            (indices required)
///   layer_norm:          {x MxF, scale F, shift F}
///   softmax_rows:        {x MxN}
///   gelu:                {x}
///   add_row:             {x MxF, r F}
///   pair_bias:           {q NxF, k NxF, tq RxF, tk RxF}   (indices required)
///   biased_attention:    {q, k, v [, sb [, vb]]}  by argument count
///   multihead_attention: {q, k, v}              (heads from `heads`)
inline double grad_check(const std::string& opname, std::vector<Tensor<double>> inputs,
                         double eps = 1e-5, const ITensor* indices = nullptr, int heads = 2,
                         std::uint64_t seed = 0x5eed) {
  GraphBuilder build;
  if (opname == "linear") {
    build = [](Tape<double>& t, const std::vector<int>& v) { return t.linear(v[0], v[1], v[2]); };
  } else if (opname == "embedding_lookup") {
    require(indices != nullptr, errc::config_mismatch, "embedding_lookup check needs indices");
    ITensor idx = *indices;
    build = [idx](Tape<double>& t, const std::vector<int>& v) {
      return t.embedding_lookup(v[0], idx);
    };
  } else if (opname == "layer_norm") {
    build = [](Tape<double>& t, const std::vector<int>& v) {
      return t.layer_norm(v[0], v[1], v[2]);
    };
  } else if (opname == "softmax_rows") {
    build = [](Tape<double>& t, const std::vector<int>& v) { return t.softmax_rows(v[0]); };
  } else if (opname == "gelu") {
    build = [](Tape<double>& t, const std::vector<int>& v) { return t.gelu(v[0]); };
  } else if (opname == "add_row") {
    build = [](Tape<double>& t, const std::vector<int>& v) { return t.add_row(v[0], v[1]); };
  } else if (opname == "pair_bias") {
    require(indices != nullptr, errc::config_mismatch, "pair_bias check needs indices");
    ITensor idx = *indices;
    build = [idx](Tape<double>& t, const std::vector<int>& v) {
      return t.pair_bias(v[0], v[1], v[2], v[3], idx);
    };
  } else if (opname == "biased_attention") {
    std::size_t n = inputs.size();
    build = [n](Tape<double>& t, const std::vector<int>& v) {
      int sb = n >= 4 ? v[3] : -1;
      int vb = n >= 5 ? v[4] : -1;
      return t.biased_attention(v[0], v[1], v[2], sb, vb);
    };
  } else if (opname == "multihead_attention") {
    build = [heads](Tape<double>& t, const std::vector<int>& v) {
      return t.multihead_attention(v[0], v[1], v[2], heads);
    };
  } else {
    fail(errc::config_mismatch, "grad_check: unknown op " + opname);
  }
  return grad_check_fn(build, std::move(inputs), eps, seed);
}

}  // namespace skelflow
