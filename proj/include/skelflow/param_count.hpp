// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "skelflow/dims.hpp"

namespace skelflow {

/// One row of the trainable-parameter breakdown.
struct ParamCountRow {
  std::string layer;
  int units;
  std::int64_t per_unit;
  std::int64_t total;
};

struct ParamCountTable {
  std::vector<ParamCountRow> rows;
  std::int64_t total = 0;

  std::int64_t row_total(const std::string& layer) const {
    for (const auto& r : rows)
      if (r.layer == layer) return r.total;
    fail(errc::config_mismatch, "no accounting row named " + layer);
  }
  std::int64_t row_per_unit(const std::string& layer) const {
    for (const auto& r : rows)
      if (r.layer == layer) return r.per_unit;
    fail(errc::config_mismatch, "no accounting row named " + layer);
  }
};

/// Parameters in the six topology code tables of one encoder attention unit:
/// (d_max+1) distance codes and n_relations relation codes, each with
/// query/key/value tables of width F.
inline std::int64_t codebook_params(const ModelDims& d) {
  return static_cast<std::int64_t>(d.d_max + 1 + d.n_relations) * 3 * d.feature_dim;
}

/// Trainable-parameter accounting. Pure function of the dimensions; linear
/// layers carry biases (F*F + F per projection), layer norms carry 2F.
inline ParamCountTable count_params(const ModelDims& d) {
  d.validate();
  std::int64_t F = d.feature_dim;
  std::int64_t proj = F * F + F;        // one linear projection with bias
  std::int64_t ln = 2 * F;              // layer norm scale + shift
  std::int64_t ffn = 2 * d.ffn_multiplier * F * F + d.ffn_multiplier * F + F;

  ParamCountTable t;
  auto add = [&t](const std::string& layer, int units, std::int64_t per_unit) {
    t.rows.push_back({layer, units, per_unit, per_unit * units});
    t.total += per_unit * units;
  };
  add("Topology-Aware Attention", d.n_encoder_units, 4 * proj + codebook_params(d));
  add("Feed-Forward Network", d.n_encoder_units, ffn);
  add("LayerNorms (Encoder)", 2 * d.n_encoder_units, ln);
  add("Skeletal Cross-Attention", d.backbone_blocks, 4 * proj);
  add("Zero-Initialized Linear", d.backbone_blocks, proj);
  add("LayerNorms (Adapter)", 2 * d.backbone_blocks, ln);
  return t;
}

inline std::string format_param_table(const ParamCountTable& t) {
  std::ostringstream os;
  auto commas = [](std::int64_t v) {
    std::string s = std::to_string(v);
    std::string out;
    int c = 0;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
      out += s[static_cast<std::size_t>(i)];
      if (++c % 3 == 0 && i > 0) out += ',';
    }
    return std::string(out.rbegin(), out.rend());
  };
  os << "Layer                      Count  Params/Unit        Total\n";
  for (const auto& r : t.rows) {
    os << r.layer;
    for (std::size_t i = r.layer.size(); i < 25; ++i) os << ' ';
    std::string cnt = "x" + std::to_string(r.units);
    for (std::size_t i = cnt.size(); i < 6; ++i) os << ' ';
    os << cnt;
    std::string pu = commas(r.per_unit);
    for (std::size_t i = pu.size(); i < 13; ++i) os << ' ';
    os << pu;
    std::string tot = commas(r.total);
    for (std::size_t i = tot.size(); i < 13; ++i) os << ' ';
    os << tot << "\n";
  }
  os << "Total Trainable";
  for (std::size_t i = std::string("Total Trainable").size(); i < 44; ++i) os << ' ';
  std::string tot = commas(t.total);
  for (std::size_t i = tot.size(); i < 13; ++i) os << ' ';
  os << tot << "\n";
  return os.str();
}

}  // namespace skelflow
