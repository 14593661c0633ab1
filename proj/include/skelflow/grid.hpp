// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "skelflow/checkpoint.hpp"
#include "skelflow/error.hpp"
#include "skelflow/tensor.hpp"

namespace skelflow {

/// Binary occupancy grid, resolution V per side. Linear index x + V*(y + V*z).
struct OccupancyGrid {
  int resolution = 0;
  std::vector<std::uint8_t> bits;  // one byte per voxel, 0 or 1

  OccupancyGrid() = default;
  explicit OccupancyGrid(int v)
      : resolution(v),
        bits(static_cast<std::size_t>(v) * static_cast<std::size_t>(v) * static_cast<std::size_t>(v), 0) {}

  static std::size_t index(int v, int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(v) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(v) * static_cast<std::size_t>(z));
  }
  std::uint8_t get(int x, int y, int z) const { return bits[index(resolution, x, y, z)]; }
  void set(int x, int y, int z, bool on) { bits[index(resolution, x, y, z)] = on ? 1 : 0; }

  std::size_t count_occupied() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool empty() const { return count_occupied() == 0; }
  double occupied_fraction() const {
    return static_cast<double>(count_occupied()) / static_cast<double>(bits.size());
  }
  bool operator==(const OccupancyGrid& o) const {
    return resolution == o.resolution && bits == o.bits;
  }
};

/// Voxel center of cell (x,y,z) in normalized [-0.5, 0.5]^3 coordinates.
inline double voxel_center(int coord, int resolution) {
  return (static_cast<double>(coord) + 0.5) / static_cast<double>(resolution) - 0.5;
}

// ---- bit-packed serialization ---------------------------------------------
// Voxel i maps to bit (i % 8) of byte (i / 8), LSB first, padded to whole bytes.

inline std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

inline std::vector<std::uint8_t> unpack_bits(const std::uint8_t* bytes, std::size_t n_bits) {
  std::vector<std::uint8_t> out(n_bits, 0);
  for (std::size_t i = 0; i < n_bits; ++i)
    out[i] = (bytes[i / 8] >> (i % 8)) & 1u;
  return out;
}

// ---- occupancy container file ("OCC1") -------------------------------------
// magic "OCC1" | version u16 | V u16 | bit-packed V^3 voxels.

inline constexpr std::uint16_t kOccupancyVersion = 1;

inline std::string encode_occupancy_file(const OccupancyGrid& g) {
  std::string b;
  b += "OCC1";
  detail::put_u16(b, kOccupancyVersion);
  detail::put_u16(b, static_cast<std::uint16_t>(g.resolution));
  auto packed = pack_bits(g.bits);
  b.append(reinterpret_cast<const char*>(packed.data()), packed.size());
  return b;
}

inline OccupancyGrid decode_occupancy_file(const std::string& buf) {
  detail::Reader r(buf);
  require(buf.size() >= 4 && buf.compare(0, 4, "OCC1") == 0, errc::bad_magic,
          "not an occupancy file");
  r.take(4);
  std::uint16_t version = r.u16();
  require(version == kOccupancyVersion, errc::version_mismatch,
          "occupancy file version " + std::to_string(version));
  int v = static_cast<int>(r.u16());
  require(v >= 1, errc::corrupt_sample, "bad occupancy resolution");
  std::size_t n = static_cast<std::size_t>(v) * v * v;
  const char* raw = r.take((n + 7) / 8);
  OccupancyGrid g(v);
  g.bits = unpack_bits(reinterpret_cast<const std::uint8_t*>(raw), n);
  return g;
}

inline void save_occupancy(const std::string& path, const OccupancyGrid& g) {
  detail::write_file(path, encode_occupancy_file(g));
}

inline OccupancyGrid load_occupancy(const std::string& path) {
  return decode_occupancy_file(detail::read_file(path));
}

/// Plain point list of occupied voxel centers, one "v x y z" line per voxel.
inline std::string occupancy_point_list(const OccupancyGrid& g) {
  std::string out;
  char line[96];
  for (int z = 0; z < g.resolution; ++z)
    for (int y = 0; y < g.resolution; ++y)
      for (int x = 0; x < g.resolution; ++x)
        if (g.get(x, y, z)) {
          std::snprintf(line, sizeof line, "v %.6f %.6f %.6f\n", voxel_center(x, g.resolution),
                        voxel_center(y, g.resolution), voxel_center(z, g.resolution));
          out += line;
        }
  return out;
}

// ---- latent grid ------------------------------------------------------------

/// Dense latent over a (V/2)^3 cell grid with C channels per cell. Token i
/// corresponds to cell (x,y,z) via the same linear index as OccupancyGrid.
template <typename T>
struct LatentGrid {
  int resolution = 0;  // cells per side
  int channels = 0;
  Tensor<T> values;    // [tokens x channels]

  LatentGrid() = default;
  LatentGrid(int res, int ch)
      : resolution(res), channels(ch), values(Shape{res * res * res, ch}) {}

  int tokens() const { return resolution * resolution * resolution; }
  std::array<int, 3> position(int token) const {
    int v = resolution;
    return {token % v, (token / v) % v, token / (v * v)};
  }
};

// Fixed affine between pooled occupancy fraction p in [0,1] and latent
// channel 0: z = 2p - 1. No learned parameters.
inline constexpr double kLatentScale = 2.0;
inline constexpr double kLatentShift = -1.0;

/// Frozen analytic encoder: 2x2x2 average pool into channel 0 (affine-mapped),
/// remaining channels zero.
template <typename T>
inline LatentGrid<T> encode_occupancy(const OccupancyGrid& occ, int channels = 4) {
  require(occ.resolution >= 2 && occ.resolution % 2 == 0, errc::resolution_mismatch,
          "occupancy resolution must be even");
  require(channels >= 1, errc::config_mismatch, "need at least one latent channel");
  int d = occ.resolution / 2;
  LatentGrid<T> z(d, channels);
  for (int cz = 0; cz < d; ++cz)
    for (int cy = 0; cy < d; ++cy)
      for (int cx = 0; cx < d; ++cx) {
        int sum = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              sum += occ.get(2 * cx + dx, 2 * cy + dy, 2 * cz + dz);
        double p = static_cast<double>(sum) / 8.0;
        int token = static_cast<int>(OccupancyGrid::index(d, cx, cy, cz));
        z.values.at(token, 0) = static_cast<T>(kLatentScale * p + kLatentShift);
      }
  return z;
}

/// Frozen analytic decoder: inverse affine on channel 0, nearest-neighbor
/// upsample x2, binarize at `threshold`.
template <typename T>
inline OccupancyGrid decode_latent(const LatentGrid<T>& z, double threshold = 0.5) {
  require(z.values.all_finite(), errc::non_finite_value, "latent contains NaN/Inf");
  int d = z.resolution;
  int v = d * 2;
  OccupancyGrid occ(v);
  for (int cz = 0; cz < d; ++cz)
    for (int cy = 0; cy < d; ++cy)
      for (int cx = 0; cx < d; ++cx) {
        int token = static_cast<int>(OccupancyGrid::index(d, cx, cy, cz));
        double p = (static_cast<double>(z.values.at(token, 0)) - kLatentShift) / kLatentScale;
        bool on = p > threshold;
        if (on)
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) occ.set(2 * cx + dx, 2 * cy + dy, 2 * cz + dz, true);
      }
  return occ;
}

}  // namespace skelflow
