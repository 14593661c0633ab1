// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "skelflow/error.hpp"
#include "skelflow/rng.hpp"
#include "skelflow/tensor.hpp"

namespace skelflow {

using Vec3 = std::array<double, 3>;

inline double dist3(const Vec3& a, const Vec3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Rooted-tree skeleton: joint coordinates in [-0.5, 0.5]^3 plus a parent
/// array with parents[root] == -1. Construct through validate_skeleton.
struct Skeleton {
  std::vector<Vec3> joints;
  std::vector<int> parents;

  int size() const { return static_cast<int>(joints.size()); }
  int root() const {
    for (int i = 0; i < size(); ++i)
      if (parents[static_cast<std::size_t>(i)] < 0) return i;
    return -1;
  }

  std::vector<std::vector<int>> children() const {
    std::vector<std::vector<int>> ch(joints.size());
    for (int i = 0; i < size(); ++i) {
      int p = parents[static_cast<std::size_t>(i)];
      if (p >= 0) ch[static_cast<std::size_t>(p)].push_back(i);
    }
    return ch;
  }

  bool is_leaf(int i) const {
    for (int j = 0; j < size(); ++j)
      if (parents[static_cast<std::size_t>(j)] == i) return false;
    return true;
  }
};

enum RelationCode : int {
  kRelSelf = 0,
  kRelParent = 1,
  kRelChild = 2,
  kRelSibling = 3,
  kRelDistant = 4,
  kRelEndEffector = 5,
};

constexpr int kNumRelations = 6;
constexpr int kDefaultDMax = 5;
constexpr double kCoordBound = 0.5;

/// Pairwise topology codes: clipped tree distances D and relation codes R.
struct TopologyMatrices {
  ITensor distance;  // NxN in [0, d_max]
  ITensor relation;  // NxN in [0, 5]
  int d_max = kDefaultDMax;
};

inline Skeleton validate_skeleton(const std::vector<Vec3>& joints,
                                  const std::vector<int>& parents) {
  const int n = static_cast<int>(joints.size());
  require(n >= 1, errc::invalid_joint_count, "skeleton needs at least one joint");
  require(parents.size() == joints.size(), errc::index_out_of_range,
          "parents length does not match joint count");

  int root = -1;
  for (int i = 0; i < n; ++i) {
    int p = parents[static_cast<std::size_t>(i)];
    if (p == -1) {
      require(root < 0, errc::multiple_roots, "more than one root joint");
      root = i;
    } else {
      require(p >= 0 && p < n, errc::index_out_of_range,
              "parent index " + std::to_string(p) + " out of range");
      require(p != i, errc::cycle_detected, "joint " + std::to_string(i) + " is its own parent");
    }
  }
  require(root >= 0, errc::cycle_detected, "no root joint (parent array is cyclic)");

  for (int i = 0; i < n; ++i) {
    const Vec3& v = joints[static_cast<std::size_t>(i)];
    for (double c : v) {
      require(std::isfinite(c), errc::non_finite_coordinate,
              "joint " + std::to_string(i) + " has a non-finite coordinate");
      require(c >= -kCoordBound && c <= kCoordBound, errc::coordinate_out_of_bounds,
              "joint " + std::to_string(i) + " outside [-0.5,0.5]^3");
    }
  }

  // every joint must reach the root, otherwise the parent map hides a cycle
  Skeleton s{joints, parents};
  auto ch = s.children();
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> queue{root};
  seen[static_cast<std::size_t>(root)] = 1;
  int visited = 0;
  while (!queue.empty()) {
    int cur = queue.front();
    queue.pop_front();
    ++visited;
    for (int c : ch[static_cast<std::size_t>(cur)])
      if (!seen[static_cast<std::size_t>(c)]) {
        seen[static_cast<std::size_t>(c)] = 1;
        queue.push_back(c);
      }
  }
  require(visited == n, errc::cycle_detected, "parent array contains a cycle");
  return s;
}

/// Clipped all-pairs tree distance: D[i][j] = min(path edges, d_max).
inline ITensor topo_distance_matrix(const Skeleton& skel, int d_max = kDefaultDMax) {
  require(d_max >= 1, errc::out_of_range, "d_max must be >= 1");
  const int n = skel.size();
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int p = skel.parents[static_cast<std::size_t>(i)];
    if (p >= 0) {
      adj[static_cast<std::size_t>(i)].push_back(p);
      adj[static_cast<std::size_t>(p)].push_back(i);
    }
  }
  ITensor d({n, n});
  std::vector<int> dist(static_cast<std::size_t>(n));
  for (int src = 0; src < n; ++src) {
    std::fill(dist.begin(), dist.end(), -1);
    dist[static_cast<std::size_t>(src)] = 0;
    std::deque<int> queue{src};
    while (!queue.empty()) {
      int cur = queue.front();
      queue.pop_front();
      for (int nb : adj[static_cast<std::size_t>(cur)])
        if (dist[static_cast<std::size_t>(nb)] < 0) {
          dist[static_cast<std::size_t>(nb)] = dist[static_cast<std::size_t>(cur)] + 1;
          queue.push_back(nb);
        }
    }
    for (int j = 0; j < n; ++j)
      d.at(src, j) = std::min(dist[static_cast<std::size_t>(j)], d_max);
  }
  return d;
}

/// Relation codes per ordered pair. Diagonal: End-Effector for leaves, Self
/// otherwise; off-diagonal precedence Parent, Child, Sibling, then Distant.
inline ITensor relation_matrix(const Skeleton& skel) {
  const int n = skel.size();
  std::vector<char> leaf(static_cast<std::size_t>(n), 1);
  for (int i = 0; i < n; ++i) {
    int p = skel.parents[static_cast<std::size_t>(i)];
    if (p >= 0) leaf[static_cast<std::size_t>(p)] = 0;
  }
  ITensor r({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int code;
      if (i == j) {
        code = leaf[static_cast<std::size_t>(i)] ? kRelEndEffector : kRelSelf;
      } else if (skel.parents[static_cast<std::size_t>(i)] == j) {
        code = kRelParent;  // j is the parent of i
      } else if (skel.parents[static_cast<std::size_t>(j)] == i) {
        code = kRelChild;  // j is a child of i
      } else if (skel.parents[static_cast<std::size_t>(i)] >= 0 &&
                 skel.parents[static_cast<std::size_t>(i)] ==
                     skel.parents[static_cast<std::size_t>(j)]) {
        code = kRelSibling;
      } else {
        code = kRelDistant;
      }
      r.at(i, j) = code;
    }
  }
  return r;
}

inline TopologyMatrices make_topology(const Skeleton& skel, int d_max = kDefaultDMax) {
  return TopologyMatrices{topo_distance_matrix(skel, d_max), relation_matrix(skel), d_max};
}

/// One (parent, child) pair per non-root joint, in child index order.
inline std::vector<std::pair<int, int>> bone_list(const Skeleton& skel) {
  std::vector<std::pair<int, int>> bones;
  for (int i = 0; i < skel.size(); ++i) {
    int p = skel.parents[static_cast<std::size_t>(i)];
    if (p >= 0) bones.emplace_back(p, i);
  }
  return bones;
}

enum class TreeFamily : int { chain = 0, star = 1, quadruped = 2, random = 3 };

inline const char* family_name(TreeFamily f) {
  switch (f) {
    case TreeFamily::chain: return "chain";
    case TreeFamily::star: return "star";
    case TreeFamily::quadruped: return "quadruped";
    case TreeFamily::random: return "random";
  }
  return "?";
}

constexpr int kMinJointsDefault = 4;
constexpr int kMaxJointsDefault = 12;
constexpr double kBoneMin = 0.08;
constexpr double kBoneMax = 0.35;

namespace detail {

inline Vec3 random_unit(Rng& rng) {
  while (true) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-9) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

inline bool in_bounds(const Vec3& v) {
  return v[0] >= -kCoordBound && v[0] <= kCoordBound && v[1] >= -kCoordBound &&
         v[1] <= kCoordBound && v[2] >= -kCoordBound && v[2] <= kCoordBound;
}

/// Place a child at bone length in [kBoneMin, kBoneMax] from `parent`,
/// staying inside the coordinate box. `bias` nudges the direction (legs point
/// down for quadrupeds). Falls back to stepping toward the origin.
inline Vec3 place_child(Rng& rng, const Vec3& parent, const Vec3& bias) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Vec3 dir = random_unit(rng);
    dir = {dir[0] + bias[0], dir[1] + bias[1], dir[2] + bias[2]};
    double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    if (len < 1e-9) continue;
    double bone = rng.uniform(kBoneMin, kBoneMax);
    Vec3 c{parent[0] + dir[0] / len * bone, parent[1] + dir[1] / len * bone,
           parent[2] + dir[2] / len * bone};
    if (in_bounds(c)) return c;
  }
  double pn = std::sqrt(parent[0] * parent[0] + parent[1] * parent[1] + parent[2] * parent[2]);
  double bone = kBoneMin;
  if (pn < 1e-9) return {bone, 0.0, 0.0};
  double f = 1.0 - bone / pn;
  return {parent[0] * f, parent[1] * f, parent[2] * f};
}

inline std::vector<int> family_parents(Rng& rng, int n, TreeFamily family) {
  std::vector<int> parents(static_cast<std::size_t>(n), -1);
  switch (family) {
    case TreeFamily::chain:
      for (int i = 1; i < n; ++i) parents[static_cast<std::size_t>(i)] = i - 1;
      break;
    case TreeFamily::star:
      for (int i = 1; i < n; ++i) parents[static_cast<std::size_t>(i)] = 0;
      break;
    case TreeFamily::quadruped: {
      // hip(0) - shoulder(1) spine, legs attached alternately, extra joints
      // extend the legs round-robin
      if (n > 1) parents[1] = 0;
      const int anchors[4] = {0, 0, 1, 1};
      std::vector<int> leg_tip;
      for (int i = 2; i < n; ++i) {
        int k = i - 2;
        if (k < 4) {
          parents[static_cast<std::size_t>(i)] = anchors[k];
          leg_tip.push_back(i);
        } else {
          int leg = k % static_cast<int>(leg_tip.size());
          parents[static_cast<std::size_t>(i)] = leg_tip[static_cast<std::size_t>(leg)];
          leg_tip[static_cast<std::size_t>(leg)] = i;
        }
      }
      break;
    }
    case TreeFamily::random:
      for (int i = 1; i < n; ++i) parents[static_cast<std::size_t>(i)] = rng.uniform_int(i);
      break;
  }
  return parents;
}

}  // namespace detail

/// Deterministic random skeleton: topology from the family pattern, joint
/// positions with bone lengths in [0.08, 0.35] inside the coordinate box.
inline Skeleton sample_random_tree(std::uint64_t seed, int n_joints, TreeFamily family,
                                   int min_joints = kMinJointsDefault,
                                   int max_joints = kMaxJointsDefault) {
  require(n_joints >= min_joints && n_joints <= max_joints, errc::invalid_joint_count,
          "n_joints " + std::to_string(n_joints) + " outside [" + std::to_string(min_joints) +
              "," + std::to_string(max_joints) + "]");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(family), static_cast<std::uint64_t>(n_joints)));
  std::vector<int> parents = detail::family_parents(rng, n_joints, family);

  std::vector<Vec3> joints(static_cast<std::size_t>(n_joints));
  joints[0] = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
  for (int i = 1; i < n_joints; ++i) {
    Vec3 bias{0, 0, 0};
    if (family == TreeFamily::quadruped)  // spine along +x, legs biased down
      bias = (i == 1) ? Vec3{0.9, 0, 0} : Vec3{0, 0, -0.8};
    joints[static_cast<std::size_t>(i)] =
        detail::place_child(rng, joints[static_cast<std::size_t>(parents[static_cast<std::size_t>(i)])], bias);
  }
  return validate_skeleton(joints, parents);
}

// ---- text format ---------------------------------------------------------
// Line 1: joint count N. Then N lines "x y z parent" with parent == -1 for
// the root. UTF-8, LF line endings.

inline std::string skeleton_to_text(const Skeleton& skel) {
  std::ostringstream os;
  os.precision(17);
  os << skel.size() << "\n";
  for (int i = 0; i < skel.size(); ++i) {
    const Vec3& v = skel.joints[static_cast<std::size_t>(i)];
    os << v[0] << " " << v[1] << " " << v[2] << " " << skel.parents[static_cast<std::size_t>(i)]
       << "\n";
  }
  return os.str();
}

inline Skeleton skeleton_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  require(next_line(), errc::corrupt_sample, "skeleton text: missing joint count (line 1)");
  int n = 0;
  {
    std::istringstream ls(line);
    require(static_cast<bool>(ls >> n) && n >= 1, errc::corrupt_sample,
            "skeleton text: bad joint count at line " + std::to_string(line_no));
  }
  std::vector<Vec3> joints;
  std::vector<int> parents;
  for (int i = 0; i < n; ++i) {
    require(next_line(), errc::corrupt_sample,
            "skeleton text: expected joint line " + std::to_string(i + 2));
    std::istringstream ls(line);
    Vec3 v;
    int p;
    require(static_cast<bool>(ls >> v[0] >> v[1] >> v[2] >> p), errc::corrupt_sample,
            "skeleton text: malformed joint at line " + std::to_string(line_no));
    joints.push_back(v);
    parents.push_back(p);
  }
  return validate_skeleton(joints, parents);
}

inline Skeleton load_skeleton_text(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), errc::io_error, "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return skeleton_from_text(text);
}

inline void save_skeleton_text(const std::string& path, const Skeleton& skel) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), errc::io_error, "cannot write " + path);
  out << skeleton_to_text(skel);
}

}  // namespace skelflow
