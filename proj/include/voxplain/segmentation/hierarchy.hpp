#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "voxplain/segmentation/supervoxels.hpp"

namespace voxplain::seg {

/// One binary merge. Leaves are regions 1..K; merge i creates node K + 1 + i.
struct Merge {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  std::uint32_t parent = 0;
  double height = 0.0;
};

struct MergeTree {
  std::uint32_t leaf_count = 0;
  std::vector<Merge> merges;  // in merge order; heights non-decreasing
};

/// Greedy agglomeration on the region adjacency graph. The pair with the
/// weakest boundary (mean absolute intensity difference over shared faces)
/// merges first, ties going to the smaller id pair. Merge heights are
/// max(boundary strength, previous height), which makes the tree
/// ultrametric.
inline MergeTree build_merge_tree(const SupervoxelLabeling& l, const Volume& v) {
  require_same_dims(l.dims(), v.dims(), "build_merge_tree");
  const Dims3& d = v.dims();
  struct Boundary {
    double sum = 0.0;
    std::size_t faces = 0;
    double strength() const { return sum / static_cast<double>(faces); }
  };
  using Key = std::pair<std::uint32_t, std::uint32_t>;
  std::map<Key, Boundary> edges;
  auto add_face = [&](std::size_t i, std::size_t j) {
    std::uint32_t a = l.labels[i];
    std::uint32_t b = l.labels[j];
    if (a == b) return;
    if (a > b) std::swap(a, b);
    auto& e = edges[{a, b}];
    e.sum += std::abs(v[i] - v[j]);
    ++e.faces;
  };
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const std::size_t i = linear_index(d, x, y, z);
        if (x + 1 < d.x) add_face(i, linear_index(d, x + 1, y, z));
        if (y + 1 < d.y) add_face(i, linear_index(d, x, y + 1, z));
        if (z + 1 < d.z) add_face(i, linear_index(d, x, y, z + 1));
      }
    }
  }

  MergeTree tree;
  tree.leaf_count = l.region_count;
  std::uint32_t next_id = l.region_count + 1;
  double previous = -std::numeric_limits<double>::infinity();
  for (std::uint32_t active = l.region_count; active > 1; --active) {
    if (edges.empty()) {
      throw DataError("build_merge_tree: region adjacency graph is disconnected");
    }
    auto best = edges.begin();
    double best_s = best->second.strength();
    for (auto it = std::next(edges.begin()); it != edges.end(); ++it) {
      const double s = it->second.strength();
      if (s < best_s) {  // map order gives the smaller pair on ties
        best = it;
        best_s = s;
      }
    }
    const auto [a, b] = best->first;
    const std::uint32_t parent = next_id++;
    const double height = std::max(best_s, previous);
    previous = height;
    tree.merges.push_back({a, b, parent, height});

    std::map<Key, Boundary> next;
    for (const auto& [key, e] : edges) {
      std::uint32_t p = key.first;
      std::uint32_t q = key.second;
      if (p == a || p == b) p = parent;
      if (q == a || q == b) q = parent;
      if (p == q) continue;
      if (p > q) std::swap(p, q);
      auto& ne = next[{p, q}];
      ne.sum += e.sum;
      ne.faces += e.faces;
    }
    edges = std::move(next);
  }
  return tree;
}

/// Nested partitions H_1 (finest) .. H_N (coarsest).
struct SegmentationHierarchy {
  std::vector<LabelGrid> levels;
  std::vector<std::uint32_t> segment_counts;
  std::vector<std::size_t> merges_applied;
  std::vector<double> cut_heights;  // -inf for the base level

  std::size_t level_count() const noexcept { return levels.size(); }
  const Dims3& dims() const { return levels.at(0).dims(); }
  std::size_t total_segments() const {
    return std::accumulate(segment_counts.begin(), segment_counts.end(), std::size_t{0});
  }
};

inline constexpr std::size_t kMaxLevels = 20;

/// Labeling obtained by applying the first `applied` merges to the leaves.
inline LabelGrid cut_tree(const MergeTree& t, const LabelGrid& base, std::size_t applied) {
  const std::size_t nodes = t.leaf_count + t.merges.size() + 1;
  std::vector<std::uint32_t> owner(nodes);
  std::iota(owner.begin(), owner.end(), 0u);
  for (std::size_t m = 0; m < applied; ++m) {
    const auto& mg = t.merges[m];
    owner[mg.a] = mg.parent;
    owner[mg.b] = mg.parent;
  }
  auto find = [&](std::uint32_t x) {
    while (owner[x] != x) x = owner[x];
    return x;
  };
  LabelGrid out = base;
  for (auto& lab : out) lab = find(lab);
  compact_labels(out);
  return out;
}

/// Cuts the tree at N heights spaced evenly over the quantiles of the merge
/// heights. Level 1 is the base labeling; identical levels are dropped, so
/// the result may hold fewer than N levels.
inline SegmentationHierarchy extract_hierarchy(const MergeTree& t, const SupervoxelLabeling& base,
                                               std::size_t n_levels) {
  if (n_levels < 1 || n_levels > kMaxLevels) {
    throw std::invalid_argument("extract_hierarchy: level count must lie in [1, 20]");
  }
  if (t.leaf_count != base.region_count) {
    throw std::invalid_argument("extract_hierarchy: tree and labeling disagree on region count");
  }
  const std::size_t M = t.merges.size();
  SegmentationHierarchy h;
  auto push = [&](std::size_t applied, double height) {
    if (!h.merges_applied.empty() && h.merges_applied.back() == applied) return;
    LabelGrid lab = applied == 0 ? base.labels : cut_tree(t, base.labels, applied);
    h.segment_counts.push_back(base.region_count - static_cast<std::uint32_t>(applied));
    h.merges_applied.push_back(applied);
    h.cut_heights.push_back(height);
    h.levels.push_back(std::move(lab));
  };
  push(0, -std::numeric_limits<double>::infinity());
  if (M > 0) {
    for (std::size_t n = 2; n <= n_levels; ++n) {
      const double q = static_cast<double>(n - 1) / static_cast<double>(n_levels - 1);
      const auto idx = static_cast<std::size_t>(std::lround(q * static_cast<double>(M - 1)));
      const double height = t.merges[idx].height;
      // All merges at or below the cut height; heights are sorted.
      std::size_t applied = idx + 1;
      while (applied < M && t.merges[applied].height <= height) ++applied;
      push(applied, height);
    }
  }
  return h;
}

/// Oversegmentation, agglomeration and level extraction in one call.
inline SegmentationHierarchy segment_volume(const Volume& v, std::size_t n_seeds = 300,
                                            std::size_t n_levels = 10, std::uint64_t seed = 0) {
  const auto base = oversegment(v, n_seeds, seed);
  const auto tree = build_merge_tree(base, v);
  return extract_hierarchy(tree, base, n_levels);
}

}  // namespace voxplain::seg
