#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <random>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "voxplain/core/grid.hpp"

namespace voxplain::seg {

/// A partition of the grid into 6-connected regions labeled 1..region_count.
struct SupervoxelLabeling {
  LabelGrid labels;
  std::uint32_t region_count = 0;

  const Dims3& dims() const noexcept { return labels.dims(); }
};

/// Central-difference gradient magnitude (one-sided at the borders).
inline Grid3<double> gradient_magnitude(const Volume& v) {
  const Dims3& d = v.dims();
  Grid3<double> out(d, 0.0);
  auto diff = [&](int x, int y, int z, int axis) {
    const int n = d[axis];
    if (n == 1) return 0.0;
    int c[3] = {x, y, z};
    int lo[3] = {x, y, z};
    int hi[3] = {x, y, z};
    lo[axis] = std::max(0, c[axis] - 1);
    hi[axis] = std::min(n - 1, c[axis] + 1);
    return (v(hi[0], hi[1], hi[2]) - v(lo[0], lo[1], lo[2])) / static_cast<double>(hi[axis] - lo[axis]);
  };
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const double gx = diff(x, y, z, 0);
        const double gy = diff(x, y, z, 1);
        const double gz = diff(x, y, z, 2);
        out(x, y, z) = std::sqrt(gx * gx + gy * gy + gz * gz);
      }
    }
  }
  return out;
}

/// Visits the 6-connected in-bounds neighbors of linear index i.
template <typename Fn>
void for_each_neighbor(const Dims3& d, std::size_t i, Fn&& fn) {
  const Index3 p = unravel(d, i);
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(d.x);
  const std::size_t sz = static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y);
  if (p.x > 0) fn(i - sx);
  if (p.x + 1 < d.x) fn(i + sx);
  if (p.y > 0) fn(i - sy);
  if (p.y + 1 < d.y) fn(i + sy);
  if (p.z > 0) fn(i - sz);
  if (p.z + 1 < d.z) fn(i + sz);
}

/// Renumbers labels 1..K in order of first appearance in x-fastest scan.
inline std::uint32_t compact_labels(LabelGrid& labels) {
  std::vector<std::uint32_t> remap;
  std::uint32_t next = 0;
  for (auto& l : labels) {
    if (l >= remap.size()) remap.resize(static_cast<std::size_t>(l) + 1, 0);
    if (remap[l] == 0) remap[l] = ++next;
    l = remap[l];
  }
  return next;
}

namespace detail {

// Seeds per axis for a lattice of at most n_seeds points.
inline std::array<int, 3> lattice_counts(const Dims3& d, std::size_t n_seeds) {
  const double spacing = std::cbrt(static_cast<double>(d.count()) / static_cast<double>(n_seeds));
  std::array<int, 3> c{};
  for (int a = 0; a < 3; ++a) {
    c[a] = std::clamp(static_cast<int>(std::lround(d[a] / spacing)), 1, d[a]);
  }
  auto total = [&] { return static_cast<std::size_t>(c[0]) * c[1] * c[2]; };
  while (total() > n_seeds) {
    // Shrink the axis with the densest seeding.
    int best = 0;
    double dens = -1.0;
    for (int a = 0; a < 3; ++a) {
      const double r = c[a] > 1 ? static_cast<double>(c[a]) / d[a] : -1.0;
      if (r > dens) {
        dens = r;
        best = a;
      }
    }
    --c[best];
  }
  return c;
}

}  // namespace detail

/// Seeded watershed on the gradient-magnitude field. Seeds sit on a jittered
/// lattice of at most n_seeds points, each moved to the lowest-gradient
/// voxel nearby; regions then grow by priority flooding in order of
/// ascending gradient.
inline SupervoxelLabeling oversegment(const Volume& v, std::size_t n_seeds, std::uint64_t seed = 0) {
  const Dims3& d = v.dims();
  if (n_seeds < 1 || n_seeds > d.count()) {
    throw std::invalid_argument("oversegment: n_seeds must lie in [1, voxel count]");
  }
  require_finite(v);
  const Grid3<double> grad = gradient_magnitude(v);
  const auto counts = detail::lattice_counts(d, n_seeds);
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> seeds;
  for (int cz = 0; cz < counts[2]; ++cz) {
    for (int cy = 0; cy < counts[1]; ++cy) {
      for (int cx = 0; cx < counts[0]; ++cx) {
        const int cell[3] = {cx, cy, cz};
        int pos[3];
        int radius = 1 << 30;
        for (int a = 0; a < 3; ++a) {
          const double extent = static_cast<double>(d[a]) / counts[a];
          const int lo = static_cast<int>(std::floor(cell[a] * extent));
          const int hi = std::max(lo, static_cast<int>(std::ceil((cell[a] + 1) * extent)) - 1);
          const int jitter = static_cast<int>(extent / 4.0);
          std::uniform_int_distribution<int> j(-jitter, jitter);
          pos[a] = std::clamp(static_cast<int>(std::floor((cell[a] + 0.5) * extent)) + j(rng), lo, hi);
          radius = std::min(radius, std::max(1, static_cast<int>(extent / 2.0)));
        }
        // Move to the lowest gradient within the search radius.
        std::size_t best = linear_index(d, pos[0], pos[1], pos[2]);
        double best_g = grad[best];
        for (int z = std::max(0, pos[2] - radius); z <= std::min(d.z - 1, pos[2] + radius); ++z) {
          for (int y = std::max(0, pos[1] - radius); y <= std::min(d.y - 1, pos[1] + radius); ++y) {
            for (int x = std::max(0, pos[0] - radius); x <= std::min(d.x - 1, pos[0] + radius); ++x) {
              const std::size_t i = linear_index(d, x, y, z);
              if (grad[i] < best_g || (grad[i] == best_g && i < best)) {
                best = i;
                best_g = grad[i];
              }
            }
          }
        }
        seeds.push_back(best);
      }
    }
  }
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  LabelGrid labels(d, 0);
  using Item = std::tuple<double, std::uint64_t, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  std::uint64_t order = 0;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    labels[seeds[k]] = static_cast<std::uint32_t>(k + 1);
    queue.emplace(grad[seeds[k]], order++, seeds[k]);
  }
  while (!queue.empty()) {
    const auto [g, o, i] = queue.top();
    queue.pop();
    const std::uint32_t lab = labels[i];
    for_each_neighbor(d, i, [&](std::size_t nb) {
      if (labels[nb] == 0) {
        labels[nb] = lab;
        queue.emplace(grad[nb], order++, nb);
      }
    });
  }
  SupervoxelLabeling out;
  out.region_count = compact_labels(labels);
  out.labels = std::move(labels);
  return out;
}

}  // namespace voxplain::seg
