#pragma once

#include <algorithm>
#include <variant>
#include <vector>

#include "voxplain/core/grid.hpp"

namespace voxplain {

/// Axis-aligned box given by a center voxel and a half-extent per axis.
struct Cuboid {
  Index3 center;
  Index3 half_extent;
};

/// A set of voxels, either explicit linear indices or a cuboid. Cuboids are
/// clipped to the grid when expanded.
class VoxelRegion {
public:
  VoxelRegion() = default;
  explicit VoxelRegion(Cuboid c) : shape_(c) {}
  explicit VoxelRegion(std::vector<std::size_t> indices) : shape_(std::move(indices)) {}

  static VoxelRegion cube(Index3 center, int half_extent) {
    return VoxelRegion(Cuboid{center, {half_extent, half_extent, half_extent}});
  }

  bool is_cuboid() const noexcept { return std::holds_alternative<Cuboid>(shape_); }

  /// Inclusive per-axis bounds of a cuboid after clipping; lo > hi when empty.
  std::pair<Index3, Index3> clipped_bounds(const Dims3& d) const {
    const auto& c = std::get<Cuboid>(shape_);
    Index3 lo{std::max(0, c.center.x - c.half_extent.x), std::max(0, c.center.y - c.half_extent.y),
              std::max(0, c.center.z - c.half_extent.z)};
    Index3 hi{std::min(d.x - 1, c.center.x + c.half_extent.x),
              std::min(d.y - 1, c.center.y + c.half_extent.y),
              std::min(d.z - 1, c.center.z + c.half_extent.z)};
    return {lo, hi};
  }

  /// Sorted, in-bounds linear indices of the region on a grid of dims d.
  std::vector<std::size_t> expand(const Dims3& d) const {
    std::vector<std::size_t> out;
    if (const auto* idx = std::get_if<std::vector<std::size_t>>(&shape_)) {
      const std::size_t n = d.count();
      for (std::size_t i : *idx) {
        if (i < n) out.push_back(i);
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      return out;
    }
    const auto [lo, hi] = clipped_bounds(d);
    for (int z = lo.z; z <= hi.z; ++z) {
      for (int y = lo.y; y <= hi.y; ++y) {
        for (int x = lo.x; x <= hi.x; ++x) {
          out.push_back(linear_index(d, x, y, z));
        }
      }
    }
    return out;
  }

private:
  std::variant<std::vector<std::size_t>, Cuboid> shape_;
};

/// Copy of v with every voxel of r set to fill.
inline Volume occlude(const Volume& v, const VoxelRegion& r, double fill = 0.0) {
  Volume out = v;
  if (r.is_cuboid()) {
    const auto [lo, hi] = r.clipped_bounds(v.dims());
    for (int z = lo.z; z <= hi.z; ++z) {
      for (int y = lo.y; y <= hi.y; ++y) {
        for (int x = lo.x; x <= hi.x; ++x) {
          out(x, y, z) = fill;
        }
      }
    }
    return out;
  }
  for (std::size_t i : r.expand(v.dims())) {
    out[i] = fill;
  }
  return out;
}

}  // namespace voxplain
