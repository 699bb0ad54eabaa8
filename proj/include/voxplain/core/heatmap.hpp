#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "voxplain/core/grid.hpp"

namespace voxplain {

/// Non-negative, finite importance scores on a voxel grid.
class Heatmap {
public:
  Heatmap() = default;

  explicit Heatmap(Dims3 dims) : grid_(dims, 0.0) {}

  explicit Heatmap(Grid3<double> scores) : grid_(std::move(scores)) {
    for (double s : grid_) {
      if (!std::isfinite(s) || s < 0.0) {
        throw DataError("heatmap scores must be finite and non-negative");
      }
    }
  }

  const Dims3& dims() const noexcept { return grid_.dims(); }
  std::size_t size() const noexcept { return grid_.size(); }
  const Grid3<double>& grid() const noexcept { return grid_; }
  std::span<const double> scores() const noexcept { return grid_.values(); }
  double operator[](std::size_t i) const noexcept { return grid_[i]; }
  double operator()(int x, int y, int z) const noexcept { return grid_(x, y, z); }

  std::pair<double, double> range() const {
    const auto [lo, hi] = std::minmax_element(grid_.begin(), grid_.end());
    return {*lo, *hi};
  }

  Index3 argmax() const {
    const auto it = std::max_element(grid_.begin(), grid_.end());
    return unravel(dims(), static_cast<std::size_t>(it - grid_.begin()));
  }

  friend bool operator==(const Heatmap&, const Heatmap&) = default;

private:
  Grid3<double> grid_;
};

/// Rescales scores linearly onto [0, 1]. A constant map becomes all zeros.
inline Heatmap minmax_normalize(const Heatmap& h) {
  Grid3<double> out(h.dims(), 0.0);
  const auto [lo, hi] = h.range();
  const double span = hi - lo;
  if (span > 0.0) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      out[i] = std::clamp((h[i] - lo) / span, 0.0, 1.0);
    }
  }
  return Heatmap(std::move(out));
}

/// Same rescaling applied to an arbitrary-sign grid.
template <typename T>
Grid3<double> minmax_normalize_grid(const Grid3<T>& g) {
  Grid3<double> out(g.dims(), 0.0);
  const auto [lo_it, hi_it] = std::minmax_element(g.begin(), g.end());
  const double lo = static_cast<double>(*lo_it);
  const double span = static_cast<double>(*hi_it) - lo;
  if (span > 0.0) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      out[i] = std::clamp((static_cast<double>(g[i]) - lo) / span, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace voxplain
