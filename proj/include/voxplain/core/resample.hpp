#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "voxplain/core/grid.hpp"

namespace voxplain {

namespace detail {

struct AxisSample {
  int lo;
  int hi;
  double frac;
};

// Align-corners mapping of target index t onto the source axis.
inline AxisSample axis_sample(int t, int target_n, int source_n) {
  if (source_n == 1 || target_n == 1) {
    return {0, 0, 0.0};
  }
  const double pos = static_cast<double>(t) * static_cast<double>(source_n - 1) /
                     static_cast<double>(target_n - 1);
  int lo = static_cast<int>(std::floor(pos));
  lo = std::clamp(lo, 0, source_n - 1);
  const int hi = std::min(lo + 1, source_n - 1);
  const double frac = std::clamp(pos - lo, 0.0, 1.0);
  return {lo, hi, frac};
}

}  // namespace detail

/// Trilinear resampling with corner voxels of source and target aligned.
/// Affine fields are reproduced exactly (up to rounding) and outputs stay
/// within the source value range.
template <typename T>
Grid3<T> trilinear_upsample(const Grid3<T>& g, Dims3 target) {
  if (!target.positive()) {
    throw std::invalid_argument("trilinear_upsample: target dims must be positive, got " +
                                target.str());
  }
  const Dims3& s = g.dims();
  const auto [lo_it, hi_it] = std::minmax_element(g.begin(), g.end());
  const double vmin = static_cast<double>(*lo_it);
  const double vmax = static_cast<double>(*hi_it);
  Grid3<T> out(target);
  std::vector<detail::AxisSample> ax(target.x), ay(target.y), az(target.z);
  for (int i = 0; i < target.x; ++i) ax[i] = detail::axis_sample(i, target.x, s.x);
  for (int i = 0; i < target.y; ++i) ay[i] = detail::axis_sample(i, target.y, s.y);
  for (int i = 0; i < target.z; ++i) az[i] = detail::axis_sample(i, target.z, s.z);

  for (int z = 0; z < target.z; ++z) {
    const auto& sz = az[z];
    for (int y = 0; y < target.y; ++y) {
      const auto& sy = ay[y];
      for (int x = 0; x < target.x; ++x) {
        const auto& sx = ax[x];
        auto lerp_x = [&](int yy, int zz) {
          const double a = static_cast<double>(g(sx.lo, yy, zz));
          const double b = static_cast<double>(g(sx.hi, yy, zz));
          return a + (b - a) * sx.frac;
        };
        const double c00 = lerp_x(sy.lo, sz.lo);
        const double c10 = lerp_x(sy.hi, sz.lo);
        const double c01 = lerp_x(sy.lo, sz.hi);
        const double c11 = lerp_x(sy.hi, sz.hi);
        const double c0 = c00 + (c10 - c00) * sy.frac;
        const double c1 = c01 + (c11 - c01) * sy.frac;
        out(x, y, z) = static_cast<T>(std::clamp(c0 + (c1 - c0) * sz.frac, vmin, vmax));
      }
    }
  }
  return out;
}

}  // namespace voxplain
