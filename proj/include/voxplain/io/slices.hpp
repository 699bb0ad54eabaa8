#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxplain/core/heatmap.hpp"
#include "voxplain/io/binary.hpp"

namespace voxplain::io {

/// horizontal: fixed z, image (x, y); sagittal: fixed x, image (y, z);
/// coronal: fixed y, image (x, z).
enum class Axis { horizontal, sagittal, coronal };

inline std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::horizontal: return "horizontal";
    case Axis::sagittal: return "sagittal";
    case Axis::coronal: return "coronal";
  }
  return "?";
}

inline Axis parse_axis(std::string_view s) {
  for (auto a : {Axis::horizontal, Axis::sagittal, Axis::coronal}) {
    if (axis_name(a) == s) return a;
  }
  throw std::invalid_argument("unknown slice axis '" + std::string(s) + "'");
}

inline int slice_depth(const Dims3& d, Axis a) {
  switch (a) {
    case Axis::horizontal: return d.z;
    case Axis::sagittal: return d.x;
    case Axis::coronal: return d.y;
  }
  return 0;
}

inline int center_index(int depth) { return depth / 2; }

struct GraySlice {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int col, int row) const {
    return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)];
  }
};

/// Voxel shown at image (col, row) of a slice.
inline Index3 slice_voxel(Axis a, int index, int col, int row) {
  switch (a) {
    case Axis::horizontal: return {col, row, index};
    case Axis::sagittal: return {index, col, row};
    case Axis::coronal: return {col, index, row};
  }
  return {};
}

/// Pixel = round(alpha * 255 * norm(h) + (1 - alpha) * 255 * norm(v)), with
/// both grids min-max normalized over the whole volume.
inline GraySlice render_slice(const Heatmap& h, const Volume& v, Axis axis, std::optional<int> index,
                              double alpha = 0.5) {
  require_same_dims(h.dims(), v.dims(), "export_slices");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  const Dims3& d = v.dims();
  const int depth = slice_depth(d, axis);
  const int at = index.value_or(center_index(depth));
  if (at < 0 || at >= depth) {
    throw std::invalid_argument(std::string(axis_name(axis)) + " slice index " + std::to_string(at) +
                                " out of range [0, " + std::to_string(depth) + ")");
  }
  const Heatmap hn = minmax_normalize(h);
  const Grid3<double> vn = minmax_normalize_grid(v);
  GraySlice s;
  s.width = axis == Axis::sagittal ? d.y : d.x;
  s.height = axis == Axis::horizontal ? d.y : d.z;
  s.pixels.resize(static_cast<std::size_t>(s.width) * static_cast<std::size_t>(s.height));
  for (int row = 0; row < s.height; ++row) {
    for (int col = 0; col < s.width; ++col) {
      const Index3 p = slice_voxel(axis, at, col, row);
      const double value = alpha * 255.0 * hn(p.x, p.y, p.z) + (1.0 - alpha) * 255.0 * vn(p.x, p.y, p.z);
      s.pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(s.width) + static_cast<std::size_t>(col)] =
          static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 255.0)));
    }
  }
  return s;
}

/// Binary 8-bit PGM.
inline void write_pgm(const GraySlice& s, const fs::path& path) {
  std::string bytes = "P5\n" + std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
  bytes.append(s.pixels.begin(), s.pixels.end());
  write_atomic(path, bytes);
}

inline GraySlice read_pgm(const fs::path& path) {
  const std::string bytes = read_file(path);
  GraySlice s;
  int maxval = 0;
  int consumed = 0;
  if (std::sscanf(bytes.c_str(), "P5 %d %d %d%n", &s.width, &s.height, &maxval, &consumed) != 3 || maxval != 255 ||
      s.width <= 0 || s.height <= 0) {
    throw DataError("'" + path.string() + "' is not an 8-bit binary PGM");
  }
  const std::size_t start = static_cast<std::size_t>(consumed) + 1;
  const std::size_t n = static_cast<std::size_t>(s.width) * static_cast<std::size_t>(s.height);
  if (bytes.size() != start + n) {
    throw DataError("'" + path.string() + "': length mismatch, expected " + std::to_string(start + n) +
                    " bytes, got " + std::to_string(bytes.size()));
  }
  s.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return s;
}

}  // namespace voxplain::io
