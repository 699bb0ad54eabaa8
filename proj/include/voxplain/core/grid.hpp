#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxplain {

/// Thrown for malformed or inconsistent input data (bad files, shape
/// mismatches, non-finite values). The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Voxel counts along x, y, z.
struct Dims3 {
  int x = 1;
  int y = 1;
  int z = 1;

  constexpr std::size_t count() const noexcept {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) *
           static_cast<std::size_t>(z);
  }
  constexpr bool positive() const noexcept { return x > 0 && y > 0 && z > 0; }
  constexpr int operator[](int axis) const noexcept {
    return axis == 0 ? x : (axis == 1 ? y : z);
  }
  friend constexpr bool operator==(const Dims3&, const Dims3&) = default;

  std::string str() const {
    return std::to_string(x) + "x" + std::to_string(y) + "x" + std::to_string(z);
  }
};

constexpr Dims3 cube(int n) noexcept { return {n, n, n}; }

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;
  friend constexpr bool operator==(const Index3&, const Index3&) = default;
};

/// Linear offset of (x, y, z) in x-fastest order.
constexpr std::size_t linear_index(const Dims3& d, int x, int y, int z) noexcept {
  return (static_cast<std::size_t>(z) * static_cast<std::size_t>(d.y) +
          static_cast<std::size_t>(y)) *
             static_cast<std::size_t>(d.x) +
         static_cast<std::size_t>(x);
}

constexpr Index3 unravel(const Dims3& d, std::size_t i) noexcept {
  const auto dx = static_cast<std::size_t>(d.x);
  const auto dy = static_cast<std::size_t>(d.y);
  return {static_cast<int>(i % dx), static_cast<int>((i / dx) % dy),
          static_cast<int>(i / (dx * dy))};
}

/// Dense 3D scalar grid stored x-fastest.
template <typename T>
class Grid3 {
public:
  using value_type = T;

  Grid3() = default;

  explicit Grid3(Dims3 dims, T fill = T{}) : dims_(dims) {
    if (!dims.positive()) {
      throw std::invalid_argument("grid dims must be positive, got " + dims.str());
    }
    data_.assign(dims.count(), fill);
  }

  Grid3(Dims3 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (!dims.positive()) {
      throw std::invalid_argument("grid dims must be positive, got " + dims.str());
    }
    if (data_.size() != dims.count()) {
      throw DataError("grid data length " + std::to_string(data_.size()) +
                      " does not match dims " + dims.str());
    }
  }

  const Dims3& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  const std::array<double, 3>& spacing() const noexcept { return spacing_; }
  void set_spacing(const std::array<double, 3>& s) {
    for (double v : s) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("voxel spacing must be positive and finite");
      }
    }
    spacing_ = s;
  }

  std::size_t index(int x, int y, int z) const noexcept {
    return linear_index(dims_, x, y, z);
  }
  bool contains(int x, int y, int z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
  }

  T& operator()(int x, int y, int z) noexcept { return data_[index(x, y, z)]; }
  const T& operator()(int x, int y, int z) const noexcept { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& vector() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const Grid3& a, const Grid3& b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.data_ == b.data_;
  }

private:
  Dims3 dims_{};
  std::array<double, 3> spacing_{1.0, 1.0, 1.0};
  std::vector<T> data_;
};

using Volume = Grid3<double>;
using Mask = Grid3<std::uint8_t>;
using LabelGrid = Grid3<std::uint32_t>;

template <typename T>
bool all_finite(const Grid3<T>& g) {
  return std::all_of(g.begin(), g.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

inline void require_finite(const Volume& v, const std::string& what = "volume") {
  if (!all_finite(v)) {
    throw DataError(what + " contains non-finite values");
  }
}

inline void require_same_dims(const Dims3& a, const Dims3& b, const std::string& what) {
  if (!(a == b)) {
    throw DataError(what + ": dims " + a.str() + " vs " + b.str());
  }
}

inline std::size_t count_nonzero(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](auto v) { return v != 0; }));
}

/// Voxelwise union of binary masks with equal dims.
inline Mask mask_union(std::span<const Mask> masks) {
  if (masks.empty()) {
    throw std::invalid_argument("mask_union needs at least one mask");
  }
  Mask out(masks.front().dims(), 0);
  for (const auto& m : masks) {
    require_same_dims(out.dims(), m.dims(), "mask_union");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] != 0) out[i] = 1;
    }
  }
  return out;
}

}  // namespace voxplain
