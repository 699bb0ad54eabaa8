#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxplain/core/dataset.hpp"
#include "voxplain/core/parallel.hpp"

namespace voxplain::phantom {

enum class LesionShape { cuboid, ellipsoid };

inline std::string_view shape_name(LesionShape s) { return s == LesionShape::cuboid ? "cuboid" : "ellipsoid"; }

inline LesionShape parse_shape(std::string_view s) {
  if (s == "cuboid") return LesionShape::cuboid;
  if (s == "ellipsoid") return LesionShape::ellipsoid;
  throw std::invalid_argument("unknown lesion shape '" + std::string(s) + "'");
}

/// Two-class synthetic volumes: smoothed Gaussian background plus an
/// intensity offset delta inside the lesion for the AD class.
struct PhantomSpec {
  Dims3 dims = cube(32);
  double noise_amplitude = 1.0;
  int correlation_length = 3;  // box filter width in voxels
  LesionShape shape = LesionShape::cuboid;
  Index3 lesion_origin{11, 11, 11};  // lower corner of the lesion bounding box
  Dims3 lesion_extent{10, 10, 10};
  double delta = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!dims.positive()) throw std::invalid_argument("phantom dims must be positive");
    if (!(noise_amplitude >= 0.0) || !std::isfinite(noise_amplitude)) {
      throw std::invalid_argument("noise amplitude must be finite and >= 0");
    }
    if (correlation_length < 1) throw std::invalid_argument("correlation length must be >= 1");
    if (!std::isfinite(delta)) throw std::invalid_argument("delta must be finite");
    if (!lesion_extent.positive()) throw DataError("lesion extent must be positive");
    const int origin[3] = {lesion_origin.x, lesion_origin.y, lesion_origin.z};
    for (int a = 0; a < 3; ++a) {
      if (origin[a] < 0 || origin[a] + lesion_extent[a] > dims[a]) {
        throw DataError("lesion out of bounds: origin " + Dims3{lesion_origin.x, lesion_origin.y, lesion_origin.z}.str() +
                        " extent " + lesion_extent.str() + " does not fit in " + dims.str());
      }
    }
  }
};

/// Lesion mask: the bounding box, or the ellipsoid inscribed in it.
inline Mask lesion_mask(const PhantomSpec& spec) {
  spec.validate();
  Mask m(spec.dims, 0);
  const auto& o = spec.lesion_origin;
  const auto& e = spec.lesion_extent;
  for (int z = o.z; z < o.z + e.z; ++z) {
    for (int y = o.y; y < o.y + e.y; ++y) {
      for (int x = o.x; x < o.x + e.x; ++x) {
        bool inside = true;
        if (spec.shape == LesionShape::ellipsoid) {
          const double dx = (x - o.x - (e.x - 1) / 2.0) / (e.x / 2.0);
          const double dy = (y - o.y - (e.y - 1) / 2.0) / (e.y / 2.0);
          const double dz = (z - o.z - (e.z - 1) / 2.0) / (e.z / 2.0);
          inside = dx * dx + dy * dy + dz * dz <= 1.0;
        }
        if (inside) m(x, y, z) = 1;
      }
    }
  }
  return m;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Periodic box filter of width w along one axis.
inline void box_filter_axis(Grid3<double>& g, int axis, int w) {
  if (w <= 1) return;
  const Dims3& d = g.dims();
  const int n = d[axis];
  const int lo = w / 2;
  std::vector<double> line(static_cast<std::size_t>(n));
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d.x)
                                                        : static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y);
  const int o1 = axis == 0 ? d.y : d.x;
  const int o2 = axis == 2 ? d.y : d.z;
  for (int b = 0; b < o2; ++b) {
    for (int a = 0; a < o1; ++a) {
      std::size_t base = 0;
      if (axis == 0) base = linear_index(d, 0, a, b);
      if (axis == 1) base = linear_index(d, a, 0, b);
      if (axis == 2) base = linear_index(d, a, b, 0);
      for (int i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = g[base + static_cast<std::size_t>(i) * stride];
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < w; ++k) {
          const int j = ((i - lo + k) % n + n) % n;
          s += line[static_cast<std::size_t>(j)];
        }
        g[base + static_cast<std::size_t>(i) * stride] = s / w;
      }
    }
  }
}

/// Zero-mean background with per-voxel standard deviation `amplitude`:
/// white Gaussian noise box-filtered along each axis, rescaled by w^1.5 so
/// the smoothing leaves the variance unchanged.
inline Volume smoothed_noise(const Dims3& dims, double amplitude, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Volume v(dims, 0.0);
  for (double& x : v) x = normal(rng);
  for (int axis = 0; axis < 3; ++axis) box_filter_axis(v, axis, std::min(w, dims[axis]));
  double wx = std::min(w, dims.x), wy = std::min(w, dims.y), wz = std::min(w, dims.z);
  const double scale = amplitude * std::sqrt(wx * wy * wz);
  for (double& x : v) x *= scale;
  return v;
}

/// 2 * n_per_class samples alternating NC, AD. Sample i uses the derived
/// seed splitmix64(spec.seed + i), so generation order does not matter.
inline LabeledDataset generate(const PhantomSpec& spec, int n_per_class, unsigned workers = worker_count()) {
  if (n_per_class < 1) throw std::invalid_argument("n_per_class must be >= 1");
  spec.validate();
  const Mask mask = lesion_mask(spec);
  LabeledDataset ds;
  ds.samples.resize(static_cast<std::size_t>(2 * n_per_class));
  parallel_for(
      ds.samples.size(),
      [&](std::size_t i) {
        Sample& s = ds.samples[i];
        char id[32];
        std::snprintf(id, sizeof id, "phantom-%04zu", i);
        s.id = id;
        s.label = i % 2 == 0 ? Label::NC : Label::AD;
        s.volume = smoothed_noise(spec.dims, spec.noise_amplitude, spec.correlation_length,
                                  splitmix64(spec.seed + i));
        if (s.label == Label::AD) {
          for (std::size_t k = 0; k < mask.size(); ++k) {
            if (mask[k] != 0) s.volume[k] += spec.delta;
          }
        }
        s.mask = mask;
      },
      workers);
  return ds;
}

/// Marks the first n_ad AD and n_nc NC samples (in a seeded shuffle) as set
/// aside from training and testing.
inline void set_aside(LabeledDataset& ds, std::size_t n_ad, std::size_t n_nc, std::uint64_t seed) {
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i : order) {
    auto& s = ds.samples[i];
    std::size_t& left = s.label == Label::AD ? n_ad : n_nc;
    if (left > 0) {
      s.set_aside = true;
      --left;
    }
  }
  if (n_ad > 0 || n_nc > 0) throw DataError("set_aside: not enough samples of each class");
}

}  // namespace voxplain::phantom
