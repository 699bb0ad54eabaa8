#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "voxplain/attribution/model.hpp"
#include "voxplain/core/heatmap.hpp"
#include "voxplain/core/parallel.hpp"
#include "voxplain/core/region.hpp"
#include "voxplain/segmentation/hierarchy.hpp"

namespace voxplain::attr {

struct OcclusionOptions {
  int half_extent = 3;  // 7x7x7 neighborhoods
  double fill = 0.0;
  int stride = 1;
  Label target = Label::AD;
  unsigned workers = worker_count();
};

namespace detail {

// Largest evaluated center coordinate on an axis of length n.
inline int last_center(int n, int stride) { return ((n - 1) / stride) * stride; }

inline int nearest_center(int x, int n, int stride) {
  const int c = ((x + stride / 2) / stride) * stride;
  return std::min(c, last_center(n, stride));
}

}  // namespace detail

/// Occlusion sensitivity: each voxel scores |P(v with its cube occluded) -
/// P(v)| for the target class. Cubes are clipped at the borders. With
/// stride > 1 only centers on the stride lattice are evaluated and every
/// voxel takes the score of its nearest evaluated center.
template <ProbabilityModel M>
Heatmap baseline_occlusion(const M& model, const Volume& v, const OcclusionOptions& opt = {}) {
  if (opt.half_extent < 0) throw std::invalid_argument("baseline_occlusion: half extent must be >= 0");
  if (opt.stride < 1) throw std::invalid_argument("baseline_occlusion: stride must be >= 1");
  require_same_dims(v.dims(), model.input_dims(), "baseline_occlusion");
  const Dims3& d = v.dims();
  const double reference = model.probability(v, opt.target);

  const Dims3 centers{detail::last_center(d.x, opt.stride) / opt.stride + 1,
                      detail::last_center(d.y, opt.stride) / opt.stride + 1,
                      detail::last_center(d.z, opt.stride) / opt.stride + 1};
  std::vector<double> delta(centers.count(), 0.0);
  parallel_for(
      centers.count(),
      [&](std::size_t k) {
        const Index3 c = unravel(centers, k);
        const Index3 at{c.x * opt.stride, c.y * opt.stride, c.z * opt.stride};
        const Volume occluded = occlude(v, VoxelRegion::cube(at, opt.half_extent), opt.fill);
        delta[k] = std::abs(model.probability(occluded, opt.target) - reference);
      },
      opt.workers);

  Grid3<double> scores(d, 0.0);
  for (int z = 0; z < d.z; ++z) {
    const int cz = detail::nearest_center(z, d.z, opt.stride) / opt.stride;
    for (int y = 0; y < d.y; ++y) {
      const int cy = detail::nearest_center(y, d.y, opt.stride) / opt.stride;
      for (int x = 0; x < d.x; ++x) {
        const int cx = detail::nearest_center(x, d.x, opt.stride) / opt.stride;
        scores(x, y, z) = delta[linear_index(centers, cx, cy, cz)];
      }
    }
  }
  return Heatmap(std::move(scores));
}

struct HierarchyOptions {
  double fill = 0.0;
  Label target = Label::AD;
  unsigned workers = worker_count();
};

/// Segment-level sensitivity averaged over hierarchy levels: each voxel
/// scores (1/N) * sum over levels of |P(v with its segment occluded) - P(v)|.
/// Costs one reference pass plus one pass per segment per level.
template <ProbabilityModel M>
Heatmap sa_hierarchical(const M& model, const Volume& v, const seg::SegmentationHierarchy& h,
                        const HierarchyOptions& opt = {}) {
  if (h.level_count() == 0) throw std::invalid_argument("sa_hierarchical: empty hierarchy");
  require_same_dims(v.dims(), model.input_dims(), "sa_hierarchical");
  for (const auto& level : h.levels) require_same_dims(level.dims(), v.dims(), "sa_hierarchical hierarchy");
  const double reference = model.probability(v, opt.target);

  struct Job {
    std::size_t level;
    std::uint32_t segment;  // 1-based
  };
  std::vector<std::vector<std::vector<std::size_t>>> members(h.level_count());
  std::vector<Job> jobs;
  for (std::size_t n = 0; n < h.level_count(); ++n) {
    const auto& level = h.levels[n];
    const std::uint32_t K = h.segment_counts[n];
    members[n].resize(K);
    for (std::size_t i = 0; i < level.size(); ++i) {
      const std::uint32_t lab = level[i];
      if (lab < 1 || lab > K) throw DataError("hierarchy level has label outside 1..K");
      members[n][lab - 1].push_back(i);
    }
    for (std::uint32_t k = 1; k <= K; ++k) jobs.push_back({n, k});
  }

  std::vector<double> delta(jobs.size(), 0.0);
  parallel_for(
      jobs.size(),
      [&](std::size_t j) {
        const auto& job = jobs[j];
        Volume occluded = v;
        for (std::size_t i : members[job.level][job.segment - 1]) occluded[i] = opt.fill;
        delta[j] = std::abs(model.probability(occluded, opt.target) - reference);
      },
      opt.workers);

  Grid3<double> scores(v.dims(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(h.level_count());
  std::size_t offset = 0;
  for (std::size_t n = 0; n < h.level_count(); ++n) {
    const auto& level = h.levels[n];
    for (std::size_t i = 0; i < level.size(); ++i) scores[i] += delta[offset + level[i] - 1];
    offset += h.segment_counts[n];
  }
  for (double& s : scores) s *= inv_n;
  return Heatmap(std::move(scores));
}

}  // namespace voxplain::attr
