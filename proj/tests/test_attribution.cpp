#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "oracles.hpp"
#include "voxplain/attribution/explain.hpp"
#include "voxplain/nn/builders.hpp"

using namespace voxplain;
using namespace voxplain::attr;

namespace {

// One 3^3 conv with random weights, GAP and a known head: score(AD) is a
// linear function of the volume, so occlusion deltas have a closed form.
struct LinearNet {
  nn::ModelGraph g;
  nn::ParamStore p;
};

LinearNet linear_net(const Dims3& d, std::mt19937_64& rng) {
  std::vector<nn::LayerSpec> layers = {
      {.name = "conv", .kind = nn::LayerKind::conv3d, .out_channels = 1, .kernel = 3, .padding = 1},
      {.name = "gap", .kind = nn::LayerKind::global_average_pool},
      {.name = "output", .kind = nn::LayerKind::softmax, .out_channels = kClassCount},
  };
  LinearNet n{nn::ModelGraph("linear", d, layers), {}};
  n.p = nn::zero_params(n.g);
  std::normal_distribution<double> w(0.0, 1.0);
  for (double& x : n.p[0].weight) x = w(rng);
  n.p[0].bias = {0.3};
  n.p[2].weight = {-0.5, 1.5};
  n.p[2].bias = {0.1, -0.2};
  return n;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// P(AD) of the linear net computed straight from the weights.
double linear_net_probability(const LinearNet& n, const Volume& v) {
  const Dims3& d = v.dims();
  double sum = 0.0;
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        double a = n.p[0].bias[0];
        for (int kz = 0; kz < 3; ++kz)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = x + kx - 1, sy = y + ky - 1, sz = z + kz - 1;
              if (sx < 0 || sy < 0 || sz < 0 || sx >= d.x || sy >= d.y || sz >= d.z) continue;
              a += n.p[0].weight[static_cast<std::size_t>((kz * 3 + ky) * 3 + kx)] * v(sx, sy, sz);
            }
        sum += a;
      }
  const double f = sum / static_cast<double>(d.count());
  const auto& w = n.p[2].weight;
  const auto& b = n.p[2].bias;
  return sigmoid((w[1] - w[0]) * f + b[1] - b[0]);
}

nn::ModelGraph gap_toy(std::mt19937_64& rng) { return oracle::random_toy_model(rng, true); }

}  // namespace

TEST(Baseline, ConstantModelGivesZeroHeatmap) {
  std::mt19937_64 rng(1);
  const oracle::ConstantModel m{cube(5), 0.7};
  const auto h = baseline_occlusion(m, oracle::random_volume(cube(5), rng), {.half_extent = 1});
  for (double s : h.scores()) EXPECT_EQ(s, 0.0);
}

TEST(Baseline, VolumeAtFillValueGivesZeroHeatmap) {
  std::mt19937_64 rng(2);
  const LinearNet n = linear_net(cube(6), rng);
  const NetworkModel m(n.g, n.p);
  const auto h = baseline_occlusion(m, Volume(cube(6), 0.25), {.half_extent = 1, .fill = 0.25});
  for (double s : h.scores()) EXPECT_EQ(s, 0.0);
}

TEST(Baseline, LinearNetMatchesClosedForm) {
  std::mt19937_64 rng(3);
  const Dims3 d = cube(8);
  const LinearNet n = linear_net(d, rng);
  const Volume v = oracle::random_volume(d, rng);
  const NetworkModel m(n.g, n.p);
  const auto h = baseline_occlusion(m, v, {.half_extent = 3, .fill = 0.0});
  const double ref = linear_net_probability(n, v);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const Volume o = occlude(v, VoxelRegion::cube({x, y, z}, 3), 0.0);
        EXPECT_NEAR(h(x, y, z), std::abs(linear_net_probability(n, o) - ref), 1e-12);
      }
}

TEST(Baseline, UnsquashedLinearModelMatchesOracle) {
  std::mt19937_64 rng(4);
  const Dims3 d{7, 6, 5};
  oracle::LinearModel m{d, {}, 0.2};
  std::normal_distribution<double> w(0.0, 1.0);
  for (std::size_t i = 0; i < d.count(); ++i) m.w.push_back(w(rng));
  const Volume v = oracle::random_volume(d, rng);
  const auto h = baseline_occlusion(m, v, {.half_extent = 2, .fill = -0.5});
  const auto expect = oracle::linear_occlusion_oracle(m, v, 2, -0.5);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h[i], expect[i], 1e-9);
}

TEST(Baseline, PassCountAtStrideOne) {
  std::mt19937_64 rng(5);
  const oracle::ConstantModel inner{Dims3{4, 5, 3}, 0.5};
  const CountingModel m(inner);
  baseline_occlusion(m, oracle::random_volume(inner.dims, rng), {.half_extent = 1});
  EXPECT_EQ(m.passes(), 1 + inner.dims.count());
}

TEST(Baseline, StrideFillsFromNearestCenter) {
  std::mt19937_64 rng(6);
  const Dims3 d = cube(7);
  oracle::LinearModel m{d, {}, 0.0};
  std::normal_distribution<double> w(0.0, 1.0);
  for (std::size_t i = 0; i < d.count(); ++i) m.w.push_back(w(rng));
  const Volume v = oracle::random_volume(d, rng);
  const CountingModel counted(m);
  const auto h = baseline_occlusion(counted, v, {.half_extent = 1, .stride = 3});
  EXPECT_EQ(counted.passes(), 1u + 27u);  // centers 0, 3, 6 per axis
  const auto full = oracle::linear_occlusion_oracle(m, v, 1, 0.0);
  EXPECT_NEAR(h(4, 2, 1), full(3, 3, 0), 1e-12);
  EXPECT_NEAR(h(6, 6, 6), full(6, 6, 6), 1e-12);
}

TEST(Baseline, RejectsBadOptions) {
  const oracle::ConstantModel m{cube(3), 0.5};
  const Volume v(cube(3), 0.0);
  EXPECT_THROW(baseline_occlusion(m, v, {.half_extent = -1}), std::invalid_argument);
  EXPECT_THROW(baseline_occlusion(m, v, {.stride = 0}), std::invalid_argument);
  EXPECT_THROW(baseline_occlusion(m, Volume(cube(4), 0.0)), DataError);
}

TEST(SaHier, WholeVolumeSegmentIsUniform) {
  std::mt19937_64 rng(7);
  const LinearNet n = linear_net(cube(5), rng);
  const NetworkModel m(n.g, n.p);
  const Volume v = oracle::random_volume(cube(5), rng);
  seg::SegmentationHierarchy h;
  h.levels = {LabelGrid(cube(5), 1u)};
  h.segment_counts = {1};
  h.merges_applied = {0};
  h.cut_heights = {0.0};
  const auto hm = sa_hierarchical(m, v, h);
  const double expect = std::abs(linear_net_probability(n, Volume(cube(5), 0.0)) - linear_net_probability(n, v));
  for (double s : hm.scores()) EXPECT_NEAR(s, expect, 1e-12);
}

TEST(SaHier, ConstantModelGivesZeroHeatmap) {
  std::mt19937_64 rng(8);
  const Volume v = oracle::random_volume(cube(6), rng);
  const auto h = seg::segment_volume(v, 20, 4);
  const oracle::ConstantModel m{cube(6), 0.3};
  for (double s : sa_hierarchical(m, v, h).scores()) EXPECT_EQ(s, 0.0);
}

TEST(SaHier, TwoLevelAverageMatchesRecomputation) {
  std::mt19937_64 rng(9);
  const Dims3 d = cube(6);
  const LinearNet n = linear_net(d, rng);
  const NetworkModel m(n.g, n.p);
  const Volume v = oracle::random_volume(d, rng);
  seg::SegmentationHierarchy h;
  LabelGrid fine(d, 1u);
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 3; x < 6; ++x) fine(x, y, z) = 2u;
  h.levels = {fine, LabelGrid(d, 1u)};
  h.segment_counts = {2, 1};
  h.merges_applied = {0, 1};
  h.cut_heights = {-INFINITY, 0.0};
  const CountingModel counted(m);
  const auto hm = sa_hierarchical(counted, v, h, {.fill = 0.0});
  EXPECT_EQ(counted.passes(), 1u + 2u + 1u);

  const double ref = linear_net_probability(n, v);
  auto occluded_delta = [&](const LabelGrid& l, std::uint32_t k) {
    Volume o = v;
    for (std::size_t i = 0; i < o.size(); ++i)
      if (l[i] == k) o[i] = 0.0;
    return std::abs(linear_net_probability(n, o) - ref);
  };
  const double whole = occluded_delta(h.levels[1], 1);
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_NEAR(hm[i], 0.5 * (occluded_delta(fine, fine[i]) + whole), 1e-12);
  }
}

TEST(SaHier, CubeTilingReproducesBaseline) {
  std::mt19937_64 rng(10);
  const Dims3 d = cube(8);  // 8 = h + 1 (mod 2h + 1) for h = 1
  oracle::LinearModel m{d, {}, 0.0};
  std::normal_distribution<double> w(0.0, 1.0);
  for (std::size_t i = 0; i < d.count(); ++i) m.w.push_back(w(rng));
  const Volume v = oracle::random_volume(d, rng);
  const auto sa = sa_hierarchical(m, v, oracle::cube_tiling(d, 1));
  const auto base = baseline_occlusion(m, v, {.half_extent = 1, .stride = 3});
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(sa[i], base[i]);
}

TEST(SaHier, RejectsMismatchedHierarchy) {
  const oracle::ConstantModel m{cube(4), 0.5};
  seg::SegmentationHierarchy h;
  h.levels = {LabelGrid(cube(3), 1u)};
  h.segment_counts = {1};
  EXPECT_THROW(sa_hierarchical(m, Volume(cube(4), 0.0), h), DataError);
}

TEST(Cam, ZeroClassWeightsGiveZeroMap) {
  std::mt19937_64 rng(11);
  const auto g = gap_toy(rng);
  auto p = oracle::random_params(g, rng);
  std::fill(p[g.output_index()].weight.begin(), p[g.output_index()].weight.end(), 0.0);
  const auto m = cam(g, p, oracle::random_volume(g.input_dims(), rng));
  for (double s : m.coarse) EXPECT_EQ(s, 0.0);
  for (double s : m.upsampled.scores()) EXPECT_EQ(s, 0.0);
}

TEST(Cam, SingleUnitIsAbsoluteActivation) {
  std::vector<nn::LayerSpec> layers = {
      {.name = "conv", .kind = nn::LayerKind::conv3d, .out_channels = 1, .kernel = 1},
      {.name = "gap", .kind = nn::LayerKind::global_average_pool},
      {.name = "output", .kind = nn::LayerKind::softmax, .out_channels = kClassCount},
  };
  const nn::ModelGraph g("unit", cube(4), layers);
  auto p = nn::zero_params(g);
  p[0].weight = {1.0};
  p[2].weight = {0.0, 1.0};
  std::mt19937_64 rng(12);
  const Volume v = oracle::random_volume(cube(4), rng);
  const auto m = cam(g, p, v);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(m.coarse[i], std::abs(v[i]));
}

TEST(Cam, FieldMeanEqualsScore) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 10; ++t) {
    const auto g = gap_toy(rng);
    const auto p = oracle::random_params(g, rng);
    const auto c = nn::forward(g, p, oracle::random_volume(g.input_dims(), rng));
    for (Label cls : {Label::AD, Label::NC}) {
      const auto field = cam_field(g, p, c, cls);
      double mean = 0.0;
      for (double x : field) mean += x;
      mean /= static_cast<double>(field.size());
      EXPECT_NEAR(mean, c.score(cls), 1e-6);
    }
  }
}

TEST(Cam, RejectsNonGapModels) {
  const auto g = nn::build_resnet3d(nn::Profile::desk32);
  const auto p = nn::init_params(g, 0);
  EXPECT_THROW(cam(g, p, Volume(g.input_dims(), 0.0)), std::invalid_argument);
}

TEST(GradCam, EqualsCamOverZOnGapModels) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 10; ++t) {
    const auto g = gap_toy(rng);
    const auto p = oracle::random_params(g, rng);
    const Volume v = oracle::random_volume(g.input_dims(), rng);
    const auto c = cam(g, p, v);
    const auto gc = grad_cam(g, p, v, "last-conv");
    const double Z = static_cast<double>(c.coarse.size());
    ASSERT_EQ(c.coarse.dims(), gc.coarse.dims());
    for (std::size_t i = 0; i < c.coarse.size(); ++i) EXPECT_NEAR(gc.coarse[i], c.coarse[i] / Z, 1e-12);
    const auto a = minmax_normalize(c.upsampled);
    const auto b = minmax_normalize(gc.upsampled);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
  }
}

TEST(GradCam, ZeroActivationsGiveZeroMap) {
  std::vector<nn::LayerSpec> layers = {
      {.name = "conv", .kind = nn::LayerKind::conv3d, .out_channels = 2, .kernel = 3, .padding = 1},
      {.name = "relu", .kind = nn::LayerKind::relu},
      {.name = "gap", .kind = nn::LayerKind::global_average_pool},
      {.name = "output", .kind = nn::LayerKind::softmax, .out_channels = kClassCount},
  };
  const nn::ModelGraph g("dead", cube(4), layers);
  auto p = nn::init_params(g, 1);
  p[0].bias = {-1e3, -1e3};
  std::mt19937_64 rng(15);
  const auto m = grad_cam(g, p, oracle::random_volume(cube(4), rng), "relu");
  for (double s : m.coarse) EXPECT_EQ(s, 0.0);
}

TEST(GradCam, ScalesWithActivations) {
  // With no bias a conv -> GAP net is linear in the input, so doubling the
  // volume doubles f at fixed gradient weights.
  std::vector<nn::LayerSpec> layers = {
      {.name = "conv", .kind = nn::LayerKind::conv3d, .out_channels = 3, .kernel = 3, .padding = 1},
      {.name = "gap", .kind = nn::LayerKind::global_average_pool},
      {.name = "output", .kind = nn::LayerKind::softmax, .out_channels = kClassCount},
  };
  const nn::ModelGraph g("lin", cube(5), layers);
  const auto p = nn::init_params(g, 2);
  std::mt19937_64 rng(16);
  Volume v = oracle::random_volume(cube(5), rng);
  const auto a = grad_cam(g, p, v, "conv");
  for (double& x : v) x *= 2.0;
  const auto b = grad_cam(g, p, v, "conv");
  for (std::size_t i = 0; i < a.coarse.size(); ++i) EXPECT_NEAR(b.coarse[i], 2.0 * a.coarse[i], 1e-12);
}

TEST(GradCam, IntermediateLayerOnResNet) {
  const auto g = nn::build_resnet3d_gap(nn::Profile::desk32);
  const auto p = nn::init_params(g, 3);
  std::mt19937_64 rng(17);
  const auto m = grad_cam(g, p, oracle::random_volume(g.input_dims(), rng), "bn4");
  EXPECT_EQ(m.layer, "bn4");
  EXPECT_EQ(m.coarse.dims(), cube(16));
  EXPECT_EQ(m.upsampled.dims(), cube(32));
}

TEST(Heatmaps, UpsampledStaysWithinCoarseRangeAndHitsNodes) {
  std::mt19937_64 rng(18);
  for (int t = 0; t < 10; ++t) {
    const auto g = gap_toy(rng);
    const auto p = oracle::random_params(g, rng);
    const Volume v = oracle::random_volume(g.input_dims(), rng);
    const auto m = grad_cam(g, p, v, "last-conv");
    const auto [lo, hi] = std::minmax_element(m.coarse.begin(), m.coarse.end());
    for (double s : m.upsampled.scores()) {
      EXPECT_GE(s, *lo - 1e-12);
      EXPECT_LE(s, *hi + 1e-12);
    }
    // Corners are aligned, so coarse node k sits at fine k * (fine - 1) / (coarse - 1)
    // and where that is a whole voxel the value is reproduced exactly.
    const Dims3 cd = m.coarse.dims(), fd = v.dims();
    auto node = [](int k, int fine, int crs) -> std::optional<int> {
      if (crs == 1) return fine == 1 ? std::optional<int>(0) : std::nullopt;
      if ((k * (fine - 1)) % (crs - 1) != 0) return std::nullopt;
      return k * (fine - 1) / (crs - 1);
    };
    for (int z = 0; z < cd.z; ++z) {
      for (int y = 0; y < cd.y; ++y) {
        for (int x = 0; x < cd.x; ++x) {
          const auto fx = node(x, fd.x, cd.x), fy = node(y, fd.y, cd.y), fz = node(z, fd.z, cd.z);
          if (fx && fy && fz) {
            EXPECT_NEAR(m.upsampled(*fx, *fy, *fz), m.coarse(x, y, z), 1e-12);
          }
        }
      }
    }
  }
}

TEST(Explain, DispatchAndPassAccounting) {
  std::mt19937_64 rng(19);
  const Dims3 d = cube(5);
  const LinearNet n = linear_net(d, rng);
  const Volume v = oracle::random_volume(d, rng);
  const auto h = seg::segment_volume(v, 10, 3);
  AttributionRequest req;
  req.method = Method::sa_hier;
  req.hierarchy = &h;
  EXPECT_EQ(explain(n.g, n.p, v, req).forward_passes, 1 + h.total_segments());
  req.method = Method::baseline;
  req.half_extent = 1;
  EXPECT_EQ(explain(n.g, n.p, v, req).forward_passes, 1 + d.count());
  req.method = Method::cam;
  const auto e = explain(n.g, n.p, v, req);
  EXPECT_TRUE(e.coarse.has_value());
  EXPECT_EQ(e.layer, "conv");
  req.method = Method::sa_hier;
  req.hierarchy = nullptr;
  EXPECT_THROW(explain(n.g, n.p, v, req), std::invalid_argument);
  EXPECT_THROW(parse_method("lime"), std::invalid_argument);
}
