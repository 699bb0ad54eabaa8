#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "voxplain/benchmark/cross_validate.hpp"
#include "voxplain/benchmark/metrics.hpp"

using namespace voxplain;
using namespace voxplain::bench;

namespace {

Mask cube_mask(const Dims3& d, Index3 lo, int side) {
  Mask m(d, 0);
  for (int z = lo.z; z < lo.z + side; ++z)
    for (int y = lo.y; y < lo.y + side; ++y)
      for (int x = lo.x; x < lo.x + side; ++x) m(x, y, z) = 1;
  return m;
}

Heatmap from_mask(const Mask& m, bool invert) {
  Grid3<double> g(m.dims(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) g[i] = (m[i] != 0) != invert ? 1.0 : 0.0;
  return Heatmap(g);
}

}  // namespace

TEST(PR, PerfectHeatmapReachesUnitPoint) {
  const Mask m = cube_mask(cube(8), {2, 2, 2}, 3);
  const auto c = pr_curve(from_mask(m, false), m);
  bool found = false;
  for (const auto& p : c) found |= p.precision == 1.0 && p.recall == 1.0;
  EXPECT_TRUE(found);
  EXPECT_DOUBLE_EQ(pr_auc(c), 1.0);
}

TEST(PR, InvertedHeatmapHasZeroPrecision) {
  const Mask m = cube_mask(cube(8), {2, 2, 2}, 3);
  const auto c = pr_curve(from_mask(m, true), m);
  // Only the sweep down to the mask scores themselves recovers any positives.
  for (const auto& p : c) {
    if (p.threshold > 0.0) {
      EXPECT_EQ(p.precision, 0.0);
      EXPECT_EQ(p.recall, 0.0);
    }
  }
  EXPECT_EQ(c.front().threshold, 1.0);
  EXPECT_EQ(c.back().recall, 1.0);
}

TEST(PR, UniformRandomHeatmapHasPrecisionNearPrevalence) {
  const Dims3 d = cube(30);
  const Mask m = cube_mask(d, {5, 7, 9}, 10);
  const double q = static_cast<double>(count_nonzero(m)) / static_cast<double>(d.count());
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid3<double> g(d, 0.0);
  for (double& x : g) x = u(rng);
  const Heatmap h(g);
  const auto c = pr_curve(h, m);
  for (const auto& p : c) {
    std::size_t k = 0;
    for (double s : h.scores()) k += s >= p.threshold;
    if (k < 100) continue;  // too few predictions for the normal bound
    const double sigma = std::sqrt(q * (1.0 - q) / static_cast<double>(k));
    EXPECT_NEAR(p.precision, q, 3.0 * sigma) << "threshold " << p.threshold << " k " << k;
  }
}

TEST(PR, RecallMonotoneAndBounded) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const Dims3 d{9, 8, 7};
    Grid3<double> g(d, 0.0);
    std::uniform_int_distribution<int> coarse(0, 5);  // many ties
    for (double& x : g) x = coarse(rng);
    Mask m(d, 0);
    std::bernoulli_distribution b(0.2);
    for (auto& x : m) x = b(rng);
    m[0] = 1;
    const auto c = pr_curve(Heatmap(g), m);
    ASSERT_LE(c.size(), static_cast<std::size_t>(kPRQuantiles));
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_GE(c[i].precision, 0.0);
      EXPECT_LE(c[i].precision, 1.0);
      EXPECT_GE(c[i].recall, 0.0);
      EXPECT_LE(c[i].recall, 1.0);
      if (i > 0) {
        EXPECT_LT(c[i].threshold, c[i - 1].threshold);
        EXPECT_GE(c[i].recall, c[i - 1].recall);
      }
    }
    EXPECT_EQ(c.back().recall, 1.0);
  }
}

TEST(PR, InvariantUnderMonotoneRescaling) {
  std::mt19937_64 rng(2);
  const Dims3 d = cube(10);
  Grid3<double> g(d, 0.0);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (double& x : g) x = u(rng);
  const Mask m = cube_mask(d, {1, 2, 3}, 4);
  const auto a = pr_curve(Heatmap(g), m);
  const auto b = pr_curve(minmax_normalize(Heatmap(g)), m);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].precision, b[i].precision);
    EXPECT_EQ(a[i].recall, b[i].recall);
  }
}

TEST(PR, UnionMaskMatchesMergedRegions) {
  std::mt19937_64 rng(3);
  const Dims3 d = cube(10);
  Grid3<double> g(d, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& x : g) x = u(rng);
  const Mask regions[] = {cube_mask(d, {0, 0, 0}, 3), cube_mask(d, {5, 5, 5}, 4), cube_mask(d, {2, 2, 2}, 3)};
  Mask merged(d, 0);
  for (const auto& r : regions)
    for (std::size_t i = 0; i < r.size(); ++i) merged[i] = merged[i] | r[i];
  const auto a = pr_curve(Heatmap(g), mask_union(regions));
  const auto b = pr_curve(Heatmap(g), merged);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].precision, b[i].precision);
    EXPECT_EQ(a[i].recall, b[i].recall);
  }
}

TEST(PR, PooledEqualsConcatenation) {
  std::mt19937_64 rng(4);
  const Dims3 d = cube(6);
  std::vector<Heatmap> hs;
  std::vector<Mask> ms;
  std::vector<double> all_scores;
  std::vector<std::uint8_t> all_pos;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 3; ++k) {
    Grid3<double> g(d, 0.0);
    for (double& x : g) x = u(rng);
    hs.emplace_back(g);
    ms.push_back(cube_mask(d, {k, k, k}, 2));
    all_scores.insert(all_scores.end(), g.begin(), g.end());
    all_pos.insert(all_pos.end(), ms.back().begin(), ms.back().end());
  }
  const auto a = pr_curve_pooled(hs, ms);
  const auto b = pr_curve(all_scores, all_pos);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].precision, b[i].precision);
  EXPECT_GT(mean_pr_auc(hs, ms), 0.0);
}

TEST(PR, Errors) {
  const Heatmap h(cube(3));
  EXPECT_THROW(pr_curve(h, Mask(cube(3), 0)), DataError);
  EXPECT_THROW(pr_curve(h, Mask(cube(4), 1)), DataError);
}

TEST(Roc, SpecExamples) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<Label> y = {Label::NC, Label::NC, Label::AD, Label::AD};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>(4, 0.3), y), 0.5);
  EXPECT_THROW(roc_auc(s, std::vector<Label>(4, Label::AD)), DataError);
}

TEST(Roc, MatchesBruteForcePairs) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> n_dist(2, 50);
  std::uniform_int_distribution<int> score(0, 9);
  for (int t = 0; t < 200; ++t) {
    const int n = n_dist(rng);
    std::vector<double> s;
    std::vector<Label> y;
    for (int i = 0; i < n; ++i) {
      s.push_back(score(rng) / 10.0);
      y.push_back(i == 0 ? Label::AD : i == 1 ? Label::NC : (rng() % 2 ? Label::AD : Label::NC));
    }
    EXPECT_NEAR(roc_auc(s, y), oracle::roc_auc_pairs(s, y), 1e-12);
  }
}

TEST(Accuracy, SpecExamples) {
  const std::vector<Label> y = {Label::AD, Label::NC, Label::AD, Label::NC};
  EXPECT_EQ(accuracy(std::vector<double>{0.9, 0.1, 0.8, 0.2}, y), 1.0);
  EXPECT_EQ(accuracy(std::vector<double>(4, 0.7), y), 0.5);
  EXPECT_EQ(accuracy(std::vector<double>{0.9, 0.1, 0.8, 0.6}, y), 0.75);
}

TEST(MeanStdTest, SampleDeviation) {
  const auto ms = mean_std(std::vector<double>{1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(ms.mean, 2.5);
  EXPECT_NEAR(ms.std, std::sqrt(5.0 / 3.0), 1e-12);
}

TEST(CrossValidate, TableRowLayout) {
  CVReport r;
  r.model_title = "3D-VGGNet";
  r.auc = {0.863, 0.056};
  r.acc = {0.766, 0.095};
  EXPECT_EQ(r.table_row(), "3D-VGGNet  0.863±0.056  0.766±0.095");
}

namespace {

LabeledDataset toy_dataset(int n_per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabeledDataset ds;
  for (int i = 0; i < 2 * n_per_class; ++i) {
    Volume v = oracle::random_volume(cube(4), rng, 0.5);
    const Label y = i % 2 ? Label::AD : Label::NC;
    if (y == Label::AD) for (double& x : v) x += 1.0;
    ds.samples.push_back({.id = "toy-" + std::to_string(i), .volume = std::move(v), .label = y});
  }
  return ds;
}

nn::ModelGraph toy_builder() {
  std::vector<nn::LayerSpec> layers = {
      {.name = "conv", .kind = nn::LayerKind::conv3d, .out_channels = 2, .kernel = 3, .padding = 1},
      {.name = "gap", .kind = nn::LayerKind::global_average_pool},
      {.name = "output", .kind = nn::LayerKind::softmax, .out_channels = kClassCount},
  };
  return nn::ModelGraph("toy", cube(4), layers);
}

nn::TrainConfig toy_config() {
  nn::TrainConfig cfg;
  cfg.optimizer = nn::Optimizer::adam;
  cfg.lr = 0.01;
  cfg.batch_size = 2;
  cfg.epochs = 3;
  cfg.seed = 1;
  return cfg;
}

}  // namespace

TEST(CrossValidate, TwoFoldsOnFourSamples) {
  const LabeledDataset ds = toy_dataset(2, 1);
  const auto r = cross_validate(ds, toy_builder, toy_config(), {.splits = 1, .folds = 2, .seed = 3});
  ASSERT_EQ(r.rounds.size(), 2u);
  std::set<std::string> tested;
  for (const auto& round : r.rounds) {
    const std::set<std::string> train(round.train_ids.begin(), round.train_ids.end());
    for (const auto& id : round.test_ids) {
      EXPECT_EQ(train.count(id), 0u);
      tested.insert(id);
    }
    EXPECT_EQ(round.train_ids.size() + round.test_ids.size(), 4u);
  }
  EXPECT_EQ(tested.size(), 4u);
}

TEST(CrossValidate, RoundAucMatchesRecomputation) {
  const LabeledDataset ds = toy_dataset(6, 2);
  const auto r = cross_validate(ds, toy_builder, toy_config(), {.splits = 2, .folds = 3, .seed = 4});
  ASSERT_EQ(r.rounds.size(), 6u);
  std::vector<double> aucs;
  for (const auto& round : r.rounds) {
    EXPECT_DOUBLE_EQ(round.auc, roc_auc(round.test_probs, round.test_labels));
    aucs.push_back(round.auc);
  }
  EXPECT_DOUBLE_EQ(r.auc.mean, mean_std(aucs).mean);
}

TEST(CrossValidate, SetAsideNeverUsedAndDeterministic) {
  LabeledDataset ds = toy_dataset(6, 3);
  ds.samples[0].set_aside = true;
  ds.samples[3].set_aside = true;
  const CVOptions opt{.splits = 2, .folds = 2, .seed = 5};
  const auto a = cross_validate(ds, toy_builder, toy_config(), opt);
  EXPECT_TRUE(leak_free(a, ds));
  for (const auto& round : a.rounds) {
    for (const auto& id : round.train_ids) EXPECT_TRUE(id != "toy-0" && id != "toy-3");
    for (const auto& id : round.test_ids) EXPECT_TRUE(id != "toy-0" && id != "toy-3");
  }
  const auto b = cross_validate(ds, toy_builder, toy_config(), {.splits = 2, .folds = 2, .seed = 5, .workers = 1});
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    EXPECT_EQ(a.rounds[i].test_ids, b.rounds[i].test_ids);
    EXPECT_EQ(a.rounds[i].test_probs, b.rounds[i].test_probs);
  }
}

TEST(CrossValidate, FoldsStratified) {
  const LabeledDataset ds = toy_dataset(10, 4);
  const auto working = ds.working_indices();
  const auto fold = assign_folds(ds, working, 5, 9);
  std::vector<int> ad(5, 0), nc(5, 0);
  for (std::size_t k = 0; k < working.size(); ++k) {
    (ds.samples[working[k]].label == Label::AD ? ad : nc)[static_cast<std::size_t>(fold[k])]++;
  }
  for (int f = 0; f < 5; ++f) {
    EXPECT_EQ(ad[static_cast<std::size_t>(f)], 2);
    EXPECT_EQ(nc[static_cast<std::size_t>(f)], 2);
  }
}

TEST(CrossValidate, TooSmallForFolds) {
  const LabeledDataset ds = toy_dataset(2, 5);
  EXPECT_THROW(cross_validate(ds, toy_builder, toy_config(), {.splits = 1, .folds = 3}), DataError);
}
