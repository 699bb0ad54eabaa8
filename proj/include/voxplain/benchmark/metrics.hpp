#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "voxplain/core/heatmap.hpp"
#include "voxplain/nn/graph.hpp"

namespace voxplain::bench {

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Points sorted by descending threshold.
using PRCurve = std::vector<PRPoint>;

inline constexpr int kPRQuantiles = 257;

/// Precision/recall of {score >= t} against the positive labels, swept over
/// thresholds at 257 evenly spaced score quantiles (extremes included).
/// Thresholds are actual score values, so any strictly increasing rescaling
/// of the scores yields the same precision/recall pairs.
inline PRCurve pr_curve(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw DataError("pr_curve: score and mask sizes differ");
  if (scores.empty()) throw DataError("pr_curve: no voxels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  std::vector<double> desc(order.size());
  std::vector<std::size_t> tp_prefix(order.size() + 1, 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    desc[k] = scores[order[k]];
    tp_prefix[k + 1] = tp_prefix[k] + (positive[order[k]] != 0 ? 1 : 0);
  }
  const std::size_t positives = tp_prefix.back();
  if (positives == 0) throw DataError("pr_curve: mask has no positive voxels");

  const std::size_t n = desc.size();
  std::vector<double> thresholds;
  thresholds.reserve(kPRQuantiles);
  for (int q = 0; q < kPRQuantiles; ++q) {
    // Quantile q/256 of the ascending scores is desc[n - 1 - rank].
    const auto rank = static_cast<std::size_t>(
        std::lround(static_cast<double>(q) / (kPRQuantiles - 1) * static_cast<double>(n - 1)));
    thresholds.push_back(desc[n - 1 - rank]);
  }
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  PRCurve curve;
  for (double t : thresholds) {
    // Predicted positives: the prefix of desc with score >= t.
    const auto predicted = static_cast<std::size_t>(
        std::upper_bound(desc.begin(), desc.end(), t, std::greater<>()) - desc.begin());
    if (predicted == 0) continue;
    const double tp = static_cast<double>(tp_prefix[predicted]);
    curve.push_back({t, tp / static_cast<double>(predicted), tp / static_cast<double>(positives)});
  }
  return curve;
}

inline PRCurve pr_curve(const Heatmap& h, const Mask& mask) {
  require_same_dims(h.dims(), mask.dims(), "pr_curve");
  return pr_curve(h.scores(), mask.values());
}

/// One curve over the voxels of several scans taken together.
inline PRCurve pr_curve_pooled(std::span<const Heatmap> heatmaps, std::span<const Mask> masks) {
  if (heatmaps.size() != masks.size() || heatmaps.empty()) {
    throw DataError("pr_curve_pooled: need matching, non-empty heatmap and mask lists");
  }
  std::vector<double> scores;
  std::vector<std::uint8_t> positive;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    require_same_dims(heatmaps[i].dims(), masks[i].dims(), "pr_curve_pooled");
    scores.insert(scores.end(), heatmaps[i].scores().begin(), heatmaps[i].scores().end());
    positive.insert(positive.end(), masks[i].begin(), masks[i].end());
  }
  return pr_curve(scores, positive);
}

/// Area under the PR curve as step-wise average precision:
/// sum over points of (recall_i - recall_{i-1}) * precision_i.
inline double pr_auc(const PRCurve& curve) {
  double area = 0.0;
  double prev_recall = 0.0;
  for (const auto& p : curve) {
    area += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return area;
}

/// Mean of per-scan PR-AUCs (the alternative to pooling).
inline double mean_pr_auc(std::span<const Heatmap> heatmaps, std::span<const Mask> masks) {
  if (heatmaps.size() != masks.size() || heatmaps.empty()) {
    throw DataError("mean_pr_auc: need matching, non-empty heatmap and mask lists");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) s += pr_auc(pr_curve(heatmaps[i], masks[i]));
  return s / static_cast<double>(heatmaps.size());
}

/// ROC AUC as the Mann-Whitney statistic with AD as the positive class;
/// tied scores count one half.
inline double roc_auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  const auto n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == Label::AD) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw DataError("roc_auc: both classes must be present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Fraction of samples whose predicted class matches; AD is predicted when
/// P(AD) > threshold.
inline double accuracy(std::span<const double> p_ad, std::span<const Label> labels, double threshold = 0.5) {
  if (p_ad.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (p_ad.empty()) throw std::invalid_argument("accuracy: no samples");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p_ad.size(); ++i) {
    const Label pred = p_ad[i] > threshold ? Label::AD : Label::NC;
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(p_ad.size());
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and sample standard deviation (zero for a single value).
inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) return {};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() == 1) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace voxplain::bench
