// Independent reference computations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "voxplain/attribution/model.hpp"
#include "voxplain/core/grid.hpp"
#include "voxplain/nn/engine.hpp"
#include "voxplain/nn/params.hpp"
#include "voxplain/segmentation/hierarchy.hpp"

namespace oracle {

using namespace voxplain;

inline Volume random_volume(const Dims3& d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Volume v(d, 0.0);
  for (double& x : v) x = n(rng);
  return v;
}

/// Random volume whose values are exactly representable as float32.
inline Volume random_float_volume(const Dims3& d, std::mt19937_64& rng) {
  Volume v = random_volume(d, rng);
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

inline std::size_t total_activations(const nn::ModelGraph& g) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.size(); ++i) n += g.shape(static_cast<int>(i)).count();
  return n;
}

/// Small random network: one to three conv layers with optional batch norm,
/// ReLU, max pooling and a residual add, then either a GAP head, an FC head
/// or the output layer applied to flattened features. At most
/// `max_activations` values over all layers.
inline nn::ModelGraph random_toy_model(std::mt19937_64& rng, bool gap_head, std::size_t max_activations = 1000) {
  using nn::LayerKind;
  using nn::LayerSpec;
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Dims3 in{pick(3, 7), pick(3, 7), pick(3, 7)};
    std::vector<LayerSpec> layers;
    const int convs = pick(1, 3);
    int channels = 1;
    std::string last;
    for (int c = 0; c < convs; ++c) {
      LayerSpec conv;
      conv.name = "conv" + std::to_string(c + 1);
      conv.kind = LayerKind::conv3d;
      conv.kernel = pick(1, 3);
      conv.stride = pick(1, 4) == 1 ? 2 : 1;
      conv.padding = conv.kernel == 1 ? 0 : pick(0, 1);
      conv.out_channels = pick(1, 3);
      // Same-shape conv after the first one lets a residual add join them.
      const bool residual = c > 0 && conv.stride == 1 && conv.kernel == 3 && conv.padding == 1 &&
                            conv.out_channels == channels && pick(0, 1) == 1;
      layers.push_back(conv);
      std::string tail = conv.name;
      if (pick(0, 1) == 1) {
        layers.push_back({.name = "bn" + std::to_string(c + 1), .kind = LayerKind::batchnorm});
        tail = layers.back().name;
      }
      if (residual) {
        layers.push_back({.name = "add" + std::to_string(c + 1), .kind = LayerKind::residual_add,
                          .inputs = {tail, last}});
        tail = layers.back().name;
      }
      if (pick(0, 2) > 0) {
        layers.push_back({.name = "relu" + std::to_string(c + 1), .kind = LayerKind::relu});
        tail = layers.back().name;
      }
      if (!gap_head && pick(0, 3) == 0) {
        layers.push_back({.name = "pool" + std::to_string(c + 1), .kind = LayerKind::maxpool3d, .kernel = 2,
                          .stride = 2, .ceil_mode = pick(0, 1) == 1});
        tail = layers.back().name;
      }
      last = tail;
      channels = conv.out_channels;
    }
    if (gap_head) {
      layers.push_back({.name = "gap", .kind = LayerKind::global_average_pool});
    } else if (pick(0, 1) == 1) {
      layers.push_back({.name = "fc", .kind = LayerKind::fully_connected, .out_channels = pick(2, 6)});
      layers.push_back({.name = "fc_relu", .kind = LayerKind::relu});
    }
    layers.push_back({.name = "output", .kind = LayerKind::softmax, .out_channels = kClassCount});
    try {
      nn::ModelGraph g("toy", in, layers);
      if (total_activations(g) <= max_activations) return g;
    } catch (const std::exception&) {
      // Shape propagation failed; draw again.
    }
  }
  throw std::runtime_error("random_toy_model: no valid draw");
}

/// Initialized parameters with randomized biases and batch-norm state, so
/// no layer is an identity by accident.
inline nn::ParamStore random_params(const nn::ModelGraph& g, std::mt19937_64& rng) {
  nn::ParamStore p = nn::init_params(g, rng());
  std::normal_distribution<double> n(0.0, 0.5);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& l = p[i];
    for (double& b : l.bias) b = n(rng);
    for (double& x : l.gamma) x = u(rng);
    for (double& x : l.beta) x = n(rng);
    for (double& x : l.running_mean) x = n(rng);
    for (double& x : l.running_var) x = u(rng);
    if (g.layer(i).kind == nn::LayerKind::softmax) {
      std::normal_distribution<double> w(0.0, 1.0);
      for (double& x : l.weight) x = w(rng);
    }
  }
  return p;
}

/// True when two eval caches take the same branch at every ReLU and pool,
/// i.e. the network is affine on the segment between the two inputs.
inline bool same_pattern(const nn::ModelGraph& g, const nn::ActivationCache& a, const nn::ActivationCache& b) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto kind = g.layer(i).kind;
    if (kind == nn::LayerKind::relu) {
      const auto& x = a.outputs[i].data;
      const auto& y = b.outputs[i].data;
      for (std::size_t k = 0; k < x.size(); ++k) {
        if ((x[k] > 0.0) != (y[k] > 0.0)) return false;
      }
    } else if (kind == nn::LayerKind::maxpool3d) {
      if (a.pool_argmax[i] != b.pool_argmax[i]) return false;
    }
  }
  return true;
}

struct FiniteDifferenceReport {
  double max_rel_error = 0.0;  // max |analytic - numeric| / max |numeric|
  std::size_t checked = 0;
  std::size_t skipped = 0;     // perturbations that crossed a ReLU/pool branch
};

/// Central differences of the class score with respect to every activation
/// of `layer`, with step h, against backward_score_to_layer. Probes whose
/// +-h perturbation changes a ReLU or pool branch are skipped, since the
/// score has a kink there and no derivative to compare.
inline FiniteDifferenceReport finite_difference_check(const nn::ModelGraph& g, const nn::ParamStore& p,
                                                      const Volume& v, Label target, std::size_t layer,
                                                      double h = 1e-4) {
  const auto base = nn::forward(g, p, v, nn::Mode::eval);
  const auto analytic = nn::backward_score_to_layer(g, p, base, target, g.layer(layer).name);
  const nn::Tensor& act = base.outputs[layer];
  std::vector<double> numeric(act.data.size(), 0.0);
  std::vector<bool> valid(act.data.size(), false);
  FiniteDifferenceReport r;
  const Volume* one[] = {&v};
  for (std::size_t k = 0; k < act.data.size(); ++k) {
    nn::Tensor plus = act, minus = act;
    plus.data[k] += h;
    minus.data[k] -= h;
    const nn::NodeOverride op{layer, &plus}, om{layer, &minus};
    const auto cp = nn::forward(g, p, one, nn::Mode::eval, nullptr, &op);
    const auto cm = nn::forward(g, p, one, nn::Mode::eval, nullptr, &om);
    if (!same_pattern(g, base, cp) || !same_pattern(g, base, cm)) {
      ++r.skipped;
      continue;
    }
    numeric[k] = (cp.score(target) - cm.score(target)) / (2.0 * h);
    valid[k] = true;
    ++r.checked;
  }
  double scale = 0.0;
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    if (valid[k]) scale = std::max(scale, std::abs(numeric[k]));
  }
  if (scale == 0.0) scale = 1.0;
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    if (!valid[k]) continue;
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic.grad.data[k] - numeric[k]) / scale);
  }
  return r;
}

/// P(v) = bias + sum_i w_i v_i, not squashed, so occlusion deltas are
/// available in closed form.
struct LinearModel {
  Dims3 dims;
  std::vector<double> w;
  double bias = 0.0;

  double probability(const Volume& v, Label) const {
    double s = bias;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * v[i];
    return s;
  }
  Dims3 input_dims() const { return dims; }
};

struct ConstantModel {
  Dims3 dims;
  double value = 0.5;
  double probability(const Volume&, Label) const { return value; }
  Dims3 input_dims() const { return dims; }
};

/// Closed-form occlusion heatmap of a LinearModel: for the cube C around x
/// (clipped), |sum_{i in C} w_i (fill - v_i)|.
inline Grid3<double> linear_occlusion_oracle(const LinearModel& m, const Volume& v, int half, double fill) {
  const Dims3& d = v.dims();
  Grid3<double> out(d, 0.0);
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        double s = 0.0;
        for (int cz = std::max(0, z - half); cz <= std::min(d.z - 1, z + half); ++cz) {
          for (int cy = std::max(0, y - half); cy <= std::min(d.y - 1, y + half); ++cy) {
            for (int cx = std::max(0, x - half); cx <= std::min(d.x - 1, x + half); ++cx) {
              const std::size_t i = linear_index(d, cx, cy, cz);
              s += m.w[i] * (fill - v[i]);
            }
          }
        }
        out(x, y, z) = std::abs(s);
      }
    }
  }
  return out;
}

/// Single-level hierarchy whose segments are the clipped cubes of half
/// extent h around the lattice points 0, s, 2s, ... (s = 2h + 1). When the
/// last lattice point falls outside the grid its tile is a partial cube that
/// the strided baseline does not evaluate, so the two only agree on grids
/// where every lattice point of a tile lies inside.
inline seg::SegmentationHierarchy cube_tiling(const Dims3& d, int h) {
  const int s = 2 * h + 1;
  const Dims3 tiles{(d.x + h) / s + ((d.x + h) % s ? 1 : 0), (d.y + h) / s + ((d.y + h) % s ? 1 : 0),
                    (d.z + h) / s + ((d.z + h) % s ? 1 : 0)};
  LabelGrid l(d, 0u);
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const int tx = (x + h) / s, ty = (y + h) / s, tz = (z + h) / s;
        l(x, y, z) = static_cast<std::uint32_t>(linear_index(tiles, tx, ty, tz) + 1);
      }
    }
  }
  // Compact to 1..K in first-appearance order.
  std::map<std::uint32_t, std::uint32_t> remap;
  for (auto& lab : l) {
    auto [it, inserted] = remap.try_emplace(lab, static_cast<std::uint32_t>(remap.size() + 1));
    lab = it->second;
  }
  seg::SegmentationHierarchy hier;
  hier.levels.push_back(l);
  hier.segment_counts.push_back(static_cast<std::uint32_t>(remap.size()));
  hier.merges_applied.push_back(0);
  hier.cut_heights.push_back(-std::numeric_limits<double>::infinity());
  return hier;
}

/// Brute-force ROC AUC: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
inline double roc_auc_pairs(const std::vector<double>& s, const std::vector<Label>& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != Label::AD) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != Label::NC) continue;
      pairs += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return good / pairs;
}

struct HierarchyViolations {
  std::size_t partition = 0;
  std::size_t nesting = 0;
  std::size_t ultrametric = 0;
  std::size_t total() const { return partition + nesting + ultrametric; }
};

/// Checks that every level labels all voxels with exactly 1..K, that each
/// coarser level is a union of finer segments, that merge and cut heights
/// never decrease, and that leaf merge heights form an ultrametric.
inline HierarchyViolations check_hierarchy(const seg::SegmentationHierarchy& h, const seg::MergeTree& tree) {
  HierarchyViolations out;
  for (std::size_t n = 0; n < h.level_count(); ++n) {
    std::set<std::uint32_t> used(h.levels[n].begin(), h.levels[n].end());
    const std::uint32_t K = h.segment_counts[n];
    if (used.size() != K || *used.begin() != 1 || *used.rbegin() != K) ++out.partition;
    if (n > 0 && h.segment_counts[n] > h.segment_counts[n - 1]) ++out.nesting;
  }
  for (std::size_t n = 0; n + 1 < h.level_count(); ++n) {
    std::map<std::uint32_t, std::uint32_t> parent;
    for (std::size_t i = 0; i < h.levels[n].size(); ++i) {
      auto [it, inserted] = parent.try_emplace(h.levels[n][i], h.levels[n + 1][i]);
      if (!inserted && it->second != h.levels[n + 1][i]) {
        ++out.nesting;
        break;
      }
    }
    if (h.cut_heights[n + 1] < h.cut_heights[n]) ++out.ultrametric;
  }
  // Merge heights: non-decreasing, and a parent is never below its children.
  std::vector<double> node_height(tree.leaf_count + tree.merges.size() + 1, -1.0);
  double prev = -std::numeric_limits<double>::infinity();
  for (const auto& m : tree.merges) {
    if (m.height < prev) ++out.ultrametric;
    prev = m.height;
    if (m.height < node_height[m.a] || m.height < node_height[m.b]) ++out.ultrametric;
    node_height[m.parent] = m.height;
  }
  // Ultrametric inequality on leaf triples: d(a, c) <= max(d(a, b), d(b, c)),
  // with d the height at which two leaves first share a cluster.
  const std::uint32_t L = tree.leaf_count;
  if (L >= 3 && L <= 60) {
    std::vector<std::uint32_t> owner(tree.leaf_count + tree.merges.size() + 1);
    std::iota(owner.begin(), owner.end(), 0u);
    auto find = [&](std::uint32_t x) {
      while (owner[x] != x) x = owner[x];
      return x;
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> d(L + 1, std::vector<double>(L + 1, inf));
    for (std::uint32_t a = 1; a <= L; ++a) d[a][a] = 0.0;
    for (const auto& m : tree.merges) {
      const auto ra = find(m.a), rb = find(m.b);
      owner[ra] = m.parent;
      owner[rb] = m.parent;
      for (std::uint32_t a = 1; a <= L; ++a) {
        for (std::uint32_t b = 1; b <= L; ++b) {
          if (d[a][b] == inf && find(a) == m.parent && find(b) == m.parent) d[a][b] = m.height;
        }
      }
    }
    for (std::uint32_t a = 1; a <= L; ++a) {
      for (std::uint32_t b = 1; b <= L; ++b) {
        for (std::uint32_t c = 1; c <= L; ++c) {
          if (d[a][c] > std::max(d[a][b], d[b][c])) ++out.ultrametric;
        }
      }
    }
  }
  return out;
}

/// Reference tree cut: relabels leaves after applying the first `applied`
/// merges with a naive parent-pointer forest.
inline LabelGrid naive_cut(const seg::MergeTree& t, const LabelGrid& base, std::size_t applied) {
  std::vector<std::uint32_t> up(t.leaf_count + t.merges.size() + 1);
  std::iota(up.begin(), up.end(), 0u);
  for (std::size_t k = 0; k < applied; ++k) {
    up[t.merges[k].a] = t.merges[k].parent;
    up[t.merges[k].b] = t.merges[k].parent;
  }
  LabelGrid out = base;
  std::map<std::uint32_t, std::uint32_t> compact;
  for (auto& lab : out) {
    std::uint32_t r = lab;
    while (up[r] != r) r = up[r];
    auto [it, inserted] = compact.try_emplace(r, static_cast<std::uint32_t>(compact.size() + 1));
    lab = it->second;
  }
  return out;
}

}  // namespace oracle
