#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxplain/core/heatmap.hpp"
#include "voxplain/core/resample.hpp"
#include "voxplain/nn/engine.hpp"

namespace voxplain::attr {

/// A coarse map on a layer grid and its upsampling to the input grid.
struct ActivationMap {
  std::string layer;
  Grid3<double> coarse;
  Heatmap upsampled;
};

namespace detail {

inline Grid3<double> channel_grid(const nn::Tensor& t, int c) {
  const double* p = t.channel(0, c);
  return Grid3<double>(t.shape.dims, std::vector<double>(p, p + t.shape.spatial()));
}

// sum_u weights[u] * f_u(x, y, z) over the channels of a single-sample tensor.
inline Grid3<double> weighted_sum(const nn::Tensor& f, const std::vector<double>& weights) {
  Grid3<double> out(f.shape.dims, 0.0);
  const std::size_t sp = f.shape.spatial();
  for (int u = 0; u < f.shape.channels; ++u) {
    const double w = weights[static_cast<std::size_t>(u)];
    const double* fu = f.channel(0, u);
    for (std::size_t k = 0; k < sp; ++k) out[k] += w * fu[k];
  }
  return out;
}

inline Grid3<double> abs_grid(Grid3<double> g) {
  for (double& v : g) v = std::abs(v);
  return g;
}

inline ActivationMap finish(std::string layer, Grid3<double> coarse, const Dims3& target) {
  Grid3<double> up = trilinear_upsample(coarse, target);
  for (double& s : up) s = std::max(s, 0.0);
  return {std::move(layer), std::move(coarse), Heatmap(std::move(up))};
}

}  // namespace detail

/// Class weights w_u of the output layer for a GAP model.
inline std::vector<double> class_weights(const nn::ModelGraph& g, const nn::ParamStore& p, Label target) {
  if (!g.has_gap_head()) {
    throw std::invalid_argument("class activation mapping needs a global-average-pool -> softmax head");
  }
  const auto& w = p[g.output_index()].weight;
  const std::size_t units = w.size() / kClassCount;
  const auto first = w.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(target) * units);
  return {first, first + static_cast<std::ptrdiff_t>(units)};
}

/// Signed field sum_u w_u f_u(x, y, z) on the GAP input grid, before the
/// absolute value. Its spatial mean is the class score.
inline Grid3<double> cam_field(const nn::ModelGraph& g, const nn::ParamStore& p, const nn::ActivationCache& cache,
                               Label target) {
  const auto weights = class_weights(g, p, target);
  const std::size_t gap = g.output_index() - 1;
  const int src = g.inputs_of(gap)[0];
  const nn::Tensor& f = src < 0 ? cache.input : cache.outputs[static_cast<std::size_t>(src)];
  return detail::weighted_sum(f, weights);
}

/// Class activation map |sum_u w_u f_u| from the layer feeding the GAP head.
inline ActivationMap cam(const nn::ModelGraph& g, const nn::ParamStore& p, const Volume& v, Label target = Label::AD) {
  if (!g.has_gap_head()) {
    throw std::invalid_argument("cam: architecture '" + g.architecture() +
                                "' lacks a global-average-pool -> softmax head");
  }
  const auto cache = nn::forward(g, p, v, nn::Mode::eval);
  const std::size_t gap = g.output_index() - 1;
  const int src = g.inputs_of(gap)[0];
  const std::string layer = src < 0 ? "input" : g.layer(static_cast<std::size_t>(src)).name;
  return detail::finish(layer, detail::abs_grid(cam_field(g, p, cache, target)), v.dims());
}

/// Per-unit importance a_u: spatial mean of d Score / d f_u.
inline std::vector<double> gradient_weights(const nn::GradCache& grad) {
  const std::size_t sp = grad.grad.shape.spatial();
  std::vector<double> a(static_cast<std::size_t>(grad.grad.shape.channels), 0.0);
  for (int u = 0; u < grad.grad.shape.channels; ++u) {
    const double* gu = grad.grad.channel(0, u);
    double s = 0.0;
    for (std::size_t k = 0; k < sp; ++k) s += gu[k];
    a[static_cast<std::size_t>(u)] = s / static_cast<double>(sp);
  }
  return a;
}

/// Gradient-weighted class activation map |sum_u a_u f_u| at `layer`
/// ("last-conv" selects the final convolutional node). Works on any model
/// whose chosen layer lies on the path to the output.
inline ActivationMap grad_cam(const nn::ModelGraph& g, const nn::ParamStore& p, const Volume& v,
                              std::string_view layer = "last-conv", Label target = Label::AD) {
  const auto cache = nn::forward(g, p, v, nn::Mode::eval);
  const auto grad = nn::backward_score_to_layer(g, p, cache, target, layer);
  const std::size_t idx = g.index_of(grad.layer);
  const auto a = gradient_weights(grad);
  auto coarse = detail::abs_grid(detail::weighted_sum(cache.outputs[idx], a));
  return detail::finish(grad.layer, std::move(coarse), v.dims());
}

}  // namespace voxplain::attr
