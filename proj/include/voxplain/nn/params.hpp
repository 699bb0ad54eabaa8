#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "voxplain/nn/graph.hpp"

namespace voxplain::nn {

/// Learnable arrays and running statistics of one layer. Arrays a layer kind
/// does not use stay empty.
///
///   conv3d:          weight [out][in][k][k][k], bias [out]
///   fully-connected: weight [out][in_features], bias [out]
///   softmax:         weight [class][units] (the class weights), bias [class]
///   batchnorm:       gamma, beta, running_mean, running_var [channels]
struct LayerParams {
  std::vector<double> weight;
  std::vector<double> bias;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Identifies one array inside LayerParams, in manifest order.
enum class ParamField : std::uint8_t { weight, bias, gamma, beta, running_mean, running_var };

inline constexpr ParamField kAllFields[] = {ParamField::weight,      ParamField::bias,
                                            ParamField::gamma,       ParamField::beta,
                                            ParamField::running_mean, ParamField::running_var};

inline std::string_view field_name(ParamField f) {
  switch (f) {
    case ParamField::weight: return "weight";
    case ParamField::bias: return "bias";
    case ParamField::gamma: return "gamma";
    case ParamField::beta: return "beta";
    case ParamField::running_mean: return "running_mean";
    case ParamField::running_var: return "running_var";
  }
  return "?";
}

inline bool is_trainable(ParamField f) {
  return f != ParamField::running_mean && f != ParamField::running_var;
}

inline std::vector<double>& field(LayerParams& p, ParamField f) {
  switch (f) {
    case ParamField::weight: return p.weight;
    case ParamField::bias: return p.bias;
    case ParamField::gamma: return p.gamma;
    case ParamField::beta: return p.beta;
    case ParamField::running_mean: return p.running_mean;
    case ParamField::running_var: return p.running_var;
  }
  return p.weight;
}

inline const std::vector<double>& field(const LayerParams& p, ParamField f) {
  return field(const_cast<LayerParams&>(p), f);
}

/// Parameters of a ModelGraph, one LayerParams per layer in graph order.
struct ParamStore {
  std::vector<LayerParams> layers;

  LayerParams& operator[](std::size_t i) { return layers.at(i); }
  const LayerParams& operator[](std::size_t i) const { return layers.at(i); }

  /// Visits every trainable array as fn(layer_index, field, vector&).
  template <typename Fn>
  void for_each_trainable(Fn&& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (ParamField f : kAllFields) {
        if (is_trainable(f) && !field(layers[i], f).empty()) fn(i, f, field(layers[i], f));
      }
    }
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size() + l.gamma.size() + l.beta.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      for (ParamField f : kAllFields) {
        for (double v : field(l, f)) {
          if (!std::isfinite(v)) return false;
        }
      }
    }
    return true;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

/// Expected array sizes of layer i, in kAllFields order.
inline std::array<std::size_t, 6> expected_sizes(const ModelGraph& g, std::size_t i) {
  const auto& l = g.layer(i);
  const Shape in = g.shape(g.inputs_of(i)[0]);
  const auto out = static_cast<std::size_t>(l.out_channels);
  switch (l.kind) {
    case LayerKind::conv3d: {
      const auto k3 = static_cast<std::size_t>(l.kernel) * l.kernel * l.kernel;
      return {out * static_cast<std::size_t>(in.channels) * k3, out, 0, 0, 0, 0};
    }
    case LayerKind::fully_connected:
    case LayerKind::softmax:
      return {out * in.count(), out, 0, 0, 0, 0};
    case LayerKind::batchnorm: {
      const auto c = static_cast<std::size_t>(in.channels);
      return {0, 0, c, c, c, c};
    }
    default:
      return {0, 0, 0, 0, 0, 0};
  }
}

/// Throws DataError when the store does not match the graph.
inline void check_params(const ModelGraph& g, const ParamStore& p) {
  if (p.layers.size() != g.size()) {
    throw DataError("parameter store has " + std::to_string(p.layers.size()) + " layers, model has " +
                    std::to_string(g.size()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto sizes = expected_sizes(g, i);
    for (std::size_t f = 0; f < 6; ++f) {
      const auto& arr = field(p.layers[i], kAllFields[f]);
      if (arr.size() != sizes[f]) {
        throw DataError("layer '" + g.layer(i).name + "' " + std::string(field_name(kAllFields[f])) +
                        " has " + std::to_string(arr.size()) + " values, expected " +
                        std::to_string(sizes[f]));
      }
    }
  }
}

/// Zero-filled store with the graph's array shapes.
inline ParamStore zero_params(const ModelGraph& g) {
  ParamStore p;
  p.layers.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto sizes = expected_sizes(g, i);
    for (std::size_t f = 0; f < 6; ++f) field(p.layers[i], kAllFields[f]).assign(sizes[f], 0.0);
  }
  return p;
}

/// He-normal weights, zero biases, identity batch norm.
inline ParamStore init_params(const ModelGraph& g, std::uint64_t seed) {
  ParamStore p = zero_params(g);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& l = g.layer(i);
    auto& lp = p.layers[i];
    const Shape in = g.shape(g.inputs_of(i)[0]);
    double fan_in = 1.0;
    switch (l.kind) {
      case LayerKind::conv3d:
        fan_in = static_cast<double>(in.channels) * l.kernel * l.kernel * l.kernel;
        break;
      case LayerKind::fully_connected:
        fan_in = static_cast<double>(in.count());
        break;
      case LayerKind::softmax:
        fan_in = 2.0 * static_cast<double>(in.count());
        break;
      case LayerKind::batchnorm:
        std::fill(lp.gamma.begin(), lp.gamma.end(), 1.0);
        std::fill(lp.running_var.begin(), lp.running_var.end(), 1.0);
        continue;
      default:
        continue;
    }
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& w : lp.weight) w = dist(rng);
  }
  return p;
}

}  // namespace voxplain::nn
