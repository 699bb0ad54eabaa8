#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "voxplain/core/grid.hpp"

namespace voxplain {

/// Class labels. The logit/probability index of a class equals its value.
enum class Label : int { NC = 0, AD = 1 };

inline constexpr int kClassCount = 2;

inline std::string_view label_name(Label l) { return l == Label::AD ? "AD" : "NC"; }

inline Label parse_label(std::string_view s) {
  if (s == "AD" || s == "ad" || s == "1") return Label::AD;
  if (s == "NC" || s == "nc" || s == "0") return Label::NC;
  throw std::invalid_argument("unknown class label '" + std::string(s) + "' (expected AD or NC)");
}

namespace nn {

enum class LayerKind : std::uint8_t {
  conv3d,
  maxpool3d,
  batchnorm,
  relu,
  residual_add,
  fully_connected,
  global_average_pool,
  dropout,
  // Output layer: class weights and biases applied to its input features,
  // followed by softmax normalization.
  softmax,
};

inline std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::maxpool3d: return "maxpool3d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::residual_add: return "residual-add";
    case LayerKind::fully_connected: return "fully-connected";
    case LayerKind::global_average_pool: return "global-average-pool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

inline LayerKind parse_kind(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(LayerKind::softmax); ++k) {
    if (kind_name(static_cast<LayerKind>(k)) == s) return static_cast<LayerKind>(k);
  }
  throw DataError("unknown layer kind '" + std::string(s) + "'");
}

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  /// Producer node names; empty means the previous layer (or the graph input
  /// for the first layer). Residual adds name both operands.
  std::vector<std::string> inputs;
  int out_channels = 0;  // conv filters, FC width, or class count for softmax
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  bool ceil_mode = false;
  double dropout_rate = 0.5;
};

/// Per-sample tensor shape: channels over a spatial grid. Flat feature
/// vectors use a 1x1x1 grid.
struct Shape {
  int channels = 1;
  Dims3 dims{};
  std::size_t spatial() const noexcept { return dims.count(); }
  std::size_t count() const noexcept { return static_cast<std::size_t>(channels) * spatial(); }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const { return std::to_string(channels) + "@" + dims.str(); }
};

inline bool is_spatial(LayerKind k) {
  return k == LayerKind::conv3d || k == LayerKind::maxpool3d || k == LayerKind::batchnorm ||
         k == LayerKind::relu || k == LayerKind::residual_add || k == LayerKind::dropout;
}

inline int conv_output_size(int n, int kernel, int stride, int padding) {
  const int span = n + 2 * padding - kernel;
  return span < 0 ? 0 : span / stride + 1;
}

inline int pool_output_size(int n, int kernel, int stride, bool ceil_mode) {
  if (n < kernel) return ceil_mode ? 1 : 0;
  int out = ceil_mode ? (n - kernel + stride - 1) / stride + 1 : (n - kernel) / stride + 1;
  // Every window must start inside the input.
  if (ceil_mode && (out - 1) * stride >= n) --out;
  return out;
}

/// Ordered DAG of layers. Layers are listed in topological order; each one
/// consumes earlier nodes only, so the graph is acyclic by construction.
/// Construction validates names, hyperparameters and shape propagation.
class ModelGraph {
public:
  ModelGraph() = default;

  ModelGraph(std::string architecture, Dims3 input_dims, std::vector<LayerSpec> layers,
             int input_channels = 1)
      : architecture_(std::move(architecture)),
        input_dims_(input_dims),
        input_channels_(input_channels),
        layers_(std::move(layers)) {
    resolve();
  }

  const std::string& architecture() const noexcept { return architecture_; }
  const Dims3& input_dims() const noexcept { return input_dims_; }
  int input_channels() const noexcept { return input_channels_; }
  Shape input_shape() const noexcept { return {input_channels_, input_dims_}; }
  int class_count() const noexcept { return kClassCount; }

  std::size_t size() const noexcept { return layers_.size(); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }

  /// Producer indices of layer i; -1 denotes the graph input.
  const std::vector<int>& inputs_of(std::size_t i) const { return inputs_.at(i); }
  /// Output shape of layer i; input_shape() for index -1.
  const Shape& shape(int i) const { return i < 0 ? input_shape_ : shapes_.at(static_cast<std::size_t>(i)); }
  /// Indices of layers consuming node i.
  const std::vector<int>& consumers_of(std::size_t i) const { return consumers_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw std::invalid_argument("no layer named '" + std::string(name) + "'");
  }

  std::size_t output_index() const noexcept { return layers_.size() - 1; }

  /// True when the head is global-average-pool feeding the softmax output
  /// layer directly.
  bool has_gap_head() const {
    if (layers_.size() < 2) return false;
    const auto out = output_index();
    const auto& in = inputs_[out];
    return in.size() == 1 && in[0] >= 0 &&
           layers_[static_cast<std::size_t>(in[0])].kind == LayerKind::global_average_pool &&
           static_cast<std::size_t>(in[0]) == out - 1;
  }

  /// Index of the last convolutional-stage node: the last layer with a
  /// spatial output that is a conv, batchnorm, relu, or residual add.
  std::size_t last_conv_index() const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const auto k = layers_[i].kind;
      if (k == LayerKind::conv3d || k == LayerKind::batchnorm || k == LayerKind::relu ||
          k == LayerKind::residual_add) {
        if (is_spatial_output(i)) return i;
      }
    }
    throw std::invalid_argument("model has no convolutional layer");
  }

  /// Layer name, resolving the alias "last-conv".
  std::size_t resolve_layer(std::string_view name) const {
    if (name == "last-conv") return last_conv_index();
    return index_of(name);
  }

  bool is_spatial_output(std::size_t i) const { return spatial_[i]; }

  /// True when node i contributes to the output layer.
  bool reaches_output(std::size_t i) const { return reaches_output_.at(i); }

  /// Layer kinds after node i, in order.
  std::vector<LayerKind> kinds_after(std::size_t i) const {
    std::vector<LayerKind> out;
    for (std::size_t j = i + 1; j < layers_.size(); ++j) out.push_back(layers_[j].kind);
    return out;
  }

private:
  void fail(const LayerSpec& l, const std::string& msg) const {
    throw std::invalid_argument("layer '" + l.name + "' (" + std::string(kind_name(l.kind)) +
                                "): " + msg);
  }

  void resolve() {
    if (!input_dims_.positive() || input_channels_ <= 0) {
      throw std::invalid_argument("model input shape must be positive");
    }
    if (layers_.empty()) throw std::invalid_argument("model has no layers");
    input_shape_ = {input_channels_, input_dims_};
    inputs_.assign(layers_.size(), {});
    shapes_.assign(layers_.size(), {});
    spatial_.assign(layers_.size(), false);
    consumers_.assign(layers_.size(), {});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.name.empty() || l.name == "input") fail(l, "invalid layer name");
      if (!index_.emplace(l.name, i).second) fail(l, "duplicate layer name");
      auto& in = inputs_[i];
      if (l.inputs.empty()) {
        in.push_back(static_cast<int>(i) - 1);
      } else {
        for (const auto& name : l.inputs) {
          if (name == "input") {
            in.push_back(-1);
            continue;
          }
          const auto it = index_.find(name);
          if (it == index_.end() || it->second >= i) fail(l, "input '" + name + "' is not an earlier layer");
          in.push_back(static_cast<int>(it->second));
        }
      }
      const std::size_t arity = l.kind == LayerKind::residual_add ? 2 : 1;
      if (in.size() != arity) fail(l, "expected " + std::to_string(arity) + " input(s)");
      for (int p : in) {
        if (p >= 0) consumers_[static_cast<std::size_t>(p)].push_back(static_cast<int>(i));
      }
      const Shape s = shape(in[0]);
      const bool in_spatial = in[0] < 0 || spatial_[static_cast<std::size_t>(in[0])];
      Shape out = s;
      bool sp = in_spatial;
      switch (l.kind) {
        case LayerKind::conv3d: {
          if (!in_spatial) fail(l, "needs a spatial input");
          if (l.kernel <= 0 || l.stride <= 0 || l.padding < 0 || l.out_channels <= 0) {
            fail(l, "kernel/stride/channels must be positive and padding non-negative");
          }
          out.channels = l.out_channels;
          out.dims = {conv_output_size(s.dims.x, l.kernel, l.stride, l.padding),
                      conv_output_size(s.dims.y, l.kernel, l.stride, l.padding),
                      conv_output_size(s.dims.z, l.kernel, l.stride, l.padding)};
          break;
        }
        case LayerKind::maxpool3d: {
          if (!in_spatial) fail(l, "needs a spatial input");
          if (l.kernel <= 0 || l.stride <= 0) fail(l, "kernel/stride must be positive");
          out.dims = {pool_output_size(s.dims.x, l.kernel, l.stride, l.ceil_mode),
                      pool_output_size(s.dims.y, l.kernel, l.stride, l.ceil_mode),
                      pool_output_size(s.dims.z, l.kernel, l.stride, l.ceil_mode)};
          break;
        }
        case LayerKind::batchnorm:
        case LayerKind::relu:
          break;
        case LayerKind::dropout:
          if (!(l.dropout_rate >= 0.0 && l.dropout_rate < 1.0)) fail(l, "dropout rate must lie in [0, 1)");
          break;
        case LayerKind::residual_add: {
          const Shape other = shape(in[1]);
          if (!(other == s)) fail(l, "operand shapes differ: " + s.str() + " vs " + other.str());
          break;
        }
        case LayerKind::fully_connected:
          if (l.out_channels <= 0) fail(l, "width must be positive");
          out = {l.out_channels, {1, 1, 1}};
          sp = false;
          break;
        case LayerKind::global_average_pool:
          if (!in_spatial) fail(l, "needs a spatial input");
          out = {s.channels, {1, 1, 1}};
          sp = false;
          break;
        case LayerKind::softmax:
          if (i + 1 != layers_.size()) fail(l, "softmax must be the final layer");
          if (l.out_channels != kClassCount) fail(l, "softmax must produce 2 class logits");
          out = {kClassCount, {1, 1, 1}};
          sp = false;
          break;
      }
      if (!out.dims.positive()) fail(l, "shape propagation produced empty grid from " + s.str());
      shapes_[i] = out;
      spatial_[i] = sp;
    }
    if (layers_.back().kind != LayerKind::softmax) {
      throw std::invalid_argument("model must end with a softmax output layer");
    }
    reaches_output_.assign(layers_.size(), false);
    reaches_output_.back() = true;
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
      for (int c : consumers_[i]) {
        if (reaches_output_[static_cast<std::size_t>(c)]) reaches_output_[i] = true;
      }
    }
  }

  std::string architecture_;
  Dims3 input_dims_{};
  int input_channels_ = 1;
  std::vector<LayerSpec> layers_;
  Shape input_shape_{};
  std::vector<std::vector<int>> inputs_;
  std::vector<Shape> shapes_;
  std::vector<bool> spatial_;
  std::vector<std::vector<int>> consumers_;
  std::vector<bool> reaches_output_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace nn
}  // namespace voxplain
