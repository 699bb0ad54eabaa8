#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "voxplain/nn/graph.hpp"

namespace voxplain::nn {

/// Grid-size profiles. paper-110 takes 110^3 inputs at full width; desk-32
/// takes 32^3 inputs with narrow layers so everything runs on a laptop CPU.
enum class Profile { paper110, desk32 };

enum class Architecture { vgg3d, resnet3d, resnet3d_gap, resnet3d_shallow_gap };

inline std::string_view profile_name(Profile p) { return p == Profile::paper110 ? "paper-110" : "desk-32"; }

inline Profile parse_profile(std::string_view s) {
  if (s == "paper-110") return Profile::paper110;
  if (s == "desk-32") return Profile::desk32;
  throw std::invalid_argument("unknown profile '" + std::string(s) + "' (expected paper-110 or desk-32)");
}

inline std::string_view architecture_name(Architecture a) {
  switch (a) {
    case Architecture::vgg3d: return "vgg";
    case Architecture::resnet3d: return "resnet";
    case Architecture::resnet3d_gap: return "resnet-gap";
    case Architecture::resnet3d_shallow_gap: return "resnet-shallow-gap";
  }
  return "?";
}

/// Row label used in classification report tables.
inline std::string_view architecture_title(Architecture a) {
  switch (a) {
    case Architecture::vgg3d: return "3D-VGGNet";
    case Architecture::resnet3d: return "3D-ResNet";
    case Architecture::resnet3d_gap: return "3D-ResNet-GAP";
    case Architecture::resnet3d_shallow_gap: return "3D-ResNet-Shallow-GAP";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  for (auto a : {Architecture::vgg3d, Architecture::resnet3d, Architecture::resnet3d_gap,
                 Architecture::resnet3d_shallow_gap}) {
    if (architecture_name(a) == s) return a;
  }
  throw std::invalid_argument("unknown architecture '" + std::string(s) + "'");
}

inline Dims3 profile_input(Profile p) { return p == Profile::paper110 ? cube(110) : cube(32); }

namespace detail {

class LayerList {
public:
  LayerList& conv(std::string name, int out, int pad, int stride = 1) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::conv3d;
    l.out_channels = out;
    l.kernel = 3;
    l.stride = stride;
    l.padding = pad;
    return push(std::move(l));
  }
  LayerList& simple(std::string name, LayerKind kind) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = kind;
    return push(std::move(l));
  }
  LayerList& pool(std::string name, bool ceil_mode) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::maxpool3d;
    l.kernel = 2;
    l.stride = 2;
    l.ceil_mode = ceil_mode;
    return push(std::move(l));
  }
  LayerList& fc(std::string name, int width) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::fully_connected;
    l.out_channels = width;
    return push(std::move(l));
  }
  LayerList& dropout(std::string name, double rate) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::dropout;
    l.dropout_rate = rate;
    return push(std::move(l));
  }
  LayerList& output() {
    LayerSpec l;
    l.name = "output";
    l.kind = LayerKind::softmax;
    l.out_channels = kClassCount;
    return push(std::move(l));
  }
  /// conv_a -> bn -> relu -> conv_b, added to the block input.
  LayerList& residual_block(const std::string& name, int channels) {
    const std::string input = layers_.back().name;
    conv(name + "_conv_a", channels, 1);
    simple(name + "_bn", LayerKind::batchnorm);
    simple(name + "_relu", LayerKind::relu);
    conv(name + "_conv_b", channels, 1);
    LayerSpec add;
    add.name = name + "_out";
    add.kind = LayerKind::residual_add;
    add.inputs = {input, name + "_conv_b"};
    return push(std::move(add));
  }

  std::vector<LayerSpec> take() { return std::move(layers_); }

private:
  LayerList& push(LayerSpec l) {
    layers_.push_back(std::move(l));
    return *this;
  }
  std::vector<LayerSpec> layers_;
};

struct ResNetWidths {
  int stem_a, stem_c, stage2, stage3, stage4, fc;
};

inline ResNetWidths resnet_widths(Profile p) {
  return p == Profile::paper110 ? ResNetWidths{32, 64, 64, 64, 128, 128} : ResNetWidths{4, 8, 8, 16, 16, 32};
}

enum class ResNetHead { pooled_fc, gap, shallow_gap };

inline ModelGraph build_resnet(Profile profile, ResNetHead head) {
  const auto w = resnet_widths(profile);
  LayerList b;
  b.conv("conv1a", w.stem_a, 1)
      .simple("bn1a", LayerKind::batchnorm)
      .simple("relu1a", LayerKind::relu)
      .conv("conv1b", w.stem_a, 1)
      .simple("bn1b", LayerKind::batchnorm)
      .simple("relu1b", LayerKind::relu)
      .conv("conv1c", w.stem_c, 1, 2)
      .residual_block("voxres2", w.stage2)
      .residual_block("voxres3", w.stage2)
      .simple("bn4", LayerKind::batchnorm)
      .simple("relu4", LayerKind::relu);
  std::string arch;
  if (head == ResNetHead::shallow_gap) {
    b.simple("gap", LayerKind::global_average_pool).output();
    arch = "resnet-shallow-gap";
  } else {
    b.conv("conv4", w.stage3, 1, 2)
        .residual_block("voxres5", w.stage3)
        .residual_block("voxres6", w.stage3)
        .simple("bn7", LayerKind::batchnorm)
        .simple("relu7", LayerKind::relu)
        .conv("conv7", w.stage4, 1, 2)
        .residual_block("voxres8", w.stage4)
        .residual_block("voxres9", w.stage4);
    if (head == ResNetHead::gap) {
      b.simple("gap", LayerKind::global_average_pool).output();
      arch = "resnet-gap";
    } else {
      b.pool("pool10", true).fc("fc11", w.fc).simple("relu11", LayerKind::relu).output();
      arch = "resnet";
    }
  }
  return ModelGraph(arch, profile_input(profile), b.take());
}

}  // namespace detail

/// Four conv+pool blocks followed by FC -> batchnorm -> dropout -> FC and
/// the softmax output layer. At paper-110 the convolutions are unpadded so
/// that the last conv grid is 3^3; desk-32 pads to keep the grid usable.
inline ModelGraph build_vgg3d(Profile profile, double dropout_rate = 0.5) {
  const bool full = profile == Profile::paper110;
  const std::array<int, 4> widths = full ? std::array{8, 16, 32, 64} : std::array{4, 8, 8, 16};
  const std::array<int, 4> depth = {2, 2, 3, 3};
  const int pad = full ? 0 : 1;
  detail::LayerList b;
  for (int blk = 0; blk < 4; ++blk) {
    for (int c = 0; c < depth[blk]; ++c) {
      const std::string id = std::to_string(blk + 1) + static_cast<char>('a' + c);
      b.conv("conv" + id, widths[blk], pad).simple("relu" + id, LayerKind::relu);
    }
    b.pool("pool" + std::to_string(blk + 1), !full);
  }
  const int fc1 = full ? 128 : 32;
  const int fc2 = full ? 64 : 16;
  b.fc("fc5", fc1)
      .simple("bn5", LayerKind::batchnorm)
      .simple("relu5", LayerKind::relu)
      .dropout("drop5", dropout_rate)
      .fc("fc6", fc2)
      .simple("relu6", LayerKind::relu)
      .output();
  return ModelGraph("vgg", profile_input(profile), b.take());
}

/// Six residual blocks in three stages with strided-conv downsampling, then
/// max pool -> FC -> softmax output.
inline ModelGraph build_resnet3d(Profile profile) {
  return detail::build_resnet(profile, detail::ResNetHead::pooled_fc);
}

/// build_resnet3d with the head replaced by global average pooling feeding
/// the softmax output layer.
inline ModelGraph build_resnet3d_gap(Profile profile) {
  return detail::build_resnet(profile, detail::ResNetHead::gap);
}

/// ResNet-GAP with conv4 through voxres9_out removed; the GAP reads the
/// first-stage grid.
inline ModelGraph build_resnet3d_shallow_gap(Profile profile) {
  return detail::build_resnet(profile, detail::ResNetHead::shallow_gap);
}

inline ModelGraph build_model(Architecture a, Profile p) {
  switch (a) {
    case Architecture::vgg3d: return build_vgg3d(p);
    case Architecture::resnet3d: return build_resnet3d(p);
    case Architecture::resnet3d_gap: return build_resnet3d_gap(p);
    case Architecture::resnet3d_shallow_gap: return build_resnet3d_shallow_gap(p);
  }
  throw std::invalid_argument("unknown architecture");
}

}  // namespace voxplain::nn
