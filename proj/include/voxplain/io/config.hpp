#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>

#include "voxplain/io/volume_file.hpp"
#include "voxplain/nn/builders.hpp"
#include "voxplain/nn/train.hpp"
#include "voxplain/phantom.hpp"
#include "voxplain/segmentation/hierarchy.hpp"

namespace voxplain::io {

/// Settings shared by all subcommands. Empty optimizer and zero lr or
/// batch_size mean "use the default for the architecture / optimizer";
/// resolve() replaces them with concrete values.
struct RunConfig {
  // paths
  std::string data_dir;
  std::string output_dir = "out";
  std::string checkpoint;
  std::string volume;
  std::string mask;
  std::string heatmap;
  std::string hierarchy;

  // model and training
  std::string profile = "desk-32";
  std::string architecture = "resnet-gap";
  std::string optimizer;
  double lr = 0.0;
  int batch_size = 0;
  int epochs = 150;
  double momentum = 0.9;
  bool balanced_batches = true;
  std::uint64_t seed = 0;

  // attribution
  std::string method = "grad-cam";
  std::string target = "AD";
  std::string layer = "last-conv";
  int half_extent = 3;
  double fill = 0.0;
  int stride = 1;
  int n_seeds = 300;
  int n_levels = 10;

  // phantoms
  int n_per_class = 100;
  std::array<int, 3> dims{32, 32, 32};
  double noise_amplitude = 1.0;
  int correlation_length = 3;
  std::string lesion_shape = "cuboid";
  std::array<int, 3> lesion_origin{11, 11, 11};
  std::array<int, 3> lesion_extent{10, 10, 10};
  double delta = 1.0;
  int set_aside_ad = 0;
  int set_aside_nc = 0;

  // benchmark
  int splits = 5;
  int folds = 5;
  std::string pr_mode = "pooled";

  // slice export
  double alpha = 0.5;
  int slice_index = -1;  // -1 selects the center slice
  std::string axes = "horizontal,sagittal,coronal";

  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(RunConfig, data_dir, output_dir, checkpoint, volume, mask, heatmap,
                                              hierarchy, profile, architecture, optimizer, lr, batch_size, epochs,
                                              momentum, balanced_batches, seed, method, target, layer, half_extent,
                                              fill, stride, n_seeds, n_levels, n_per_class, dims, noise_amplitude,
                                              correlation_length, lesion_shape, lesion_origin, lesion_extent, delta,
                                              set_aside_ad, set_aside_nc, splits, folds, pr_mode, alpha,
                                              slice_index, axes)

  /// Fills architecture-dependent defaults and checks every enum-like value.
  void resolve() {
    const auto arch = nn::parse_architecture(architecture);
    nn::parse_profile(profile);
    if (optimizer.empty()) optimizer = nn::optimizer_name(nn::default_train_config(arch).optimizer);
    const auto opt = nn::parse_optimizer(optimizer);
    optimizer = nn::optimizer_name(opt);
    const nn::TrainConfig family =
        nn::default_train_config(opt == nn::Optimizer::adam ? nn::Architecture::vgg3d : nn::Architecture::resnet3d);
    if (lr == 0.0) lr = family.lr;
    if (batch_size == 0) batch_size = family.batch_size;
    train_config().validate();
    parse_label(target);
    phantom::parse_shape(lesion_shape);
    if (pr_mode != "pooled" && pr_mode != "mean") {
      throw std::invalid_argument("pr_mode must be 'pooled' or 'mean', got '" + pr_mode + "'");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (n_seeds < 1) throw std::invalid_argument("n_seeds must be >= 1");
    if (n_levels < 1 || n_levels > static_cast<int>(seg::kMaxLevels)) {
      throw std::invalid_argument("n_levels must lie in [1, 20]");
    }
  }

  nn::TrainConfig train_config() const {
    nn::TrainConfig c;
    c.optimizer = nn::parse_optimizer(optimizer);
    c.lr = lr;
    c.batch_size = batch_size;
    c.epochs = epochs;
    c.seed = seed;
    c.balanced_batches = balanced_batches;
    c.momentum = momentum;
    return c;
  }

  phantom::PhantomSpec phantom_spec() const {
    phantom::PhantomSpec s;
    s.dims = {dims[0], dims[1], dims[2]};
    s.noise_amplitude = noise_amplitude;
    s.correlation_length = correlation_length;
    s.shape = phantom::parse_shape(lesion_shape);
    s.lesion_origin = {lesion_origin[0], lesion_origin[1], lesion_origin[2]};
    s.lesion_extent = {lesion_extent[0], lesion_extent[1], lesion_extent[2]};
    s.delta = delta;
    s.seed = seed;
    return s;
  }
};

/// Parses a config object, rejecting keys RunConfig does not define.
inline RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  const json known = RunConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  try {
    return j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad config value: ") + e.what());
  }
}

inline RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// Copies the keys in `given` from `flags` over `base`.
inline RunConfig overlay(const RunConfig& base, const RunConfig& flags, const std::set<std::string>& given) {
  json b = base;
  const json f = flags;
  for (const auto& key : given) {
    if (!f.contains(key)) throw std::logic_error("overlay: unknown key '" + key + "'");
    b[key] = f[key];
  }
  return config_from_json(b);
}

}  // namespace voxplain::io
