#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxplain/io/volume_file.hpp"
#include "voxplain/nn/params.hpp"
#include "voxplain/nn/train.hpp"

namespace voxplain::io {

inline constexpr std::string_view kCheckpointFormat = "voxplain-checkpoint";

inline json to_json(const nn::TrainConfig& c) {
  return {{"optimizer", nn::optimizer_name(c.optimizer)},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"balanced_batches", c.balanced_batches},
          {"momentum", c.momentum}};
}

inline nn::TrainConfig train_config_from_json(const json& j) {
  nn::TrainConfig c;
  c.optimizer = nn::parse_optimizer(j.at("optimizer").get<std::string>());
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.balanced_batches = j.at("balanced_batches").get<bool>();
  c.momentum = j.at("momentum").get<double>();
  return c;
}

/// A trained model: graph, parameters and how they were produced.
struct Checkpoint {
  nn::ModelGraph graph;
  nn::ParamStore params;
  std::optional<nn::TrainConfig> train_config;
  std::vector<double> loss_history;
};

/// Manifest line followed by every parameter array as float32, layer by
/// layer in the field order weight, bias, gamma, beta, running_mean,
/// running_var.
inline std::string encode_checkpoint(const Checkpoint& ck) {
  nn::check_params(ck.graph, ck.params);
  json layers = json::array();
  std::string blob;
  for (std::size_t i = 0; i < ck.graph.size(); ++i) {
    const auto& l = ck.graph.layer(i);
    const auto& s = ck.graph.shape(static_cast<int>(i));
    json counts = json::object();
    for (nn::ParamField f : nn::kAllFields) {
      const auto& arr = nn::field(ck.params[i], f);
      if (!arr.empty()) counts[std::string(nn::field_name(f))] = arr.size();
      for (double v : arr) put_le(blob, static_cast<float>(v));
    }
    layers.push_back({{"name", l.name},
                      {"kind", nn::kind_name(l.kind)},
                      {"inputs", l.inputs},
                      {"out_channels", l.out_channels},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"padding", l.padding},
                      {"ceil_mode", l.ceil_mode},
                      {"dropout_rate", l.dropout_rate},
                      {"shape", {s.channels, s.dims.x, s.dims.y, s.dims.z}},
                      {"params", counts}});
  }
  const auto& d = ck.graph.input_dims();
  json manifest = {{"format", kCheckpointFormat},
                   {"version", kFormatVersion},
                   {"architecture", ck.graph.architecture()},
                   {"input_dims", {d.x, d.y, d.z}},
                   {"input_channels", ck.graph.input_channels()},
                   {"layers", layers},
                   {"loss_history", ck.loss_history},
                   {"blob_bytes", blob.size()}};
  if (ck.train_config) {
    manifest["train_config"] = to_json(*ck.train_config);
    manifest["seed"] = ck.train_config->seed;
  }
  return manifest.dump() + "\n" + blob;
}

inline void write_checkpoint(const Checkpoint& ck, const fs::path& path) { write_atomic(path, encode_checkpoint(ck)); }

inline Checkpoint read_checkpoint(const fs::path& path) {
  auto [head, blob] = split_header(read_file(path), path);
  Checkpoint ck;
  try {
    const json m = json::parse(head);
    if (m.at("format").get<std::string>() != kCheckpointFormat) throw DataError("not a voxplain checkpoint");
    if (m.at("version").get<int>() != kFormatVersion) throw DataError("unsupported checkpoint version");
    const auto expected = m.at("blob_bytes").get<std::size_t>();
    if (blob.size() != expected) {
      throw DataError("'" + path.string() + "': length mismatch, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(blob.size()));
    }
    std::vector<nn::LayerSpec> specs;
    for (const auto& jl : m.at("layers")) {
      nn::LayerSpec l;
      l.name = jl.at("name").get<std::string>();
      l.kind = nn::parse_kind(jl.at("kind").get<std::string>());
      l.inputs = jl.at("inputs").get<std::vector<std::string>>();
      l.out_channels = jl.at("out_channels").get<int>();
      l.kernel = jl.at("kernel").get<int>();
      l.stride = jl.at("stride").get<int>();
      l.padding = jl.at("padding").get<int>();
      l.ceil_mode = jl.at("ceil_mode").get<bool>();
      l.dropout_rate = jl.at("dropout_rate").get<double>();
      specs.push_back(std::move(l));
    }
    const auto d = m.at("input_dims").get<std::array<int, 3>>();
    try {
      ck.graph = nn::ModelGraph(m.at("architecture").get<std::string>(), {d[0], d[1], d[2]}, std::move(specs),
                                m.at("input_channels").get<int>());
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string("checkpoint graph is invalid: ") + e.what());
    }
    ck.params = nn::zero_params(ck.graph);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < ck.graph.size(); ++i) {
      for (nn::ParamField f : nn::kAllFields) {
        auto& arr = nn::field(ck.params[i], f);
        const auto& counts = m.at("layers")[i].at("params");
        const std::size_t listed = counts.contains(nn::field_name(f))
                                       ? counts.at(std::string(nn::field_name(f))).get<std::size_t>()
                                       : 0;
        if (listed != arr.size()) {
          throw DataError("checkpoint layer '" + ck.graph.layer(i).name + "' lists " + std::to_string(listed) + " " +
                          std::string(nn::field_name(f)) + " values, graph needs " + std::to_string(arr.size()));
        }
        for (double& v : arr) {
          v = static_cast<double>(get_le<float>(blob.data() + offset));
          offset += 4;
        }
      }
    }
    if (offset != blob.size()) throw DataError("checkpoint blob has trailing bytes");
    if (!ck.params.all_finite()) throw DataError("checkpoint holds non-finite parameters");
    if (m.contains("train_config")) ck.train_config = train_config_from_json(m.at("train_config"));
    ck.loss_history = m.at("loss_history").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  return ck;
}

}  // namespace voxplain::io
