#pragma once

#include <string>

#include "voxplain/core/dataset.hpp"
#include "voxplain/io/volume_file.hpp"

namespace voxplain::io {

inline constexpr std::string_view kDatasetFormat = "voxplain-dataset";

/// Writes <dir>/dataset.json plus volumes/<id>.vxl and masks/<id>.vxl.
inline void write_dataset(const LabeledDataset& ds, const fs::path& dir) {
  json samples = json::array();
  for (const auto& s : ds.samples) {
    if (s.id.empty() || s.id.find('/') != std::string::npos) {
      throw std::invalid_argument("sample id '" + s.id + "' is not usable as a file name");
    }
    json entry = {{"id", s.id},
                  {"label", std::string(label_name(s.label))},
                  {"volume", "volumes/" + s.id + ".vxl"},
                  {"set_aside", s.set_aside}};
    write_volume(s.volume, dir / "volumes" / (s.id + ".vxl"));
    if (s.mask) {
      entry["mask"] = "masks/" + s.id + ".vxl";
      write_mask(*s.mask, dir / "masks" / (s.id + ".vxl"));
    }
    samples.push_back(std::move(entry));
  }
  const json index = {{"format", kDatasetFormat}, {"version", kFormatVersion}, {"samples", samples}};
  write_atomic(dir / "dataset.json", index.dump(2) + "\n");
}

inline LabeledDataset read_dataset(const fs::path& dir) {
  const fs::path index_path = dir / "dataset.json";
  LabeledDataset ds;
  try {
    const json index = json::parse(read_file(index_path));
    if (index.at("format").get<std::string>() != kDatasetFormat) throw DataError("not a dataset index");
    for (const auto& e : index.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::string>();
      s.label = parse_label(e.at("label").get<std::string>());
      s.volume = read_volume(dir / e.at("volume").get<std::string>());
      if (e.contains("mask")) {
        s.mask = read_mask(dir / e.at("mask").get<std::string>());
        require_same_dims(s.volume.dims(), s.mask->dims(), "mask of sample " + s.id);
      }
      s.set_aside = e.value("set_aside", false);
      if (!ds.samples.empty()) require_same_dims(ds.samples.front().volume.dims(), s.volume.dims(), "sample " + s.id);
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError("'" + index_path.string() + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError("'" + index_path.string() + "': " + e.what());
  }
  if (ds.samples.empty()) throw DataError("'" + index_path.string() + "' lists no samples");
  return ds;
}

}  // namespace voxplain::io
