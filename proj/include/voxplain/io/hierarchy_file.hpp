#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "voxplain/io/volume_file.hpp"
#include "voxplain/segmentation/hierarchy.hpp"

namespace voxplain::io {

inline constexpr std::string_view kHierarchyFormat = "voxplain-hierarchy";

/// Writes <dir>/hierarchy.json plus one labels file per level.
inline void write_hierarchy(const seg::SegmentationHierarchy& h, const fs::path& dir) {
  if (h.level_count() == 0) throw std::invalid_argument("write_hierarchy: empty hierarchy");
  fs::create_directories(dir);
  json levels = json::array();
  for (std::size_t n = 0; n < h.level_count(); ++n) {
    char name[32];
    std::snprintf(name, sizeof name, "level_%02zu.vxl", n + 1);
    write_labels(h.levels[n], dir / name);
    json entry = {{"file", name}, {"segments", h.segment_counts[n]}, {"merges_applied", h.merges_applied[n]}};
    entry["cut_height"] = std::isfinite(h.cut_heights[n]) ? json(h.cut_heights[n]) : json(nullptr);
    levels.push_back(std::move(entry));
  }
  const auto d = h.dims();
  const json index = {{"format", kHierarchyFormat},
                      {"version", kFormatVersion},
                      {"dims", {d.x, d.y, d.z}},
                      {"levels", levels}};
  write_atomic(dir / "hierarchy.json", index.dump(2) + "\n");
}

inline seg::SegmentationHierarchy read_hierarchy(const fs::path& dir) {
  json index;
  try {
    index = json::parse(read_file(dir / "hierarchy.json"));
  } catch (const json::exception& e) {
    throw DataError("'" + (dir / "hierarchy.json").string() + "': " + e.what());
  }
  seg::SegmentationHierarchy h;
  try {
    if (index.at("format").get<std::string>() != kHierarchyFormat) throw DataError("not a hierarchy index");
    for (const auto& entry : index.at("levels")) {
      LabelGrid level = read_labels(dir / entry.at("file").get<std::string>());
      const auto K = entry.at("segments").get<std::uint32_t>();
      for (std::uint32_t lab : level) {
        if (lab < 1 || lab > K) throw DataError("hierarchy level label outside 1.." + std::to_string(K));
      }
      if (!h.levels.empty()) require_same_dims(h.dims(), level.dims(), "hierarchy level");
      h.levels.push_back(std::move(level));
      h.segment_counts.push_back(K);
      h.merges_applied.push_back(entry.at("merges_applied").get<std::size_t>());
      const auto& cut = entry.at("cut_height");
      h.cut_heights.push_back(cut.is_null() ? -std::numeric_limits<double>::infinity() : cut.get<double>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed hierarchy index: ") + e.what());
  }
  if (h.levels.empty()) throw DataError("hierarchy index lists no levels");
  return h;
}

}  // namespace voxplain::io
