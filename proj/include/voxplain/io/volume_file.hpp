#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "voxplain/core/heatmap.hpp"
#include "voxplain/io/binary.hpp"

namespace voxplain::io {

using json = nlohmann::json;

inline constexpr std::string_view kVolumeFormat = "voxplain-volume";
inline constexpr int kFormatVersion = 1;

enum class Kind { volume, heatmap, mask, labels };

inline std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::volume: return "volume";
    case Kind::heatmap: return "heatmap";
    case Kind::mask: return "mask";
    case Kind::labels: return "labels";
  }
  return "?";
}

inline Kind parse_kind(std::string_view s) {
  for (auto k : {Kind::volume, Kind::heatmap, Kind::mask, Kind::labels}) {
    if (kind_name(k) == s) return k;
  }
  throw DataError("unknown file kind '" + std::string(s) + "'");
}

/// Storage type implied by the kind.
inline std::string_view kind_dtype(Kind k) {
  switch (k) {
    case Kind::volume:
    case Kind::heatmap: return "float32";
    case Kind::mask: return "uint8";
    case Kind::labels: return "uint32";
  }
  return "?";
}

inline std::size_t dtype_size(std::string_view dtype) {
  if (dtype == "float32" || dtype == "uint32") return 4;
  if (dtype == "uint8") return 1;
  throw DataError("unknown dtype '" + std::string(dtype) + "'");
}

struct FileHeader {
  Kind kind = Kind::volume;
  std::string dtype = "float32";
  Dims3 dims{};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::optional<std::array<double, 2>> raw_range;  // heatmaps: scores before normalization
  std::optional<std::string> source_layer;

  std::size_t blob_bytes() const { return dims.count() * dtype_size(dtype); }

  json to_json() const {
    json j = {{"format", kVolumeFormat},
              {"version", kFormatVersion},
              {"kind", kind_name(kind)},
              {"dtype", dtype},
              {"dims", {dims.x, dims.y, dims.z}},
              {"spacing", spacing}};
    if (raw_range) j["raw_range"] = *raw_range;
    if (source_layer) j["source_layer"] = *source_layer;
    return j;
  }

  static FileHeader from_json(const json& j) {
    try {
      if (j.at("format").get<std::string>() != kVolumeFormat) throw DataError("not a voxplain volume file");
      if (j.at("version").get<int>() != kFormatVersion) {
        throw DataError("unsupported volume format version " + j.at("version").dump());
      }
      FileHeader h;
      h.kind = parse_kind(j.at("kind").get<std::string>());
      h.dtype = j.at("dtype").get<std::string>();
      dtype_size(h.dtype);
      if (h.dtype != kind_dtype(h.kind)) {
        throw DataError("dtype " + h.dtype + " does not match kind " + std::string(kind_name(h.kind)));
      }
      const auto d = j.at("dims").get<std::array<int, 3>>();
      h.dims = {d[0], d[1], d[2]};
      if (!h.dims.positive()) throw DataError("header dims must be positive, got " + h.dims.str());
      if (j.contains("spacing")) h.spacing = j.at("spacing").get<std::array<double, 3>>();
      if (j.contains("raw_range")) h.raw_range = j.at("raw_range").get<std::array<double, 2>>();
      if (j.contains("source_layer")) h.source_layer = j.at("source_layer").get<std::string>();
      return h;
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed volume header: ") + e.what());
    }
  }
};

namespace detail {

inline std::string encode_header(const FileHeader& h) { return h.to_json().dump() + "\n"; }

inline std::pair<FileHeader, std::string> load(const fs::path& path, Kind expected) {
  auto [head, blob] = split_header(read_file(path), path);
  json j;
  try {
    j = json::parse(head);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': header is not JSON: " + e.what());
  }
  FileHeader h = FileHeader::from_json(j);
  if (h.kind != expected) {
    throw DataError("'" + path.string() + "' holds a " + std::string(kind_name(h.kind)) + ", expected a " +
                    std::string(kind_name(expected)));
  }
  if (blob.size() != h.blob_bytes()) {
    throw DataError("'" + path.string() + "': length mismatch, expected " + std::to_string(h.blob_bytes()) +
                    " bytes, got " + std::to_string(blob.size()));
  }
  return {std::move(h), std::move(blob)};
}

template <typename T>
void apply_spacing(Grid3<T>& g, const FileHeader& h) {
  try {
    g.set_spacing(h.spacing);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

inline std::string encode_floats(const Grid3<double>& g) {
  std::string blob;
  blob.reserve(g.size() * 4);
  for (double v : g) put_le(blob, static_cast<float>(v));
  return blob;
}

inline Grid3<double> decode_floats(const FileHeader& h, const std::string& blob) {
  Grid3<double> g(h.dims, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(get_le<float>(blob.data() + 4 * i));
  apply_spacing(g, h);
  return g;
}

}  // namespace detail

inline FileHeader read_header(const fs::path& path) {
  auto [head, blob] = split_header(read_file(path), path);
  try {
    return FileHeader::from_json(json::parse(head));
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': header is not JSON: " + e.what());
  }
}

/// Values are stored as float32; in-memory doubles are narrowed on write.
inline void write_volume(const Volume& v, const fs::path& path) {
  require_finite(v);
  FileHeader h;
  h.kind = Kind::volume;
  h.dtype = "float32";
  h.dims = v.dims();
  h.spacing = v.spacing();
  write_atomic(path, detail::encode_header(h) + detail::encode_floats(v));
}

inline Volume read_volume(const fs::path& path) {
  const auto [h, blob] = detail::load(path, Kind::volume);
  Volume v = detail::decode_floats(h, blob);
  require_finite(v, "'" + path.string() + "'");
  return v;
}

struct HeatmapMeta {
  std::optional<std::array<double, 2>> raw_range;
  std::optional<std::string> source_layer;
};

struct HeatmapFile {
  Heatmap heatmap;
  HeatmapMeta meta;
};

inline void write_heatmap(const Heatmap& hm, const fs::path& path, const HeatmapMeta& meta = {}) {
  FileHeader h{.kind = Kind::heatmap,
               .dtype = "float32",
               .dims = hm.dims(),
               .spacing = hm.grid().spacing(),
               .raw_range = meta.raw_range,
               .source_layer = meta.source_layer};
  write_atomic(path, detail::encode_header(h) + detail::encode_floats(hm.grid()));
}

inline HeatmapFile read_heatmap(const fs::path& path) {
  const auto [h, blob] = detail::load(path, Kind::heatmap);
  return {Heatmap(detail::decode_floats(h, blob)), {h.raw_range, h.source_layer}};
}

inline void write_mask(const Mask& m, const fs::path& path) {
  FileHeader h;
  h.kind = Kind::mask;
  h.dtype = "uint8";
  h.dims = m.dims();
  h.spacing = m.spacing();
  std::string blob(m.begin(), m.end());
  write_atomic(path, detail::encode_header(h) + blob);
}

inline Mask read_mask(const fs::path& path) {
  const auto [h, blob] = detail::load(path, Kind::mask);
  Mask m(h.dims, std::vector<std::uint8_t>(blob.begin(), blob.end()));
  detail::apply_spacing(m, h);
  return m;
}

inline void write_labels(const LabelGrid& l, const fs::path& path) {
  FileHeader h;
  h.kind = Kind::labels;
  h.dtype = "uint32";
  h.dims = l.dims();
  h.spacing = l.spacing();
  std::string blob;
  blob.reserve(l.size() * 4);
  for (std::uint32_t v : l) put_le(blob, v);
  write_atomic(path, detail::encode_header(h) + blob);
}

inline LabelGrid read_labels(const fs::path& path) {
  const auto [h, blob] = detail::load(path, Kind::labels);
  LabelGrid l(h.dims, 0u);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = get_le<std::uint32_t>(blob.data() + 4 * i);
  detail::apply_spacing(l, h);
  return l;
}

}  // namespace voxplain::io
