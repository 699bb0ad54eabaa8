#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "voxplain/attribution/activation_maps.hpp"
#include "voxplain/attribution/occlusion.hpp"

namespace voxplain::attr {

enum class Method { baseline, sa_hier, cam, grad_cam };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::baseline: return "baseline";
    case Method::sa_hier: return "sa-hier";
    case Method::cam: return "cam";
    case Method::grad_cam: return "grad-cam";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (auto m : {Method::baseline, Method::sa_hier, Method::cam, Method::grad_cam}) {
    if (method_name(m) == s) return m;
  }
  throw std::invalid_argument("unknown attribution method '" + std::string(s) + "'");
}

struct AttributionRequest {
  Method method = Method::grad_cam;
  Label target = Label::AD;
  int half_extent = 3;
  double fill = 0.0;
  int stride = 1;
  std::string layer = "last-conv";
  const seg::SegmentationHierarchy* hierarchy = nullptr;

  void validate() const {
    if (half_extent < 0) throw std::invalid_argument("half extent must be >= 0");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (method == Method::sa_hier && hierarchy == nullptr) {
      throw std::invalid_argument("sa-hier needs a segmentation hierarchy");
    }
  }
};

struct Explanation {
  Heatmap heatmap;
  std::optional<Grid3<double>> coarse;  // activation methods only
  std::string layer;
  std::size_t forward_passes = 0;
};

inline Explanation explain(const nn::ModelGraph& g, const nn::ParamStore& p, const Volume& v,
                           const AttributionRequest& req) {
  req.validate();
  Explanation out;
  switch (req.method) {
    case Method::baseline:
    case Method::sa_hier: {
      const NetworkModel net(g, p);
      const CountingModel counted(net);
      if (req.method == Method::baseline) {
        out.heatmap = baseline_occlusion(counted, v,
                                         {.half_extent = req.half_extent, .fill = req.fill, .stride = req.stride,
                                          .target = req.target});
      } else {
        out.heatmap = sa_hierarchical(counted, v, *req.hierarchy, {.fill = req.fill, .target = req.target});
      }
      out.forward_passes = counted.passes();
      break;
    }
    case Method::cam:
    case Method::grad_cam: {
      auto map = req.method == Method::cam ? cam(g, p, v, req.target) : grad_cam(g, p, v, req.layer, req.target);
      out.heatmap = std::move(map.upsampled);
      out.coarse = std::move(map.coarse);
      out.layer = std::move(map.layer);
      out.forward_passes = 1;
      break;
    }
  }
  return out;
}

}  // namespace voxplain::attr
