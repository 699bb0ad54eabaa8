#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxplain/core/grid.hpp"
#include "voxplain/nn/graph.hpp"

namespace voxplain {

struct Sample {
  std::string id;
  Volume volume;
  Label label = Label::NC;
  std::optional<Mask> mask;  // ground-truth localization target, when known
  bool set_aside = false;    // reserved for explanation analysis, never trained on
};

/// Labeled volumes plus the set-aside flag used by the evaluation protocol.
struct LabeledDataset {
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }

  std::size_t count(Label l, bool include_set_aside = false) const {
    std::size_t n = 0;
    for (const auto& s : samples) {
      if (s.label == l && (include_set_aside || !s.set_aside)) ++n;
    }
    return n;
  }

  /// Indices of samples available for training and testing.
  std::vector<std::size_t> working_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!samples[i].set_aside) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> set_aside_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].set_aside) out.push_back(i);
    }
    return out;
  }
};

}  // namespace voxplain
