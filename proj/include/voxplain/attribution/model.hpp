#pragma once

#include <atomic>
#include <concepts>
#include <cstddef>

#include "voxplain/core/grid.hpp"
#include "voxplain/nn/engine.hpp"

namespace voxplain::attr {

/// Anything that maps a volume to a class probability. The perturbation
/// methods only need this much, so they work with any classifier.
template <typename M>
concept ProbabilityModel = requires(const M& m, const Volume& v) {
  { m.probability(v, Label::AD) } -> std::convertible_to<double>;
  { m.input_dims() } -> std::convertible_to<Dims3>;
};

/// Eval-mode network behind the ProbabilityModel interface.
class NetworkModel {
public:
  NetworkModel(const nn::ModelGraph& graph, const nn::ParamStore& params) : graph_(graph), params_(params) {
    nn::check_params(graph_, params_);
  }

  double probability(const Volume& v, Label target) const {
    return nn::forward(graph_, params_, v, nn::Mode::eval).probability(target);
  }
  Dims3 input_dims() const { return graph_.input_dims(); }

private:
  const nn::ModelGraph& graph_;
  const nn::ParamStore& params_;
};

/// Decorator counting forward passes; safe to share across worker threads.
template <ProbabilityModel M>
class CountingModel {
public:
  explicit CountingModel(const M& inner) : inner_(inner) {}

  double probability(const Volume& v, Label target) const {
    passes_.fetch_add(1, std::memory_order_relaxed);
    return inner_.probability(v, target);
  }
  Dims3 input_dims() const { return inner_.input_dims(); }
  std::size_t passes() const { return passes_.load(); }

private:
  const M& inner_;
  mutable std::atomic<std::size_t> passes_{0};
};

}  // namespace voxplain::attr
