#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "voxplain/nn/params.hpp"

namespace voxplain::nn {

inline constexpr double kMinProbability = 1e-12;

/// -log p(label), with the probability clamped away from zero.
inline double cross_entropy(std::span<const double> probs, Label label) {
  const double p = probs[static_cast<std::size_t>(label)];
  return -std::log(std::max(p, kMinProbability));
}

namespace detail {

inline void require_finite_grads(const ParamStore& grads) {
  if (!grads.all_finite()) throw DataError("optimizer received non-finite gradients");
}

inline void require_matching(const ParamStore& a, const ParamStore& b) {
  if (a.layers.size() != b.layers.size()) throw std::invalid_argument("optimizer: parameter/gradient layer mismatch");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    for (ParamField f : kAllFields) {
      if (is_trainable(f) && field(a.layers[i], f).size() != field(b.layers[i], f).size()) {
        throw std::invalid_argument("optimizer: parameter/gradient shape mismatch");
      }
    }
  }
}

// Trainable arrays of the same shape as params, zero-filled.
inline ParamStore zeros_like(const ParamStore& params) {
  ParamStore z;
  z.layers.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    for (ParamField f : kAllFields) {
      if (is_trainable(f)) field(z.layers[i], f).assign(field(params.layers[i], f).size(), 0.0);
    }
  }
  return z;
}

}  // namespace detail

struct AdamState {
  ParamStore m;
  ParamStore v;
  std::uint64_t step = 0;
};

struct AdamOptions {
  double lr = 0.000027;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update applied in place to the trainable arrays.
inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state,
                      const AdamOptions& opt = {}) {
  detail::require_matching(params, grads);
  detail::require_finite_grads(grads);
  if (state.m.layers.empty()) {
    state.m = detail::zeros_like(params);
    state.v = detail::zeros_like(params);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    for (ParamField f : kAllFields) {
      if (!is_trainable(f)) continue;
      auto& w = field(params.layers[i], f);
      const auto& g = field(grads.layers[i], f);
      auto& m = field(state.m.layers[i], f);
      auto& v = field(state.v.layers[i], f);
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
        v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
      }
    }
  }
}

struct NesterovState {
  ParamStore velocity;
};

struct NesterovOptions {
  double lr = 0.001;
  double momentum = 0.9;
};

/// Point at which Nesterov gradients are evaluated: params + momentum * v.
inline ParamStore nesterov_lookahead(const ParamStore& params, const NesterovState& state,
                                     double momentum = 0.9) {
  ParamStore out = params;
  if (state.velocity.layers.empty()) return out;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    for (ParamField f : kAllFields) {
      if (!is_trainable(f)) continue;
      auto& w = field(out.layers[i], f);
      const auto& v = field(state.velocity.layers[i], f);
      for (std::size_t k = 0; k < w.size(); ++k) w[k] += momentum * v[k];
    }
  }
  return out;
}

/// v <- momentum * v - lr * g(lookahead); params <- params + v.
inline void nesterov_step(ParamStore& params, const ParamStore& grads_at_lookahead,
                          NesterovState& state, const NesterovOptions& opt = {}) {
  detail::require_matching(params, grads_at_lookahead);
  detail::require_finite_grads(grads_at_lookahead);
  if (state.velocity.layers.empty()) state.velocity = detail::zeros_like(params);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    for (ParamField f : kAllFields) {
      if (!is_trainable(f)) continue;
      auto& w = field(params.layers[i], f);
      const auto& g = field(grads_at_lookahead.layers[i], f);
      auto& v = field(state.velocity.layers[i], f);
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = opt.momentum * v[k] - opt.lr * g[k];
        w[k] += v[k];
      }
    }
  }
}

}  // namespace voxplain::nn
