#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "voxplain/core/grid.hpp"
#include "voxplain/nn/graph.hpp"
#include "voxplain/nn/kernels.hpp"
#include "voxplain/nn/params.hpp"

namespace voxplain::nn {

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Everything recorded by one forward pass over a batch.
struct ActivationCache {
  Mode mode = Mode::eval;
  Tensor input;
  std::vector<Tensor> outputs;  // per layer; the softmax layer holds probabilities
  std::vector<double> logits;   // [batch][class], including output bias
  std::vector<double> scores;   // [batch][class], output bias excluded

  // Per-layer bookkeeping for the backward pass.
  std::vector<std::vector<double>> bn_mean;
  std::vector<std::vector<double>> bn_invstd;
  std::vector<std::vector<double>> bn_batch_var;  // unbiased, train mode only
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<std::vector<double>> dropout_mask;

  int batch() const noexcept { return input.batch; }
  double probability(Label c, int n = 0) const {
    return outputs.back().sample(n)[static_cast<int>(c)];
  }
  double logit(Label c, int n = 0) const { return logits[static_cast<std::size_t>(n) * kClassCount + static_cast<int>(c)]; }
  /// Pre-softmax class score without the output bias.
  double score(Label c, int n = 0) const { return scores[static_cast<std::size_t>(n) * kClassCount + static_cast<int>(c)]; }
  const Tensor& activation(std::size_t layer) const { return outputs.at(layer); }
  /// Voxel count Z of a layer's spatial grid.
  std::size_t grid_voxels(std::size_t layer) const { return outputs.at(layer).shape.spatial(); }

  friend bool operator==(const ActivationCache&, const ActivationCache&) = default;
};

/// Gradient of a class score with respect to one layer's activations.
struct GradCache {
  std::string layer;
  Label target = Label::AD;
  Tensor grad;  // batch of one
};

namespace detail {

inline void check_finite(const Tensor& t, const LayerSpec& l) {
  for (double v : t.data) {
    if (!std::isfinite(v)) throw DataError("non-finite activation in layer '" + l.name + "'");
  }
}

inline kernels::ConvGeometry conv_geometry(const ModelGraph& g, std::size_t i) {
  const auto& l = g.layer(i);
  return {g.shape(g.inputs_of(i)[0]).dims, g.shape(static_cast<int>(i)).dims, l.kernel, l.stride, l.padding};
}

}  // namespace detail

/// Substitute output for one layer; downstream layers consume it instead
/// of the computed value. Used to probe the network around a given state.
struct NodeOverride {
  std::size_t layer = 0;
  const Tensor* value = nullptr;
};

/// Runs the model over a batch of single-channel volumes. Train mode uses
/// batch statistics in batch norm and samples dropout masks from rng.
inline ActivationCache forward(const ModelGraph& g, const ParamStore& p,
                               std::span<const Volume* const> batch, Mode mode,
                               std::mt19937_64* rng = nullptr, const NodeOverride* replace = nullptr) {
  check_params(g, p);
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  if (g.input_channels() != 1) throw std::invalid_argument("forward: volumes are single-channel");
  const int nb = static_cast<int>(batch.size());
  ActivationCache cache;
  cache.mode = mode;
  cache.input = Tensor(nb, g.input_shape());
  for (int n = 0; n < nb; ++n) {
    const Volume& v = *batch[static_cast<std::size_t>(n)];
    if (!(v.dims() == g.input_dims())) {
      throw DataError("volume dims " + v.dims().str() + " do not match model input " + g.input_dims().str());
    }
    require_finite(v);
    std::copy(v.begin(), v.end(), cache.input.sample(n));
  }
  const std::size_t L = g.size();
  cache.outputs.resize(L);
  cache.bn_mean.resize(L);
  cache.bn_invstd.resize(L);
  cache.bn_batch_var.resize(L);
  cache.pool_argmax.resize(L);
  cache.dropout_mask.resize(L);

  for (std::size_t i = 0; i < L; ++i) {
    const auto& l = g.layer(i);
    const auto& lp = p[i];
    const auto& ins = g.inputs_of(i);
    const Tensor& x = ins[0] < 0 ? cache.input : cache.outputs[static_cast<std::size_t>(ins[0])];
    const Shape in_shape = x.shape;
    Tensor y(nb, g.shape(static_cast<int>(i)));
    switch (l.kind) {
      case LayerKind::conv3d: {
        const auto geom = detail::conv_geometry(g, i);
        for (int n = 0; n < nb; ++n) {
          kernels::conv3d_forward(geom, in_shape.channels, l.out_channels, x.sample(n), lp.weight.data(),
                                  lp.bias.data(), y.sample(n));
        }
        break;
      }
      case LayerKind::maxpool3d: {
        auto& am = cache.pool_argmax[i];
        am.resize(y.data.size());
        const std::size_t osp = y.shape.spatial();
        for (int n = 0; n < nb; ++n) {
          for (int c = 0; c < in_shape.channels; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * in_shape.channels + c) * osp;
            kernels::maxpool3d_forward(in_shape.dims, y.shape.dims, l.kernel, l.stride, x.channel(n, c),
                                       y.channel(n, c), am.data() + off);
          }
        }
        break;
      }
      case LayerKind::batchnorm: {
        const int C = in_shape.channels;
        const std::size_t sp = in_shape.spatial();
        auto& mean = cache.bn_mean[i];
        auto& invstd = cache.bn_invstd[i];
        mean.assign(C, 0.0);
        invstd.assign(C, 0.0);
        if (mode == Mode::train) {
          auto& bvar = cache.bn_batch_var[i];
          bvar.assign(C, 0.0);
          const double M = static_cast<double>(nb) * static_cast<double>(sp);
          for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < nb; ++n) {
              const double* xc = x.channel(n, c);
              for (std::size_t k = 0; k < sp; ++k) s += xc[k];
            }
            const double mu = s / M;
            double ss = 0.0;
            for (int n = 0; n < nb; ++n) {
              const double* xc = x.channel(n, c);
              for (std::size_t k = 0; k < sp; ++k) ss += (xc[k] - mu) * (xc[k] - mu);
            }
            mean[c] = mu;
            invstd[c] = 1.0 / std::sqrt(ss / M + kBatchNormEps);
            bvar[c] = M > 1.0 ? ss / (M - 1.0) : 0.0;
          }
        } else {
          for (int c = 0; c < C; ++c) {
            mean[c] = lp.running_mean[c];
            invstd[c] = 1.0 / std::sqrt(lp.running_var[c] + kBatchNormEps);
          }
        }
        for (int n = 0; n < nb; ++n) {
          for (int c = 0; c < C; ++c) {
            const double* xc = x.channel(n, c);
            double* yc = y.channel(n, c);
            const double a = lp.gamma[c] * invstd[c];
            const double b = lp.beta[c] - a * mean[c];
            for (std::size_t k = 0; k < sp; ++k) yc[k] = a * xc[k] + b;
          }
        }
        break;
      }
      case LayerKind::relu:
        for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] = x.data[k] > 0.0 ? x.data[k] : 0.0;
        break;
      case LayerKind::residual_add: {
        const Tensor& x2 = ins[1] < 0 ? cache.input : cache.outputs[static_cast<std::size_t>(ins[1])];
        for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] = x.data[k] + x2.data[k];
        break;
      }
      case LayerKind::dropout: {
        if (mode == Mode::train && l.dropout_rate > 0.0) {
          if (!rng) throw std::invalid_argument("train-mode dropout needs a random generator");
          auto& mask = cache.dropout_mask[i];
          mask.resize(y.data.size());
          const double keep = 1.0 - l.dropout_rate;
          std::bernoulli_distribution coin(keep);
          for (std::size_t k = 0; k < y.data.size(); ++k) {
            mask[k] = coin(*rng) ? 1.0 / keep : 0.0;
            y.data[k] = x.data[k] * mask[k];
          }
        } else {
          y.data = x.data;
        }
        break;
      }
      case LayerKind::fully_connected:
      case LayerKind::softmax: {
        const std::size_t fin = in_shape.count();
        const int fout = l.out_channels;
        for (int n = 0; n < nb; ++n) {
          const double* xs = x.sample(n);
          double* ys = y.sample(n);
          for (int o = 0; o < fout; ++o) {
            const double* w = lp.weight.data() + static_cast<std::size_t>(o) * fin;
            double s = 0.0;
            for (std::size_t k = 0; k < fin; ++k) s += w[k] * xs[k];
            ys[o] = s;
          }
        }
        if (l.kind == LayerKind::softmax) {
          cache.logits.assign(static_cast<std::size_t>(nb) * kClassCount, 0.0);
          cache.scores.assign(static_cast<std::size_t>(nb) * kClassCount, 0.0);
          for (int n = 0; n < nb; ++n) {
            double* ys = y.sample(n);
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < kClassCount; ++c) {
              cache.scores[static_cast<std::size_t>(n) * kClassCount + c] = ys[c];
              ys[c] += lp.bias[c];
              cache.logits[static_cast<std::size_t>(n) * kClassCount + c] = ys[c];
              mx = std::max(mx, ys[c]);
            }
            double z = 0.0;
            for (int c = 0; c < kClassCount; ++c) z += std::exp(ys[c] - mx);
            for (int c = 0; c < kClassCount; ++c) ys[c] = std::exp(ys[c] - mx) / z;
          }
        } else {
          for (int n = 0; n < nb; ++n) {
            double* ys = y.sample(n);
            for (int o = 0; o < fout; ++o) ys[o] += lp.bias[o];
          }
        }
        break;
      }
      case LayerKind::global_average_pool: {
        const std::size_t sp = in_shape.spatial();
        for (int n = 0; n < nb; ++n) {
          for (int c = 0; c < in_shape.channels; ++c) {
            const double* xc = x.channel(n, c);
            double s = 0.0;
            for (std::size_t k = 0; k < sp; ++k) s += xc[k];
            y.sample(n)[c] = s / static_cast<double>(sp);
          }
        }
        break;
      }
    }
    if (replace && replace->layer == i) {
      if (l.kind == LayerKind::softmax) throw std::invalid_argument("forward: the output layer cannot be overridden");
      if (!(replace->value->shape == y.shape) || replace->value->batch != nb) {
        throw std::invalid_argument("forward: override for '" + l.name + "' has the wrong shape");
      }
      y.data = replace->value->data;
    }
    detail::check_finite(y, l);
    cache.outputs[i] = std::move(y);
  }
  return cache;
}

inline ActivationCache forward(const ModelGraph& g, const ParamStore& p, const Volume& v,
                               Mode mode = Mode::eval, std::mt19937_64* rng = nullptr) {
  const Volume* one[] = {&v};
  return forward(g, p, one, mode, rng);
}

/// Folds the batch statistics of a train-mode pass into the running
/// estimates: running = (1 - momentum) * running + momentum * batch.
inline void update_running_stats(const ModelGraph& g, ParamStore& p, const ActivationCache& cache,
                                 double momentum = kBatchNormMomentum) {
  if (cache.mode != Mode::train) return;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.layer(i).kind != LayerKind::batchnorm) continue;
    auto& lp = p[i];
    for (std::size_t c = 0; c < lp.running_mean.size(); ++c) {
      lp.running_mean[c] = (1.0 - momentum) * lp.running_mean[c] + momentum * cache.bn_mean[i][c];
      lp.running_var[c] = (1.0 - momentum) * lp.running_var[c] + momentum * cache.bn_batch_var[i][c];
    }
  }
}

struct BackwardOptions {
  bool param_grads = true;
  /// When set, activation gradients are only propagated down to this layer.
  std::optional<std::size_t> stop_at;
};

struct Gradients {
  ParamStore params;           // zero-shaped like the model when param_grads is off
  std::vector<Tensor> nodes;   // d(objective)/d(layer output); empty where not computed
};

/// Reverse-mode pass from a gradient on the logits ([batch][class]).
inline Gradients backward(const ModelGraph& g, const ParamStore& p, const ActivationCache& cache,
                          std::span<const double> dlogits, const BackwardOptions& opts = {}) {
  const int nb = cache.batch();
  if (dlogits.size() != static_cast<std::size_t>(nb) * kClassCount) {
    throw std::invalid_argument("backward: dlogits must hold batch x classes values");
  }
  const std::size_t L = g.size();
  const std::size_t stop = opts.stop_at.value_or(0);
  Gradients out;
  if (opts.param_grads) out.params = zero_params(g);
  out.nodes.resize(L);

  auto need_dx = [&](int j) { return j >= 0 && static_cast<std::size_t>(j) >= stop; };
  auto grad_of = [&](int j) -> Tensor& {
    auto& t = out.nodes[static_cast<std::size_t>(j)];
    if (t.empty()) t = Tensor(nb, g.shape(j));
    return t;
  };

  Tensor dout(nb, g.shape(static_cast<int>(L - 1)));
  std::copy(dlogits.begin(), dlogits.end(), dout.data.begin());
  out.nodes[L - 1] = std::move(dout);

  for (std::size_t i = L; i-- > 0;) {
    if (i < stop) break;
    if (!opts.param_grads && i == stop) break;
    const Tensor& dy = out.nodes[i];
    if (dy.empty()) continue;
    const auto& l = g.layer(i);
    const auto& lp = p[i];
    LayerParams* gp = opts.param_grads ? &out.params[i] : nullptr;
    const auto& ins = g.inputs_of(i);
    const int j = ins[0];
    const Tensor& x = j < 0 ? cache.input : cache.outputs[static_cast<std::size_t>(j)];
    const Tensor& y = cache.outputs[i];
    const bool want_dx = need_dx(j);
    switch (l.kind) {
      case LayerKind::conv3d: {
        if (!want_dx && !gp) break;
        const auto geom = detail::conv_geometry(g, i);
        Tensor* dx = want_dx ? &grad_of(j) : nullptr;
        for (int n = 0; n < nb; ++n) {
          kernels::conv3d_backward(geom, x.shape.channels, l.out_channels, x.sample(n), lp.weight.data(),
                                   dy.sample(n), dx ? dx->sample(n) : nullptr,
                                   gp ? gp->weight.data() : nullptr, gp ? gp->bias.data() : nullptr);
        }
        break;
      }
      case LayerKind::maxpool3d: {
        if (!want_dx) break;
        Tensor& dx = grad_of(j);
        const auto& am = cache.pool_argmax[i];
        const std::size_t osp = y.shape.spatial();
        for (int n = 0; n < nb; ++n) {
          for (int c = 0; c < y.shape.channels; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * y.shape.channels + c) * osp;
            double* dxc = dx.channel(n, c);
            const double* dyc = dy.channel(n, c);
            for (std::size_t k = 0; k < osp; ++k) dxc[am[off + k]] += dyc[k];
          }
        }
        break;
      }
      case LayerKind::batchnorm: {
        const int C = x.shape.channels;
        const std::size_t sp = x.shape.spatial();
        const auto& mean = cache.bn_mean[i];
        const auto& invstd = cache.bn_invstd[i];
        Tensor* dx = want_dx ? &grad_of(j) : nullptr;
        const double M = static_cast<double>(nb) * static_cast<double>(sp);
        for (int c = 0; c < C; ++c) {
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (int n = 0; n < nb; ++n) {
            const double* xc = x.channel(n, c);
            const double* dyc = dy.channel(n, c);
            for (std::size_t k = 0; k < sp; ++k) {
              sum_dy += dyc[k];
              sum_dy_xhat += dyc[k] * (xc[k] - mean[c]) * invstd[c];
            }
          }
          if (gp) {
            gp->gamma[c] += sum_dy_xhat;
            gp->beta[c] += sum_dy;
          }
          if (!dx) continue;
          const double a = lp.gamma[c] * invstd[c];
          for (int n = 0; n < nb; ++n) {
            const double* xc = x.channel(n, c);
            const double* dyc = dy.channel(n, c);
            double* dxc = dx->channel(n, c);
            if (cache.mode == Mode::train) {
              for (std::size_t k = 0; k < sp; ++k) {
                const double xhat = (xc[k] - mean[c]) * invstd[c];
                dxc[k] += a / M * (M * dyc[k] - sum_dy - xhat * sum_dy_xhat);
              }
            } else {
              for (std::size_t k = 0; k < sp; ++k) dxc[k] += a * dyc[k];
            }
          }
        }
        break;
      }
      case LayerKind::relu: {
        if (!want_dx) break;
        Tensor& dx = grad_of(j);
        for (std::size_t k = 0; k < dy.data.size(); ++k) {
          if (y.data[k] > 0.0) dx.data[k] += dy.data[k];
        }
        break;
      }
      case LayerKind::residual_add: {
        for (int src : ins) {
          if (!need_dx(src)) continue;
          Tensor& dx = grad_of(src);
          for (std::size_t k = 0; k < dy.data.size(); ++k) dx.data[k] += dy.data[k];
        }
        break;
      }
      case LayerKind::dropout: {
        if (!want_dx) break;
        Tensor& dx = grad_of(j);
        const auto& mask = cache.dropout_mask[i];
        for (std::size_t k = 0; k < dy.data.size(); ++k) {
          dx.data[k] += mask.empty() ? dy.data[k] : dy.data[k] * mask[k];
        }
        break;
      }
      case LayerKind::fully_connected:
      case LayerKind::softmax: {
        const std::size_t fin = x.shape.count();
        const int fout = l.out_channels;
        Tensor* dx = want_dx ? &grad_of(j) : nullptr;
        for (int n = 0; n < nb; ++n) {
          const double* xs = x.sample(n);
          const double* dys = dy.sample(n);
          for (int o = 0; o < fout; ++o) {
            const double d = dys[o];
            if (gp) {
              double* gw = gp->weight.data() + static_cast<std::size_t>(o) * fin;
              for (std::size_t k = 0; k < fin; ++k) gw[k] += d * xs[k];
              gp->bias[o] += d;
            }
            if (dx) {
              const double* w = lp.weight.data() + static_cast<std::size_t>(o) * fin;
              double* dxs = dx->sample(n);
              for (std::size_t k = 0; k < fin; ++k) dxs[k] += d * w[k];
            }
          }
        }
        break;
      }
      case LayerKind::global_average_pool: {
        if (!want_dx) break;
        Tensor& dx = grad_of(j);
        const std::size_t sp = x.shape.spatial();
        const double inv = 1.0 / static_cast<double>(sp);
        for (int n = 0; n < nb; ++n) {
          for (int c = 0; c < x.shape.channels; ++c) {
            const double d = dy.sample(n)[c] * inv;
            double* dxc = dx.channel(n, c);
            for (std::size_t k = 0; k < sp; ++k) dxc[k] += d;
          }
        }
        break;
      }
    }
  }
  return out;
}

/// Gradient of the pre-softmax score of `target` with respect to the
/// activations of `layer` ("last-conv" accepted), for an eval-mode cache of
/// one volume.
inline GradCache backward_score_to_layer(const ModelGraph& g, const ParamStore& p,
                                         const ActivationCache& cache, Label target,
                                         std::string_view layer) {
  if (cache.mode != Mode::eval) throw std::invalid_argument("backward_score_to_layer needs an eval-mode cache");
  if (cache.batch() != 1) throw std::invalid_argument("backward_score_to_layer expects a single-volume cache");
  const std::size_t idx = g.resolve_layer(layer);
  if (!g.is_spatial_output(idx) || !g.reaches_output(idx)) {
    throw std::invalid_argument("layer '" + g.layer(idx).name +
                                "' is not a convolutional node on the path to the output");
  }
  std::vector<double> seed(kClassCount, 0.0);
  seed[static_cast<int>(target)] = 1.0;
  auto grads = backward(g, p, cache, seed, {.param_grads = false, .stop_at = idx});
  GradCache out;
  out.layer = g.layer(idx).name;
  out.target = target;
  out.grad = std::move(grads.nodes[idx]);
  if (out.grad.empty()) out.grad = Tensor(1, g.shape(static_cast<int>(idx)));
  return out;
}

}  // namespace voxplain::nn
