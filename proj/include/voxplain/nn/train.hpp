#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxplain/core/dataset.hpp"
#include "voxplain/nn/builders.hpp"
#include "voxplain/nn/engine.hpp"
#include "voxplain/nn/optim.hpp"

namespace voxplain::nn {

enum class Optimizer { adam, nesterov_sgd };

inline std::string_view optimizer_name(Optimizer o) { return o == Optimizer::adam ? "adam" : "nesterov-sgd"; }

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "nesterov-sgd" || s == "nesterov") return Optimizer::nesterov_sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double lr = 0.000027;
  int batch_size = 5;
  int epochs = 150;
  std::uint64_t seed = 0;
  bool balanced_batches = true;
  double momentum = 0.9;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (balanced_batches && batch_size < 2) {
      throw std::invalid_argument("class-balanced batching needs batch size >= 2");
    }
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  }
};

/// Optimizer settings used for each architecture family: Adam for VGG,
/// Nesterov SGD for the ResNets.
inline TrainConfig default_train_config(Architecture a) {
  TrainConfig c;
  if (a == Architecture::vgg3d) {
    c.optimizer = Optimizer::adam;
    c.lr = 0.000027;
    c.batch_size = 5;
  } else {
    c.optimizer = Optimizer::nesterov_sgd;
    c.lr = 0.001;
    c.batch_size = 3;
  }
  c.epochs = 150;
  return c;
}

/// Splits sample positions [0, labels.size()) into batches for one epoch.
/// With balancing on, every batch holds at least one sample of each class;
/// the minority class is cycled when it has fewer samples than batches.
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const Label> labels,
                                                          const TrainConfig& cfg,
                                                          std::mt19937_64& rng) {
  const std::size_t n = labels.size();
  std::vector<std::vector<std::size_t>> batches;
  if (n == 0) return batches;
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t nb = (n + B - 1) / B;
  if (!cfg.balanced_batches) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < nb; ++b) {
      batches.emplace_back(order.begin() + b * B, order.begin() + std::min(n, (b + 1) * B));
    }
    return batches;
  }
  std::vector<std::size_t> ad, nc;
  for (std::size_t i = 0; i < n; ++i) (labels[i] == Label::AD ? ad : nc).push_back(i);
  if (ad.empty() || nc.empty()) {
    throw DataError("class-balanced batching impossible: training data holds a single class");
  }
  std::shuffle(ad.begin(), ad.end(), rng);
  std::shuffle(nc.begin(), nc.end(), rng);
  batches.resize(nb);
  std::vector<bool> used(n, false);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t a = ad[b % ad.size()];
    const std::size_t c = nc[b % nc.size()];
    batches[b] = {a, c};
    used[a] = used[c] = true;
  }
  std::vector<std::size_t> rest;
  for (std::size_t i : ad) if (!used[i]) rest.push_back(i);
  for (std::size_t i : nc) if (!used[i]) rest.push_back(i);
  std::shuffle(rest.begin(), rest.end(), rng);
  std::size_t b = 0;
  for (std::size_t i : rest) {
    // Fill batches up to B; overflow wraps round-robin.
    std::size_t tries = 0;
    while (batches[b].size() >= B && tries < nb) {
      b = (b + 1) % nb;
      ++tries;
    }
    batches[b].push_back(i);
    b = (b + 1) % nb;
  }
  return batches;
}

struct TrainResult {
  ParamStore params;
  std::vector<double> loss_history;  // mean training loss per epoch
};

/// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(int, double)>;

/// Mini-batch training with cross-entropy loss. Deterministic for a fixed
/// seed: batch order, dropout masks and initialization all derive from it.
inline TrainResult train(const ModelGraph& g, std::span<const Sample* const> data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  std::vector<Label> labels;
  labels.reserve(data.size());
  for (const Sample* s : data) labels.push_back(s->label);

  TrainResult result;
  result.params = init_params(g, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam;
  NesterovState nesterov;
  ParamStore& params = result.params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(labels, cfg, rng);
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (const auto& batch : batches) {
      std::vector<const Volume*> vols;
      vols.reserve(batch.size());
      for (std::size_t i : batch) vols.push_back(&data[i]->volume);

      const bool use_nesterov = cfg.optimizer == Optimizer::nesterov_sgd;
      ParamStore look = use_nesterov ? nesterov_lookahead(params, nesterov, cfg.momentum) : ParamStore{};
      const ParamStore& eval_at = use_nesterov ? look : params;
      const ActivationCache cache = forward(g, eval_at, vols, Mode::train, &rng);

      const int nb = static_cast<int>(batch.size());
      std::vector<double> dlogits(static_cast<std::size_t>(nb) * kClassCount);
      for (int n = 0; n < nb; ++n) {
        const double* p = cache.outputs.back().sample(n);
        const Label y = labels[batch[static_cast<std::size_t>(n)]];
        loss_sum += cross_entropy(std::span<const double>(p, kClassCount), y);
        for (int c = 0; c < kClassCount; ++c) {
          dlogits[static_cast<std::size_t>(n) * kClassCount + c] =
              (p[c] - (c == static_cast<int>(y) ? 1.0 : 0.0)) / nb;
        }
      }
      count += batch.size();
      const Gradients grads = backward(g, eval_at, cache, dlogits);
      update_running_stats(g, params, cache);
      if (use_nesterov) {
        nesterov_step(params, grads.params, nesterov, {.lr = cfg.lr, .momentum = cfg.momentum});
      } else {
        adam_step(params, grads.params, adam, {.lr = cfg.lr});
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(count);
    result.loss_history.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return result;
}

inline TrainResult train(const ModelGraph& g, const LabeledDataset& ds, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  std::vector<const Sample*> data;
  for (const auto& s : ds.samples) {
    if (!s.set_aside) data.push_back(&s);
  }
  return train(g, data, cfg, on_epoch);
}

/// Eval-mode probability of `target` for each volume.
inline std::vector<double> predict(const ModelGraph& g, const ParamStore& p,
                                   std::span<const Volume* const> volumes, Label target = Label::AD) {
  std::vector<double> out;
  out.reserve(volumes.size());
  for (const Volume* v : volumes) out.push_back(forward(g, p, *v).probability(target));
  return out;
}

}  // namespace voxplain::nn
