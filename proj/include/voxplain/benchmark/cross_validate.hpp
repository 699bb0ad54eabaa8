#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iterator>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxplain/benchmark/metrics.hpp"
#include "voxplain/core/dataset.hpp"
#include "voxplain/core/parallel.hpp"
#include "voxplain/nn/train.hpp"

namespace voxplain::bench {

struct CVRound {
  int split = 0;
  int fold = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<Label> test_labels;
  std::vector<double> test_probs;  // P(AD) per test sample
  double auc = 0.0;
  double acc = 0.0;
};

struct CVReport {
  std::string model_title;
  std::vector<CVRound> rounds;
  MeanStd auc;
  MeanStd acc;

  /// One row in the layout "<model>  <auc mean>±<std>  <acc mean>±<std>".
  std::string table_row() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %.3f±%.3f  %.3f±%.3f", auc.mean, auc.std, acc.mean, acc.std);
    return model_title + buf;
  }
};

struct CVOptions {
  int splits = 5;
  int folds = 5;
  std::uint64_t seed = 0;
  unsigned workers = worker_count();
};

/// Stratified fold index per working sample for one split: each class is
/// shuffled separately and dealt round-robin over the folds.
inline std::vector<int> assign_folds(const LabeledDataset& ds, const std::vector<std::size_t>& working, int folds,
                                     std::uint64_t seed) {
  std::vector<std::size_t> ad, nc;
  for (std::size_t k = 0; k < working.size(); ++k) {
    (ds.samples[working[k]].label == Label::AD ? ad : nc).push_back(k);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ad.begin(), ad.end(), rng);
  std::shuffle(nc.begin(), nc.end(), rng);
  std::vector<int> fold(working.size(), 0);
  for (std::size_t i = 0; i < ad.size(); ++i) fold[ad[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  // Continue NC where AD stopped so fold sizes stay balanced overall.
  for (std::size_t i = 0; i < nc.size(); ++i) {
    fold[nc[i]] = static_cast<int>((ad.size() + i) % static_cast<std::size_t>(folds));
  }
  return fold;
}

/// Repeated stratified k-fold evaluation. Set-aside samples take no part.
/// Round r = split * folds + fold trains with seed cfg.seed + r.
inline CVReport cross_validate(const LabeledDataset& ds, const std::function<nn::ModelGraph()>& builder,
                               const nn::TrainConfig& cfg, const CVOptions& opt = {},
                               std::string model_title = {}) {
  if (opt.splits < 1) throw std::invalid_argument("cross_validate: splits must be >= 1");
  if (opt.folds < 2) throw std::invalid_argument("cross_validate: folds must be >= 2");
  cfg.validate();
  const auto working = ds.working_indices();
  const std::size_t folds = static_cast<std::size_t>(opt.folds);
  if (ds.count(Label::AD) < folds || ds.count(Label::NC) < folds) {
    throw DataError("cross_validate: fold too small for both classes (need >= " + std::to_string(folds) +
                    " working samples per class)");
  }

  const nn::ModelGraph graph = builder();
  if (model_title.empty()) model_title = graph.architecture();

  std::vector<std::vector<int>> fold_of;
  for (int s = 0; s < opt.splits; ++s) {
    fold_of.push_back(assign_folds(ds, working, opt.folds, opt.seed + 0x51ed270b * static_cast<std::uint64_t>(s + 1)));
  }

  const std::size_t n_rounds = static_cast<std::size_t>(opt.splits) * folds;
  std::vector<CVRound> rounds(n_rounds);
  parallel_for(
      n_rounds,
      [&](std::size_t r) {
        CVRound& round = rounds[r];
        round.split = static_cast<int>(r / folds);
        round.fold = static_cast<int>(r % folds);
        const auto& fold = fold_of[static_cast<std::size_t>(round.split)];
        std::vector<const Sample*> train_set;
        std::vector<const Volume*> test_vols;
        for (std::size_t k = 0; k < working.size(); ++k) {
          const Sample& s = ds.samples[working[k]];
          if (fold[k] == round.fold) {
            round.test_ids.push_back(s.id);
            round.test_labels.push_back(s.label);
            test_vols.push_back(&s.volume);
          } else {
            round.train_ids.push_back(s.id);
            train_set.push_back(&s);
          }
        }
        nn::TrainConfig round_cfg = cfg;
        round_cfg.seed = cfg.seed + r;
        const auto trained = nn::train(graph, train_set, round_cfg);
        round.test_probs = nn::predict(graph, trained.params, test_vols, Label::AD);
        round.auc = roc_auc(round.test_probs, round.test_labels);
        round.acc = accuracy(round.test_probs, round.test_labels);
      },
      opt.workers);

  CVReport report;
  report.model_title = std::move(model_title);
  std::vector<double> aucs, accs;
  for (const auto& r : rounds) {
    aucs.push_back(r.auc);
    accs.push_back(r.acc);
  }
  report.auc = mean_std(aucs);
  report.acc = mean_std(accs);
  report.rounds = std::move(rounds);
  return report;
}

/// True when no round shares an id between its train and test lists and no
/// set-aside id appears anywhere.
inline bool leak_free(const CVReport& report, const LabeledDataset& ds) {
  std::vector<std::string> aside;
  for (std::size_t i : ds.set_aside_indices()) aside.push_back(ds.samples[i].id);
  std::sort(aside.begin(), aside.end());
  for (const auto& r : report.rounds) {
    std::vector<std::string> train = r.train_ids;
    std::vector<std::string> test = r.test_ids;
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    std::vector<std::string> common;
    std::set_intersection(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(common));
    if (!common.empty()) return false;
    for (const auto* ids : {&train, &test}) {
      for (const auto& id : *ids) {
        if (std::binary_search(aside.begin(), aside.end(), id)) return false;
      }
    }
  }
  return true;
}

}  // namespace voxplain::bench
