#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ninv/data.hpp"
#include "ninv/models.hpp"
#include "ninv/optim.hpp"
#include "ninv/rng.hpp"

namespace ninv {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  OptimConfig optim{};
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0;            // mean weighted CE over the epoch's batches
  double train_accuracy = 0;  // on the batches as seen during the epoch
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch training with weighted cross-entropy; batches are a fresh
/// permutation per epoch drawn from rng. Empty class_weights means unit
/// weights. The classifier must not be frozen.
std::vector<EpochStats> train_classifier(Classifier& clf, const Dataset& data, const TrainConfig& cfg,
                                         std::span<const double> class_weights, Rng& rng,
                                         const EpochCallback& on_epoch = {});

}  // namespace ninv
