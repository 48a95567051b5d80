#pragma once

#include "ninv/data.hpp"
#include "ninv/models.hpp"
#include "ninv/train.hpp"

namespace ninv::testing {

struct TrainedFixture {
  Dataset train;
  Dataset test;
  Classifier clf;
};

// Default MLP trained for 20 epochs on 3-class 12x12 bars at noise 0.1.
inline TrainedFixture trained_bars_mlp(std::uint64_t seed, std::size_t n_train = 300) {
  auto [train, test] = synth_dataset(SynthSpec{SynthFamily::Bars, 3, {1, 12, 12}, 0.1, seed}, n_train, 300);
  Rng rng(Rng::derive(seed, "classifier"));
  Classifier clf(ClassifierSpec::mlp({1, 12, 12}, 3), rng);
  train_classifier(clf, train, TrainConfig{}, {}, rng);
  return {train, test, clf};
}

}  // namespace ninv::testing
