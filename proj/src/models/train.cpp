#include "ninv/train.hpp"

#include <algorithm>
#include <numeric>

#include "ninv/autodiff.hpp"
#include "ninv/losses.hpp"

namespace ninv {

std::vector<EpochStats> train_classifier(Classifier& clf, const Dataset& data, const TrainConfig& cfg,
                                         std::span<const double> class_weights, Rng& rng,
                                         const EpochCallback& on_epoch) {
  if (clf.frozen()) throw ContractError("cannot train a frozen classifier");
  if (cfg.batch_size == 0) throw DomainError("batch size must be positive");
  if (data.classes > clf.spec().classes) throw DimensionError("dataset has more classes than the classifier");
  std::vector<double> weights(class_weights.begin(), class_weights.end());
  if (weights.empty()) weights.assign(clf.spec().classes, 1.0);

  auto params = clf.parameters();
  auto state = make_optim_state(cfg.optim, params);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochStats> history;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0;
    std::size_t batches = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const auto labels = data.batch_labels(idx);
      std::vector<Tensor> grads;
      {
        Tape tape;
        auto out = clf.forward(data.batch(idx));
        auto loss = weighted_ce_loss(out.logits, labels, weights);
        grads = tape.gradients(loss, params);
        loss_sum += loss.item();
        const auto pred = argmax_rows(out.logits);
        for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
      }
      optim_step(params, grads, state);
      ++batches;
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(batches),
                     static_cast<double>(correct) / static_cast<double>(data.size())};
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

}  // namespace ninv
