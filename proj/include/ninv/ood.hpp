#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ninv/csv.hpp"
#include "ninv/data.hpp"
#include "ninv/inversion.hpp"
#include "ninv/models.hpp"
#include "ninv/train.hpp"

namespace ninv {

/// Images of the extra "garbage" class. The initial noise block is never
/// evicted; inverted images live in a ring that drops the oldest first once
/// size() would exceed capacity.
class GarbageSet {
 public:
  GarbageSet(ImageShape shape, std::size_t label, std::size_t capacity);

  std::size_t size() const { return cycles_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t label() const { return label_; }
  const ImageShape& shape() const { return shape_; }
  std::size_t noise_count() const { return noise_count_; }

  // "noise" or "inverted@cycle_<k>".
  std::string provenance(std::size_t i) const;
  // 0 for noise, the producing cycle otherwise.
  std::size_t cycle(std::size_t i) const { return cycles_.at(i); }

  void add_noise(const Tensor& images);
  void add_inverted(const Tensor& images, std::size_t cycle);

  Tensor images() const;
  Dataset as_dataset(std::size_t classes) const;

 private:
  void append(const Tensor& images, std::size_t cycle);

  ImageShape shape_;
  std::size_t label_;
  std::size_t capacity_;
  std::size_t noise_count_ = 0;
  std::vector<float> pixels_;
  std::vector<std::size_t> cycles_;
};

/// count images of N(0.5, 0.25^2) pixel noise clamped to [0, 1].
GarbageSet init_garbage(std::size_t count, const ImageShape& shape, std::size_t label, std::size_t capacity, Rng& rng);

/// Inverse-frequency weights normalized to mean 1.
std::vector<double> class_weights(std::span<const std::size_t> counts);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> p);

/// Sum over i of (delta_ik - 1/m)^2 with m = p.size(): distance of the
/// one-hot at k from uniform.
double ue_denominator(std::size_t m, std::size_t k);

/// 1 - |p - u|^2 / |e_k - u|^2 with u uniform and k = argmax p. 0 for a
/// one-hot p, 1 for uniform.
double uncertainty(std::span<const double> p);

struct Prediction {
  std::vector<double> p;
  std::size_t index = 0;
  bool is_ood = false;
  double confidence = 0;
  double ue = 0;
};

/// The last class is the garbage class.
Prediction predict_from_logits(std::span<const float> logits);
Prediction ood_predict(const Classifier& clf, const Tensor& image);
std::vector<Prediction> ood_predict_batch(const Classifier& clf, const Tensor& images);

struct ThresholdReport {
  std::size_t id_total = 0;
  std::size_t id_correct = 0;
  std::size_t ood_total = 0;
  std::size_t ood_misrouted = 0;  // OOD samples predicted as an in-distribution class
  std::optional<double> min_id_confidence;
  std::optional<double> max_ood_confidence;
  // min_id_confidence - max_ood_confidence; +inf with ood_max_absent when
  // every OOD sample went to garbage, -inf with id_min_absent when no ID
  // sample was classified correctly.
  double gap = std::numeric_limits<double>::infinity();
  bool ood_max_absent = true;
  bool id_min_absent = true;
  // Misrouted OOD samples at least as confident as the least confident
  // correct ID sample.
  std::size_t violations = 0;
};

ThresholdReport threshold_report(std::span<const Prediction> id_preds, std::span<const std::size_t> id_labels,
                                 std::span<const Prediction> ood_preds);
ThresholdReport threshold_report(const Classifier& clf, const Dataset& id_set, const Dataset& ood_set);

struct GridModel {
  std::string name;
  std::string trained_on;  // name of the dataset that is in-distribution
  const Classifier* model = nullptr;
};

struct AccuracyMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> values;
};

/// Diagonal-style cells (model's own dataset) hold ID accuracy; every other
/// cell holds the fraction routed to garbage. Cells run on up to `threads`
/// threads (0 = hardware concurrency).
AccuracyMatrix evaluate_grid(std::span<const GridModel> models, std::span<const Dataset> datasets,
                             std::size_t threads = 0);
void write_accuracy_matrix(const AccuracyMatrix& m, const std::filesystem::path& path);

/// Fraction of the set predicted as the garbage class.
double garbage_rate(const Classifier& clf, const Dataset& data);
/// In-distribution accuracy (labels must be below the garbage index).
double id_accuracy(const Classifier& clf, const Dataset& data);

struct CycleReport {
  std::size_t cycle = 0;
  double id_train_accuracy = 0;
  std::optional<double> id_test_accuracy;
  std::optional<double> inversion_accuracy;  // absent for the base cycle
  std::size_t garbage_size = 0;
  std::optional<double> mean_ue;  // of this cycle's inverted samples
  std::vector<double> class_weights;
  std::vector<double> probe_routing;  // garbage rate per probe set
  std::optional<ThresholdReport> threshold;  // ID test vs the first probe set
};

struct OodConfig {
  std::size_t cycles = 5;
  TrainConfig base_train{};   // first training on ID + noise
  TrainConfig cycle_train{10};  // retraining after each garbage update
  InversionConfig inversion = [] {
    InversionConfig c;
    c.steps = 500;
    c.eval_every = 0;
    return c;
  }();
  std::size_t noise_count = 0;     // 0 = one class's training count
  std::size_t budget = 0;          // inverted images per cycle, 0 = one class's count
  std::size_t capacity_factor = 4; // capacity = factor * ID train size
  bool sample_dropout = true;      // draw garbage samples in train mode
  std::size_t warmup_cycles = 1;   // cycles exempt from the divergence check

  void validate() const;
};

using GeneratorFactory = std::function<Generator(std::size_t cycle, Rng& rng)>;

struct OodProbes {
  const Dataset* id_test = nullptr;
  std::vector<Dataset> probes;
};

struct OodResult {
  GarbageSet garbage;
  std::vector<CycleReport> reports;
};

// inverted is null for the base cycle.
using CycleCallback = std::function<void(const CycleReport&, const Tensor* inverted)>;

/// Base training on ID + noise garbage (cycle 0), then per cycle: invert the
/// current classifier with a fresh generator over all n+1 labels, relabel a
/// budget of samples as garbage, retrain on ID + garbage with weighted CE,
/// report. Throws DivergenceError once ID train accuracy falls below
/// 1/(n+1) + 0.05 after the warmup cycles.
OodResult ood_training_cycle(Classifier& clf, const GeneratorFactory& gen_factory, const Dataset& id_train,
                             const OodConfig& cfg, Rng& rng, const OodProbes& probes = {},
                             const CycleCallback& on_cycle = {});

CsvSchema cycle_report_schema(std::span<const std::string> probe_names);
CsvRow cycle_report_row(const CycleReport& r);

}  // namespace ninv
