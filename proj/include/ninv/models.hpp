#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ninv/checkpoint.hpp"
#include "ninv/data.hpp"
#include "ninv/rng.hpp"
#include "ninv/tensor.hpp"

namespace ninv {

enum class ClassifierKind { Mlp, Cnn };

struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::Mlp;
  ImageShape input{1, 12, 12};
  // Affine hidden widths; for the CNN they follow the conv stack.
  std::vector<std::size_t> hidden{256, 128};
  // CNN only: conv filters per block (3x3 same-padded, leaky ReLU, 2x2 max-pool).
  std::vector<std::size_t> filters{8, 16};
  std::size_t kernel = 3;
  std::size_t classes = 3;
  double slope = 0.01;

  static ClassifierSpec mlp(ImageShape input, std::size_t classes);
  static ClassifierSpec cnn(ImageShape input, std::size_t classes);

  void validate() const;
  std::size_t feature_width() const { return hidden.back(); }
  std::size_t flat_width() const;  // input width of the first affine layer
  std::size_t parameter_count() const;

  std::string descriptor() const;
  static ClassifierSpec from_descriptor(const std::string& descriptor);
};

struct ClassifierOutput {
  Tensor logits;    // B x m
  Tensor features;  // B x d, penultimate activations
};

class Classifier {
 public:
  Classifier(ClassifierSpec spec, Rng& init);
  Classifier(ClassifierSpec spec, std::vector<NamedTensor> params);

  const ClassifierSpec& spec() const { return spec_; }
  ClassifierOutput forward(const Tensor& batch) const;

  const std::vector<NamedTensor>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  // Frozen parameters stop tracking gradients.
  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  // Shares storage but gives every parameter a fresh tracked identity, so
  // gradients with respect to the weights can be taken without unfreezing.
  Classifier tracked_alias() const;
  Classifier clone() const;
  void zero_output_layer();

 private:
  ClassifierSpec spec_;
  std::vector<NamedTensor> params_;
  bool frozen_ = false;
};

enum class ConditionMode { Hot, Hidden };
enum class Mode { Train, Eval };

struct GeneratorSpec {
  std::size_t z_dim = 64;
  ConditionMode condition = ConditionMode::Hidden;
  std::size_t condition_dim = 32;
  std::size_t classes = 3;
  double dropout = 0.5;
  ImageShape output{1, 12, 12};
  std::vector<std::size_t> hidden{128, 256};
  double slope = 0.2;
  std::uint64_t condition_seed = 0;

  std::size_t encoded_dim() const { return condition == ConditionMode::Hot ? classes : condition_dim; }
  void validate() const;
  std::size_t parameter_count() const;

  std::string descriptor() const;
  static GeneratorSpec from_descriptor(const std::string& descriptor);
};

struct ConditionVector {
  std::size_t label = 0;
  std::vector<float> encoded;
};

/// Hot mode: one-hot of length n. Hidden mode: the label's row of an n x d_c
/// projection with orthonormalized Gaussian rows drawn from seed.
ConditionVector make_condition(std::size_t label, const GeneratorSpec& spec, std::uint64_t seed);

class Generator {
 public:
  Generator(GeneratorSpec spec, Rng& init);
  Generator(GeneratorSpec spec, std::vector<NamedTensor> params);

  const GeneratorSpec& spec() const { return spec_; }

  // z: B x z_dim. Train mode applies dropout drawn from rng (required);
  // a missing mode is a contract error.
  Tensor forward(const Tensor& z, std::span<const ConditionVector> cond, std::optional<Mode> mode,
                 Rng* rng) const;
  // Draws z ~ N(0, 1) from rng and conditions on the given labels.
  Tensor sample(std::span<const std::size_t> labels, Mode mode, Rng& rng) const;

  const ConditionVector& condition(std::size_t label) const;
  Tensor sample_latent(std::size_t batch, Rng& rng) const;

  const std::vector<NamedTensor>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

 private:
  GeneratorSpec spec_;
  std::vector<NamedTensor> params_;
  std::vector<ConditionVector> conditions_;
};

Checkpoint to_checkpoint(const Classifier& clf);
Checkpoint to_checkpoint(const Generator& gen);
Classifier classifier_from_checkpoint(const Checkpoint& ckpt);
Generator generator_from_checkpoint(const Checkpoint& ckpt);

/// Argmax per row, ties to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

/// Fraction of samples whose argmax matches the label, evaluated in batches.
double classifier_accuracy(const Classifier& clf, const Dataset& data, std::size_t batch = 256);

}  // namespace ninv
