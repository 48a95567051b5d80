#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ninv/tensor.hpp"

namespace ninv {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 12;
  std::size_t width = 12;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
  std::string str() const;
  static ImageShape parse(const std::string& text);  // "CxHxW"
};

/// Labeled image set. images is N x C x H x W with pixels in [0, 1].
struct Dataset {
  std::string name;
  std::string split;  // "train" | "test"
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  ImageShape image_shape() const;
  // Copies the selected images into a new B x C x H x W tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const;
  // Throws ContractError when an invariant (N >= 1, labels, pixel range) fails.
  void validate() const;
};

/// First `count` samples (all if count >= size).
Dataset take(const Dataset& data, std::size_t count);
/// Stacks b after a; both must share the image shape.
Dataset concatenate(const Dataset& a, const Dataset& b, std::size_t classes);

enum class SynthFamily { Bars, Crosses, Blobs, Rings };

SynthFamily parse_family(const std::string& name);
std::string family_name(SynthFamily family);

struct SynthSpec {
  SynthFamily family = SynthFamily::Bars;
  std::size_t classes = 3;
  ImageShape shape{1, 12, 12};
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Noise-free class template, in [0, 1].
std::vector<float> synth_template(const SynthSpec& spec, std::size_t label);

/// Balanced labels (sample i has label i mod classes), template plus
/// N(0, noise^2) per pixel clamped to [0, 1]. Train and test draw from
/// disjoint streams derived from the seed.
std::pair<Dataset, Dataset> synth_dataset(const SynthSpec& spec, std::size_t n_train, std::size_t n_test);

/// Reads an IDX image file (magic 0x00000803, u8 pixels) and an IDX label
/// file (magic 0x00000801). Pixels are scaled by 1/255. classes == 0 infers
/// max(label) + 1.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes = 0);

}  // namespace ninv
