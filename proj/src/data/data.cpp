#include "ninv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ninv/rng.hpp"

namespace ninv {

std::string ImageShape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

ImageShape ImageShape::parse(const std::string& text) {
  ImageShape s;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> s.channels >> x1 >> s.height >> x2 >> s.width) || x1 != 'x' || x2 != 'x' || !in.eof() ||
      s.numel() == 0) {
    throw DomainError("image shape must look like CxHxW, got '" + text + "'");
  }
  return s;
}

ImageShape Dataset::image_shape() const {
  return ImageShape{images.dim(1), images.dim(2), images.dim(3)};
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = image_shape().numel();
  std::vector<float> out(indices.size() * per);
  auto src = images.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw ContractError("sample index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[b] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  auto s = images.shape();
  s[0] = indices.size();
  return Tensor(s, std::move(out));
}

std::vector<std::size_t> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw ContractError("dataset images must be N x C x H x W");
  if (size() == 0) throw ContractError("dataset '" + name + "' is empty");
  if (images.dim(0) != size()) {
    throw ContractError("dataset '" + name + "' has " + std::to_string(images.dim(0)) + " images and " +
                        std::to_string(size()) + " labels");
  }
  for (auto l : labels) {
    if (l >= classes) throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("pixel outside [0, 1] in dataset '" + name + "'");
  }
}

Dataset take(const Dataset& data, std::size_t count) {
  count = std::min(count, data.size());
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  Dataset out = data;
  out.images = data.batch(idx);
  out.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

Dataset concatenate(const Dataset& a, const Dataset& b, std::size_t classes) {
  if (a.image_shape() != b.image_shape()) {
    throw DimensionError("cannot concatenate " + a.image_shape().str() + " with " + b.image_shape().str());
  }
  std::vector<float> pixels(a.images.data().begin(), a.images.data().end());
  pixels.insert(pixels.end(), b.images.data().begin(), b.images.data().end());
  auto shape = a.images.shape();
  shape[0] = a.size() + b.size();
  Dataset out;
  out.name = a.name;
  out.split = a.split;
  out.images = Tensor(shape, std::move(pixels));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.classes = classes;
  return out;
}

SynthFamily parse_family(const std::string& name) {
  if (name == "bars") return SynthFamily::Bars;
  if (name == "crosses") return SynthFamily::Crosses;
  if (name == "blobs") return SynthFamily::Blobs;
  if (name == "rings") return SynthFamily::Rings;
  throw DomainError("unknown synthetic family '" + name + "'");
}

std::string family_name(SynthFamily family) {
  switch (family) {
    case SynthFamily::Bars: return "bars";
    case SynthFamily::Crosses: return "crosses";
    case SynthFamily::Blobs: return "blobs";
    case SynthFamily::Rings: return "rings";
  }
  return "?";
}

namespace {

// Band of rows (or columns) owned by class k out of n along an axis of length len.
std::pair<std::size_t, std::size_t> band(std::size_t k, std::size_t n, std::size_t len) {
  const std::size_t width = std::max<std::size_t>(1, len / (2 * n));
  const double center = (static_cast<double>(k) + 0.5) * static_cast<double>(len) / static_cast<double>(n);
  auto start = static_cast<std::size_t>(std::max(0.0, std::floor(center - static_cast<double>(width) / 2.0)));
  start = std::min(start, len - width);
  return {start, start + width};
}

std::vector<float> gray_template(const SynthSpec& spec, std::size_t k) {
  const std::size_t h = spec.shape.height, w = spec.shape.width, n = spec.classes;
  std::vector<float> img(h * w, 0.0f);
  const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
  switch (spec.family) {
    case SynthFamily::Bars: {
      auto [r0, r1] = band(k, n, h);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = 0; c < w; ++c) img[r * w + c] = 1.0f;
      break;
    }
    case SynthFamily::Crosses: {
      auto [r0, r1] = band(k, n, h);
      auto [c0, c1] = band(n - 1 - k, n, w);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          if ((r >= r0 && r < r1) || (c >= c0 && c < c1)) img[r * w + c] = 1.0f;
      break;
    }
    case SynthFamily::Blobs: {
      const double radius = static_cast<double>(std::min(h, w)) / 4;
      const double sigma = std::max(0.75, static_cast<double>(std::min(h, w)) / 8);
      const double angle = 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      const double by = cy + radius * std::sin(angle), bx = cx + radius * std::cos(angle);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const double d2 = (r - by) * (r - by) + (c - bx) * (c - bx);
          img[r * w + c] = static_cast<float>(std::exp(-d2 / (2 * sigma * sigma)));
        }
      break;
    }
    case SynthFamily::Rings: {
      const double max_r = static_cast<double>(std::min(h, w)) / 2 - 1;
      const double rk = max_r * static_cast<double>(k + 1) / static_cast<double>(n);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const double d = std::hypot(r - cy, c - cx) - rk;
          img[r * w + c] = static_cast<float>(std::exp(-d * d / 0.5));
        }
      break;
    }
  }
  return img;
}

}  // namespace

std::vector<float> synth_template(const SynthSpec& spec, std::size_t label) {
  if (label >= spec.classes) throw DomainError("template label outside class range");
  auto gray = gray_template(spec, label);
  const std::size_t channels = spec.shape.channels, plane = gray.size();
  std::vector<float> img(channels * plane);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    // Colour images tint each class differently per channel.
    double gain = 1.0;
    if (channels > 1) {
      gain = 0.6 + 0.4 * std::cos(2 * std::numbers::pi *
                                  (static_cast<double>(ch) / static_cast<double>(channels) +
                                   static_cast<double>(label) / static_cast<double>(spec.classes)));
    }
    for (std::size_t i = 0; i < plane; ++i) img[ch * plane + i] = static_cast<float>(gray[i] * gain);
  }
  return img;
}

namespace {

Dataset synth_split(const SynthSpec& spec, std::size_t count, const std::string& split, Rng rng) {
  std::vector<std::vector<float>> templates;
  for (std::size_t k = 0; k < spec.classes; ++k) templates.push_back(synth_template(spec, k));
  const std::size_t per = spec.shape.numel();
  std::vector<float> pixels(count * per);
  Dataset out;
  out.name = family_name(spec.family);
  out.split = split;
  out.classes = spec.classes;
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = i % spec.classes;
    out.labels[i] = k;
    for (std::size_t p = 0; p < per; ++p) {
      double v = templates[k][p];
      if (spec.noise > 0) v += rng.normal(0.0, spec.noise);
      pixels[i * per + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  out.images = Tensor({count, spec.shape.channels, spec.shape.height, spec.shape.width}, std::move(pixels));
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> synth_dataset(const SynthSpec& spec, std::size_t n_train, std::size_t n_test) {
  if (spec.classes < 2) throw DomainError("synthetic data needs at least 2 classes");
  if (n_train < spec.classes || n_test < spec.classes) {
    throw DomainError("each split needs at least one sample per class");
  }
  if (spec.noise < 0) throw DomainError("noise level must be non-negative");
  if (spec.shape.height < 2 * spec.classes && spec.family != SynthFamily::Blobs) {
    throw DomainError("image height " + std::to_string(spec.shape.height) + " too small for " +
                      std::to_string(spec.classes) + " classes");
  }
  Rng root(spec.seed);
  return {synth_split(spec, n_train, "train", root.fork("train")),
          synth_split(spec, n_test, "test", root.fork("test"))};
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t at, const std::filesystem::path& path) {
  if (bytes.size() < at + 4) throw FormatError("truncated IDX header in " + path.string());
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void check_magic(const std::vector<unsigned char>& bytes, std::uint32_t expected, const std::filesystem::path& path) {
  const std::uint32_t magic = be32(bytes, 0, path);
  if (magic != expected) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "bad IDX magic %02x %02x %02x %02x (expected 0x%08x) in ", bytes[0], bytes[1],
                  bytes[2], bytes[3], expected);
    throw FormatError(buf + path.string());
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  check_magic(img, 0x00000803u, images_path);
  check_magic(lab, 0x00000801u, labels_path);

  const std::size_t n = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t n_labels = be32(lab, 4, labels_path);
  if (img.size() < 16 + n * rows * cols) {
    throw FormatError("truncated IDX image payload in " + images_path.string() + ": expected " +
                      std::to_string(n * rows * cols) + " bytes, found " + std::to_string(img.size() - 16));
  }
  if (lab.size() < 8 + n_labels) throw FormatError("truncated IDX label payload in " + labels_path.string());
  if (n != n_labels) {
    throw ConsistencyError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                           " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError("empty IDX tensor in " + images_path.string());

  Dataset out;
  out.name = images_path.stem().string();
  out.split = "train";
  std::vector<float> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  out.images = Tensor({n, 1, rows, cols}, std::move(pixels));
  out.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.classes = classes == 0 ? max_label + 1 : classes;
  if (max_label >= out.classes) throw ConsistencyError("IDX label exceeds the declared class count");
  return out;
}

}  // namespace ninv
