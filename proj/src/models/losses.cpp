#include "ninv/losses.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "ninv/ops.hpp"

namespace ninv {

namespace {

template <typename T>
void check_distribution_rows(const BasicTensor<T>& p, const char* what) {
  if (p.rank() != 2) throw DimensionError(std::string(what) + " must be B x m, got " + shape_str(p.shape()));
  const std::size_t rows = p.dim(0), cols = p.dim(1);
  auto d = p.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (d[r * cols + c] < 0) throw ContractError(std::string(what) + " has a negative entry");
      s += d[r * cols + c];
    }
    if (std::abs(s - 1.0) > 1e-3) {
      throw ContractError(std::string(what) + " row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
}

template <typename T>
BasicTensor<T> normalize_rows(const BasicTensor<T>& f) {
  if (f.rank() != 2) throw DimensionError("features must be B x d, got " + shape_str(f.shape()));
  auto norm = sqrt(add_scalar(sum_last(square(f)), kLogFloor * kLogFloor));
  return div(f, broadcast_last(norm, f.dim(1)));
}

// Flat index maps of (left, right) and (up, down) neighbour pairs.
std::pair<IndexMap, IndexMap> neighbour_maps(const Shape& s) {
  static std::mutex mu;
  static std::map<Shape, std::pair<IndexMap, IndexMap>> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(s);
  if (it != cache.end()) return it->second;
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  auto first = std::make_shared<std::vector<std::int64_t>>();
  auto second = std::make_shared<std::vector<std::int64_t>>();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x + 1 < w; ++x) {
        first->push_back(static_cast<std::int64_t>((p * h + y) * w + x));
        second->push_back(static_cast<std::int64_t>((p * h + y) * w + x + 1));
      }
    for (std::size_t y = 0; y + 1 < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        first->push_back(static_cast<std::int64_t>((p * h + y) * w + x));
        second->push_back(static_cast<std::int64_t>((p * h + y + 1) * w + x));
      }
  }
  auto out = std::make_pair(IndexMap(first), IndexMap(second));
  cache.emplace(s, out);
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> kl_loss(const BasicTensor<T>& probs, const BasicTensor<T>& target) {
  if (probs.shape() != target.shape()) {
    throw DimensionError("kl_loss shapes differ: " + shape_str(probs.shape()) + " vs " + shape_str(target.shape()));
  }
  check_distribution_rows(probs, "probs");
  check_distribution_rows(target, "target");
  std::vector<T> t_log_t(target.numel());
  auto t = target.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    t_log_t[i] = static_cast<T>(static_cast<double>(t[i]) * std::log(std::max<double>(t[i], kLogFloor)));
  }
  auto cross = mul(target.detach(), log(clamp_min(probs, kLogFloor)));
  auto per = sub(BasicTensor<T>(target.shape(), std::move(t_log_t)), cross);
  return mul_scalar(sum(per), 1.0 / static_cast<double>(probs.dim(0)));
}

template <typename T>
BasicTensor<T> weighted_ce_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                                std::span<const double> class_weights) {
  if (logits.rank() != 2) throw DimensionError("logits must be B x m, got " + shape_str(logits.shape()));
  const std::size_t b = logits.dim(0), m = logits.dim(1);
  if (labels.size() != b) throw DimensionError("label count does not match batch");
  if (class_weights.size() != m) throw DimensionError("class weight count does not match logits width");
  std::vector<T> w(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= m) {
      throw DomainError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(m) + ")");
    }
    w[i] = static_cast<T>(class_weights[labels[i]]);
  }
  auto picked = pick_cols(log_softmax(logits), std::vector<std::size_t>(labels.begin(), labels.end()));
  auto weighted = mul(picked, BasicTensor<T>({b}, std::move(w)));
  return mul_scalar(sum(weighted), -1.0 / static_cast<double>(b));
}

template <typename T>
BasicTensor<T> ce_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw DimensionError("logits must be B x m, got " + shape_str(logits.shape()));
  const std::vector<double> ones(logits.dim(1), 1.0);
  return weighted_ce_loss(logits, labels, ones);
}

template <typename T>
BasicTensor<T> cosine_diversity_loss(const BasicTensor<T>& features) {
  if (features.rank() != 2 || features.dim(0) < 2) {
    throw ContractError("cosine diversity needs at least two feature rows");
  }
  const double b = static_cast<double>(features.dim(0));
  auto fn = normalize_rows(features);
  auto gram = matmul(fn, fn, false, true);
  auto off_diag = sub(sum(gram), sum(square(fn)));
  return mul_scalar(off_diag, 1.0 / (b * (b - 1)));
}

template <typename T>
BasicTensor<T> ortho_loss(const BasicTensor<T>& features) {
  if (features.rank() != 2 || features.dim(0) < 1) throw ContractError("ortho loss needs at least one feature row");
  const std::size_t b = features.dim(0);
  auto fn = normalize_rows(features);
  auto gram = matmul(fn, fn, false, true);
  std::vector<T> eye(b * b, T(0));
  for (std::size_t i = 0; i < b; ++i) eye[i * b + i] = T(1);
  return sum(square(sub(gram, BasicTensor<T>({b, b}, std::move(eye)))));
}

template <typename T>
BasicTensor<T> tv_loss(const BasicTensor<T>& images) {
  if (images.rank() != 4 || images.dim(2) < 2 || images.dim(3) < 2) {
    throw DimensionError("tv_loss needs B x C x H x W with H, W >= 2, got " + shape_str(images.shape()));
  }
  auto [first, second] = neighbour_maps(images.shape());
  const Shape pairs{first->size()};
  auto diff = sub(gather(images, first, pairs), gather(images, second, pairs));
  return mul_scalar(sum(square(diff)), 1.0 / static_cast<double>(images.numel()));
}

template <typename T>
BasicTensor<T> pixel_loss(const BasicTensor<T>& images) {
  auto over = relu(add_scalar(images, -1.0));
  auto under = relu(mul_scalar(images, -1.0));
  return mean(add(square(over), square(under)));
}

template <typename T>
BasicTensor<T> linf_perturb(const BasicTensor<T>& images, double eps, Rng& rng) {
  if (!(eps >= 0)) throw DomainError("perturbation radius must be non-negative");
  std::vector<T> noise(images.numel());
  for (auto& n : noise) n = static_cast<T>(eps > 0 ? rng.uniform(-eps, eps) : 0.0);
  return clamp(add(images, BasicTensor<T>(images.shape(), std::move(noise))), 0.0, 1.0);
}

template <typename T>
BasicTensor<T> soft_targets(std::span<const std::size_t> labels, std::size_t classes, double smoothing) {
  if (!(smoothing >= 0 && smoothing <= 1)) throw DomainError("smoothing must lie in [0, 1]");
  std::vector<T> t(labels.size() * classes, static_cast<T>(smoothing / static_cast<double>(classes)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw DomainError("label outside class range");
    t[i * classes + labels[i]] = static_cast<T>(1.0 - smoothing + smoothing / static_cast<double>(classes));
  }
  return BasicTensor<T>({labels.size(), classes}, std::move(t));
}

#define NINV_INSTANTIATE_LOSSES(T)                                                                           \
  template BasicTensor<T> kl_loss(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> weighted_ce_loss(const BasicTensor<T>&, std::span<const std::size_t>,              \
                                           std::span<const double>);                                         \
  template BasicTensor<T> ce_loss(const BasicTensor<T>&, std::span<const std::size_t>);                      \
  template BasicTensor<T> cosine_diversity_loss(const BasicTensor<T>&);                                      \
  template BasicTensor<T> ortho_loss(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> tv_loss(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> pixel_loss(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> linf_perturb(const BasicTensor<T>&, double, Rng&);                                 \
  template BasicTensor<T> soft_targets(std::span<const std::size_t>, std::size_t, double);

NINV_INSTANTIATE_LOSSES(float)
NINV_INSTANTIATE_LOSSES(double)

}  // namespace ninv
