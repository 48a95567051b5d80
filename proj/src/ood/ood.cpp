#include "ninv/ood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "ninv/autodiff.hpp"
#include "ninv/ops.hpp"

namespace ninv {

GarbageSet::GarbageSet(ImageShape shape, std::size_t label, std::size_t capacity)
    : shape_(shape), label_(label), capacity_(capacity) {
  if (capacity == 0) throw ContractError("garbage capacity must be positive");
}

std::string GarbageSet::provenance(std::size_t i) const {
  const auto c = cycles_.at(i);
  return c == 0 ? "noise" : "inverted@cycle_" + std::to_string(c);
}

void GarbageSet::append(const Tensor& images, std::size_t cycle) {
  if (images.rank() != 4 || ImageShape{images.dim(1), images.dim(2), images.dim(3)} != shape_) {
    throw DimensionError("garbage images must be N x " + shape_.str() + ", got " + shape_str(images.shape()));
  }
  const auto data = images.data();
  pixels_.insert(pixels_.end(), data.begin(), data.end());
  cycles_.insert(cycles_.end(), images.dim(0), cycle);
}

void GarbageSet::add_noise(const Tensor& images) {
  if (noise_count_ != size()) throw ContractError("noise must be added before inverted samples");
  if (noise_count_ + images.dim(0) > capacity_) throw ContractError("noise block exceeds garbage capacity");
  append(images, 0);
  noise_count_ += images.dim(0);
}

void GarbageSet::add_inverted(const Tensor& images, std::size_t cycle) {
  if (cycle == 0) throw ContractError("inverted samples need a cycle index of at least 1");
  append(images, cycle);
  if (size() <= capacity_) return;
  // Drop the oldest inverted images, which sit right after the noise block.
  const std::size_t excess = size() - capacity_;
  const std::size_t per = shape_.numel();
  const auto first = static_cast<std::ptrdiff_t>(noise_count_);
  const auto last = static_cast<std::ptrdiff_t>(noise_count_ + excess);
  cycles_.erase(cycles_.begin() + first, cycles_.begin() + last);
  pixels_.erase(pixels_.begin() + first * static_cast<std::ptrdiff_t>(per),
                pixels_.begin() + last * static_cast<std::ptrdiff_t>(per));
}

Tensor GarbageSet::images() const {
  return Tensor({size(), shape_.channels, shape_.height, shape_.width}, pixels_);
}

Dataset GarbageSet::as_dataset(std::size_t classes) const {
  if (label_ >= classes) throw DomainError("garbage label outside the class range");
  Dataset d;
  d.name = "garbage";
  d.split = "train";
  d.images = images();
  d.labels.assign(size(), label_);
  d.classes = classes;
  return d;
}

GarbageSet init_garbage(std::size_t count, const ImageShape& shape, std::size_t label, std::size_t capacity, Rng& rng) {
  if (count == 0) throw ContractError("garbage set needs at least one noise image");
  std::vector<float> px(count * shape.numel());
  for (auto& v : px) v = static_cast<float>(std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0));
  GarbageSet g(shape, label, capacity);
  g.add_noise(Tensor({count, shape.channels, shape.height, shape.width}, std::move(px)));
  return g;
}

std::vector<double> class_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw DomainError("class_weights needs at least one class");
  std::vector<double> w;
  w.reserve(counts.size());
  for (auto c : counts) {
    if (c == 0) throw DomainError("class_weights: every class needs at least one sample");
    w.push_back(1.0 / static_cast<double>(c));
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (auto& v : w) v /= mean;
  return w;
}

std::size_t argmax(std::span<const double> p) {
  if (p.empty()) throw ContractError("argmax of an empty vector");
  std::size_t k = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[k]) k = i;
  return k;
}

double ue_denominator(std::size_t m, std::size_t k) {
  if (m < 2 || k >= m) throw DomainError("ue_denominator needs m >= 2 and k < m");
  const double u = 1.0 / static_cast<double>(m);
  double d = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = (i == k ? 1.0 : 0.0) - u;
    d += e * e;
  }
  return d;
}

double uncertainty(std::span<const double> p) {
  if (p.size() < 2) throw ContractError("uncertainty needs at least two classes");
  double total = 0;
  for (double v : p) {
    if (!(v >= 0) || !std::isfinite(v)) throw ContractError("uncertainty: probabilities must be finite and >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ContractError("uncertainty: probabilities must sum to 1");
  const double u = 1.0 / static_cast<double>(p.size());
  double num = 0;
  for (double v : p) num += (v - u) * (v - u);
  return std::clamp(1.0 - num / ue_denominator(p.size(), argmax(p)), 0.0, 1.0);
}

Prediction predict_from_logits(std::span<const float> logits) {
  if (logits.size() < 2) throw DimensionError("prediction needs at least two logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  Prediction pr;
  pr.p.reserve(logits.size());
  double z = 0;
  for (float l : logits) z += pr.p.emplace_back(std::exp(static_cast<double>(l) - top));
  for (auto& v : pr.p) v /= z;
  pr.index = argmax(pr.p);
  pr.is_ood = pr.index + 1 == pr.p.size();
  pr.confidence = pr.p[pr.index];
  pr.ue = uncertainty(pr.p);
  return pr;
}

namespace {

void check_input(const Classifier& clf, const ImageShape& s) {
  if (clf.spec().input != s) {
    throw DimensionError("classifier expects " + clf.spec().input.str() + " images, got " + s.str());
  }
}

template <typename F>
void for_each_logit_row(const Classifier& clf, const Tensor& images, F&& f) {
  if (images.rank() != 4) throw DimensionError("expected N x C x H x W images, got " + shape_str(images.shape()));
  check_input(clf, {images.dim(1), images.dim(2), images.dim(3)});
  NoGradGuard<float> guard;
  const std::size_t n = images.dim(0), per = images.numel() / std::max<std::size_t>(n, 1);
  const std::size_t m = clf.spec().classes;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t b = std::min(kChunk, n - start);
    std::vector<float> px(images.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                          images.data().begin() + static_cast<std::ptrdiff_t>((start + b) * per));
    const Tensor chunk({b, images.dim(1), images.dim(2), images.dim(3)}, std::move(px));
    const Tensor logits = clf.forward(chunk).logits;
    for (std::size_t i = 0; i < b; ++i) f(start + i, logits.data().subspan(i * m, m));
  }
}

}  // namespace

Prediction ood_predict(const Classifier& clf, const Tensor& image) {
  if (image.rank() == 3) {
    return ood_predict_batch(clf, reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)})).front();
  }
  if (image.rank() == 4 && image.dim(0) == 1) return ood_predict_batch(clf, image).front();
  throw DimensionError("ood_predict expects one C x H x W image, got " + shape_str(image.shape()));
}

std::vector<Prediction> ood_predict_batch(const Classifier& clf, const Tensor& images) {
  std::vector<Prediction> out;
  for_each_logit_row(clf, images, [&](std::size_t, std::span<const float> row) { out.push_back(predict_from_logits(row)); });
  return out;
}

ThresholdReport threshold_report(std::span<const Prediction> id_preds, std::span<const std::size_t> id_labels,
                                 std::span<const Prediction> ood_preds) {
  if (id_preds.empty() || ood_preds.empty()) throw ContractError("threshold_report needs nonempty ID and OOD sets");
  if (id_preds.size() != id_labels.size()) throw DimensionError("one label per ID prediction required");
  ThresholdReport r;
  r.id_total = id_preds.size();
  r.ood_total = ood_preds.size();
  for (std::size_t i = 0; i < id_preds.size(); ++i) {
    if (id_preds[i].index != id_labels[i]) continue;
    ++r.id_correct;
    r.min_id_confidence = std::min(r.min_id_confidence.value_or(id_preds[i].confidence), id_preds[i].confidence);
  }
  for (const auto& p : ood_preds) {
    if (p.is_ood) continue;
    ++r.ood_misrouted;
    r.max_ood_confidence = std::max(r.max_ood_confidence.value_or(p.confidence), p.confidence);
  }
  r.id_min_absent = !r.min_id_confidence;
  r.ood_max_absent = !r.max_ood_confidence;
  if (r.id_min_absent) {
    r.gap = -std::numeric_limits<double>::infinity();
  } else if (r.ood_max_absent) {
    r.gap = std::numeric_limits<double>::infinity();
  } else {
    r.gap = *r.min_id_confidence - *r.max_ood_confidence;
    for (const auto& p : ood_preds) r.violations += !p.is_ood && p.confidence >= *r.min_id_confidence;
  }
  return r;
}

ThresholdReport threshold_report(const Classifier& clf, const Dataset& id_set, const Dataset& ood_set) {
  const auto id = ood_predict_batch(clf, id_set.images);
  const auto ood = ood_predict_batch(clf, ood_set.images);
  return threshold_report(id, id_set.labels, ood);
}

double garbage_rate(const Classifier& clf, const Dataset& data) {
  if (data.size() == 0) throw ContractError("garbage_rate of an empty set");
  const std::size_t garbage = clf.spec().classes - 1;
  std::size_t hits = 0;
  for_each_logit_row(clf, data.images, [&](std::size_t, std::span<const float> row) {
    hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == garbage;
  });
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double id_accuracy(const Classifier& clf, const Dataset& data) {
  if (data.size() == 0) throw ContractError("id_accuracy of an empty set");
  if (data.classes + 1 != clf.spec().classes) {
    throw ContractError("dataset has " + std::to_string(data.classes) + " classes but the classifier has " +
                        std::to_string(clf.spec().classes) + " outputs (expected one extra garbage class)");
  }
  std::size_t hits = 0;
  for_each_logit_row(clf, data.images, [&](std::size_t i, std::span<const float> row) {
    hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == data.labels[i];
  });
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

AccuracyMatrix evaluate_grid(std::span<const GridModel> models, std::span<const Dataset> datasets,
                             std::size_t threads) {
  if (models.empty() || datasets.empty()) throw ConfigError("evaluate_grid needs at least one model and dataset");
  AccuracyMatrix m;
  for (const auto& d : datasets) m.columns.push_back(d.name);
  std::vector<std::size_t> own(models.size());
  for (std::size_t r = 0; r < models.size(); ++r) {
    const auto& gm = models[r];
    if (gm.model == nullptr) throw ConfigError("model '" + gm.name + "' is missing");
    const auto it = std::find(m.columns.begin(), m.columns.end(), gm.trained_on);
    if (it == m.columns.end()) {
      throw ConfigError("model '" + gm.name + "' was trained on '" + gm.trained_on + "', which is not in the grid");
    }
    own[r] = static_cast<std::size_t>(it - m.columns.begin());
    m.rows.push_back(gm.name);
  }
  m.values.assign(models.size(), std::vector<double>(datasets.size(), 0.0));

  const std::size_t cells = models.size() * datasets.size();
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t cell = begin; cell < end; ++cell) {
      const std::size_t r = cell / datasets.size(), c = cell % datasets.size();
      const auto& clf = *models[r].model;
      m.values[r][c] = c == own[r] ? id_accuracy(clf, datasets[c]) : garbage_rate(clf, datasets[c]);
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cells);
  if (threads <= 1) {
    work(0, cells);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (cells + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk, end = std::min(cells, begin + chunk);
      if (begin >= end) continue;
      pool.emplace_back([&, t, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return m;
}

void write_accuracy_matrix(const AccuracyMatrix& m, const std::filesystem::path& path) {
  CsvSchema schema;
  schema.columns.push_back({"model", CsvType::Text});
  for (const auto& c : m.columns) schema.columns.push_back({c, CsvType::Real});
  std::vector<CsvRow> rows;
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    CsvRow row{m.rows[r]};
    for (double v : m.values[r]) row.emplace_back(v);
    rows.push_back(std::move(row));
  }
  write_csv(rows, schema, path);
}

void OodConfig::validate() const {
  inversion.validate();
  if (capacity_factor == 0) throw DomainError("capacity_factor must be at least 1");
  if (base_train.batch_size == 0 || cycle_train.batch_size == 0) throw DomainError("batch_size must be positive");
}

namespace {

std::vector<std::size_t> label_counts(const Dataset& d) {
  std::vector<std::size_t> c(d.classes, 0);
  for (auto l : d.labels) ++c[l];
  return c;
}

std::string describe(const CycleReport& r) {
  std::ostringstream s;
  s << "cycle " << r.cycle << ": id_train_accuracy=" << r.id_train_accuracy << " garbage_size=" << r.garbage_size;
  if (r.inversion_accuracy) s << " inversion_accuracy=" << *r.inversion_accuracy;
  if (r.mean_ue) s << " mean_ue=" << *r.mean_ue;
  s << " class_weights=";
  for (std::size_t i = 0; i < r.class_weights.size(); ++i) s << (i ? ";" : "") << r.class_weights[i];
  return s.str();
}

}  // namespace

OodResult ood_training_cycle(Classifier& clf, const GeneratorFactory& gen_factory, const Dataset& id_train,
                             const OodConfig& cfg, Rng& rng, const OodProbes& probes, const CycleCallback& on_cycle) {
  cfg.validate();
  id_train.validate();
  const std::size_t n = id_train.classes, m = n + 1;
  if (clf.spec().classes != m) {
    throw ContractError("classifier needs " + std::to_string(m) + " outputs (n + garbage), has " +
                        std::to_string(clf.spec().classes));
  }
  check_input(clf, id_train.image_shape());
  const std::size_t per_class = std::max<std::size_t>(1, id_train.size() / n);
  const std::size_t noise = cfg.noise_count ? cfg.noise_count : per_class;
  const std::size_t budget = cfg.budget ? cfg.budget : per_class;

  Rng noise_rng = rng.fork("garbage-noise");
  OodResult result{init_garbage(noise, id_train.image_shape(), n, cfg.capacity_factor * id_train.size(), noise_rng),
                   {}};
  auto& garbage = result.garbage;
  Rng train_rng = rng.fork("classifier-training");

  auto train_and_report = [&](std::size_t cycle, const TrainConfig& tc, CycleReport report) {
    const Dataset combined = concatenate(id_train, garbage.as_dataset(m), m);
    report.class_weights = class_weights(label_counts(combined));
    clf.unfreeze();
    train_classifier(clf, combined, tc, report.class_weights, train_rng);
    clf.freeze();
    report.cycle = cycle;
    report.garbage_size = garbage.size();
    report.id_train_accuracy = id_accuracy(clf, id_train);
    if (probes.id_test) report.id_test_accuracy = id_accuracy(clf, *probes.id_test);
    for (const auto& p : probes.probes) report.probe_routing.push_back(garbage_rate(clf, p));
    if (probes.id_test && !probes.probes.empty()) {
      report.threshold = threshold_report(clf, *probes.id_test, probes.probes.front());
    }
    if (cycle >= cfg.warmup_cycles && report.id_train_accuracy < 1.0 / static_cast<double>(m) + 0.05) {
      throw DivergenceError("ID train accuracy collapsed to chance at cycle " + std::to_string(cycle),
                            describe(report));
    }
    result.reports.push_back(report);
    return report;
  };

  {
    const auto base = train_and_report(0, cfg.base_train, CycleReport{});
    if (on_cycle) on_cycle(base, nullptr);
  }

  for (std::size_t cycle = 1; cycle <= cfg.cycles; ++cycle) {
    Rng cycle_rng = rng.fork("cycle-" + std::to_string(cycle));
    Rng gen_rng = cycle_rng.fork("generator");
    Generator gen = gen_factory(cycle, gen_rng);
    if (gen.spec().classes != m) throw ContractError("generator must condition on all n + 1 classes");

    InversionConfig ic = cfg.inversion;
    ic.target_labels.clear();
    Rng inv_rng = cycle_rng.fork("inversion");
    CycleReport report;
    report.inversion_accuracy = run_inversion(gen, clf, ic, inv_rng).final_accuracy;

    std::vector<std::size_t> labels(budget);
    for (std::size_t i = 0; i < budget; ++i) labels[i] = i % m;
    Rng sample_rng = cycle_rng.fork("garbage-samples");
    Tensor inverted;
    {
      NoGradGuard<float> guard;
      inverted = gen.sample(labels, cfg.sample_dropout ? Mode::Train : Mode::Eval, sample_rng);
    }
    double ue = 0;
    for (const auto& p : ood_predict_batch(clf, inverted)) ue += p.ue;
    report.mean_ue = ue / static_cast<double>(budget);
    garbage.add_inverted(inverted, cycle);

    const auto done = train_and_report(cycle, cfg.cycle_train, report);
    if (on_cycle) on_cycle(done, &inverted);
  }
  return result;
}

namespace {

std::string optional_field(const std::optional<double>& v) { return v ? csv_field(*v) : std::string(); }

}  // namespace

CsvSchema cycle_report_schema(std::span<const std::string> probe_names) {
  CsvSchema s;
  s.columns = {{"cycle", CsvType::Integer},          {"id_train_accuracy", CsvType::Real},
               {"id_test_accuracy", CsvType::Text},  {"inversion_accuracy", CsvType::Text},
               {"garbage_size", CsvType::Integer},   {"mean_ue", CsvType::Text},
               {"class_weights", CsvType::Text}};
  for (const auto& p : probe_names) s.columns.push_back({"routing_" + p, CsvType::Real});
  for (const char* c : {"min_id_confidence", "max_ood_confidence", "gap", "violations"}) {
    s.columns.push_back({c, CsvType::Text});
  }
  return s;
}

CsvRow cycle_report_row(const CycleReport& r) {
  std::string weights;
  for (std::size_t i = 0; i < r.class_weights.size(); ++i) weights += (i ? ";" : "") + csv_field(r.class_weights[i]);
  CsvRow row{static_cast<std::int64_t>(r.cycle), r.id_train_accuracy, optional_field(r.id_test_accuracy),
             optional_field(r.inversion_accuracy), static_cast<std::int64_t>(r.garbage_size),
             optional_field(r.mean_ue), weights};
  for (double v : r.probe_routing) row.emplace_back(v);
  if (r.threshold) {
    row.emplace_back(optional_field(r.threshold->min_id_confidence));
    row.emplace_back(optional_field(r.threshold->max_ood_confidence));
    row.emplace_back(csv_field(r.threshold->gap));
    row.emplace_back(std::to_string(r.threshold->violations));
  } else {
    for (int i = 0; i < 4; ++i) row.emplace_back(std::string());
  }
  return row;
}

}  // namespace ninv
