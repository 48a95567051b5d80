#include "ninv/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ninv/autodiff.hpp"
#include "ninv/ops.hpp"

namespace ninv {

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw FormatError("bad size list '" + s + "'");
    }
  }
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::string& field(const std::map<std::string, std::string>& f, const std::string& key) {
  auto it = f.find(key);
  if (it == f.end()) throw FormatError("descriptor lacks '" + key + "'");
  return it->second;
}

Tensor init_weight(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  const double sd = std::sqrt(gain / static_cast<double>(fan_in));
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, sd));
  return Tensor(std::move(shape), std::move(v));
}

// Checks names and shapes against the expected layout, in order.
void check_layout(const std::vector<NamedTensor>& expected, const std::vector<NamedTensor>& got) {
  if (expected.size() != got.size()) {
    throw ConsistencyError("expected " + std::to_string(expected.size()) + " parameter tensors, got " +
                           std::to_string(got.size()));
  }
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (expected[i].name != got[i].name || expected[i].value.shape() != got[i].value.shape()) {
      throw ConsistencyError("parameter " + got[i].name + shape_str(got[i].value.shape()) + " does not match " +
                             expected[i].name + shape_str(expected[i].value.shape()));
    }
  }
}

std::vector<NamedTensor> classifier_layout(const ClassifierSpec& s, Rng* rng) {
  auto make = [&](Shape shape, std::size_t fan_in, double gain) {
    return rng ? init_weight(std::move(shape), fan_in, gain, *rng) : Tensor::zeros(std::move(shape));
  };
  std::vector<NamedTensor> p;
  if (s.kind == ClassifierKind::Cnn) {
    std::size_t in_ch = s.input.channels;
    for (std::size_t i = 0; i < s.filters.size(); ++i) {
      const std::size_t fan = in_ch * s.kernel * s.kernel;
      p.push_back({"conv" + std::to_string(i) + ".weight", make({s.filters[i], in_ch, s.kernel, s.kernel}, fan, 2.0)});
      p.push_back({"conv" + std::to_string(i) + ".bias", Tensor::zeros({s.filters[i]})});
      in_ch = s.filters[i];
    }
  }
  std::size_t in = s.flat_width();
  std::vector<std::size_t> widths = s.hidden;
  widths.push_back(s.classes);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    p.push_back({"fc" + std::to_string(i) + ".weight", make({in, widths[i]}, in, last ? 1.0 : 2.0)});
    p.push_back({"fc" + std::to_string(i) + ".bias", Tensor::zeros({widths[i]})});
    in = widths[i];
  }
  return p;
}

std::vector<NamedTensor> generator_layout(const GeneratorSpec& s, Rng* rng) {
  std::vector<NamedTensor> p;
  std::size_t in = s.z_dim + s.encoded_dim();
  std::vector<std::size_t> widths = s.hidden;
  widths.push_back(s.output.numel());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    Shape shape{in, widths[i]};
    Tensor w = rng ? init_weight(shape, in, last ? 1.0 : 2.0, *rng) : Tensor::zeros(shape);
    p.push_back({"fc" + std::to_string(i) + ".weight", w});
    p.push_back({"fc" + std::to_string(i) + ".bias", Tensor::zeros({widths[i]})});
    in = widths[i];
  }
  return p;
}

void track(std::vector<NamedTensor>& params, bool on) {
  for (auto& p : params) p.value.set_requires_grad(on);
}

std::vector<Tensor> values(const std::vector<NamedTensor>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

std::size_t count(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

}  // namespace

ClassifierSpec ClassifierSpec::mlp(ImageShape input, std::size_t classes) {
  ClassifierSpec s;
  s.input = input;
  s.classes = classes;
  return s;
}

ClassifierSpec ClassifierSpec::cnn(ImageShape input, std::size_t classes) {
  ClassifierSpec s;
  s.kind = ClassifierKind::Cnn;
  s.input = input;
  s.classes = classes;
  s.hidden = {64};
  return s;
}

void ClassifierSpec::validate() const {
  if (classes < 2) throw DomainError("classifier needs at least 2 classes");
  if (input.numel() == 0) throw DomainError("classifier input shape is empty");
  if (hidden.empty() || hidden.back() < 2) throw DomainError("penultimate feature width must be at least 2");
  for (auto h : hidden)
    if (h == 0) throw DomainError("zero-width hidden layer");
  if (kind == ClassifierKind::Cnn) {
    if (filters.empty()) throw DomainError("cnn needs at least one conv block");
    if (kernel == 0 || kernel % 2 == 0) throw DomainError("cnn kernel must be odd");
    std::size_t h = input.height, w = input.width;
    for (std::size_t i = 0; i < filters.size(); ++i) {
      if (filters[i] == 0) throw DomainError("zero-width conv block");
      h /= 2;
      w /= 2;
      if (h == 0 || w == 0) throw DomainError("input " + input.str() + " too small for the conv stack");
    }
  }
}

std::size_t ClassifierSpec::flat_width() const {
  if (kind == ClassifierKind::Mlp) return input.numel();
  std::size_t h = input.height, w = input.width;
  for (std::size_t i = 0; i < filters.size(); ++i) h /= 2, w /= 2;
  return filters.back() * h * w;
}

std::size_t ClassifierSpec::parameter_count() const {
  std::size_t n = 0;
  if (kind == ClassifierKind::Cnn) {
    std::size_t in_ch = input.channels;
    for (auto f : filters) {
      n += f * in_ch * kernel * kernel + f;
      in_ch = f;
    }
  }
  std::size_t in = flat_width();
  for (auto h : hidden) {
    n += in * h + h;
    in = h;
  }
  return n + in * classes + classes;
}

std::string ClassifierSpec::descriptor() const {
  return std::string("classifier kind=") + (kind == ClassifierKind::Mlp ? "mlp" : "cnn") + " input=" + input.str() +
         " hidden=" + join(hidden) + " filters=" + join(filters) + " kernel=" + std::to_string(kernel) +
         " classes=" + std::to_string(classes) + " slope=" + fmt_double(slope);
}

ClassifierSpec ClassifierSpec::from_descriptor(const std::string& descriptor) {
  const auto f = parse_descriptor(descriptor);
  if (f.count("") == 0 || f.at("") != "classifier") throw FormatError("not a classifier descriptor");
  ClassifierSpec s;
  const auto& kind = field(f, "kind");
  if (kind == "mlp") {
    s.kind = ClassifierKind::Mlp;
  } else if (kind == "cnn") {
    s.kind = ClassifierKind::Cnn;
  } else {
    throw FormatError("unknown classifier kind '" + kind + "'");
  }
  s.input = ImageShape::parse(field(f, "input"));
  s.hidden = split_sizes(field(f, "hidden"));
  s.filters = split_sizes(field(f, "filters"));
  s.kernel = std::stoul(field(f, "kernel"));
  s.classes = std::stoul(field(f, "classes"));
  s.slope = std::stod(field(f, "slope"));
  s.validate();
  return s;
}

Classifier::Classifier(ClassifierSpec spec, Rng& init) : spec_(std::move(spec)) {
  spec_.validate();
  params_ = classifier_layout(spec_, &init);
  track(params_, true);
}

Classifier::Classifier(ClassifierSpec spec, std::vector<NamedTensor> params) : spec_(std::move(spec)) {
  spec_.validate();
  check_layout(classifier_layout(spec_, nullptr), params);
  params_ = std::move(params);
  track(params_, true);
}

ClassifierOutput Classifier::forward(const Tensor& batch) const {
  const auto& in = spec_.input;
  if (batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height || batch.dim(3) != in.width) {
    throw DimensionError("classifier expects B x " + in.str() + ", got " + shape_str(batch.shape()));
  }
  const std::size_t b = batch.dim(0);
  std::size_t k = 0;
  Tensor x = batch;
  if (spec_.kind == ClassifierKind::Cnn) {
    for (std::size_t i = 0; i < spec_.filters.size(); ++i, k += 2) {
      x = conv2d(x, params_[k].value, 1, spec_.kernel / 2);
      x = add_channel_bias(x, params_[k + 1].value);
      x = leaky_relu(x, spec_.slope);
      x = max_pool2d(x, 2);
    }
  }
  x = reshape(x, {b, spec_.flat_width()});
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i, k += 2) {
    x = leaky_relu(affine(x, params_[k].value, params_[k + 1].value), spec_.slope);
  }
  Tensor logits = affine(x, params_[k].value, params_[k + 1].value);
  return {logits, x};
}

std::vector<Tensor> Classifier::parameters() const { return values(params_); }

std::size_t Classifier::parameter_count() const { return count(params_); }

void Classifier::freeze() {
  frozen_ = true;
  track(params_, false);
}

void Classifier::unfreeze() {
  frozen_ = false;
  track(params_, true);
}

Classifier Classifier::tracked_alias() const {
  Classifier out = *this;
  for (auto& p : out.params_) p.value = p.value.detach().set_requires_grad(true);
  return out;
}

Classifier Classifier::clone() const {
  Classifier out = *this;
  for (auto& p : out.params_) p.value = p.value.clone().set_requires_grad(!frozen_);
  return out;
}

void Classifier::zero_output_layer() {
  const std::size_t n = params_.size();
  for (std::size_t i = n - 2; i < n; ++i) {
    auto d = params_[i].value.mutable_data();
    std::fill(d.begin(), d.end(), 0.0f);
  }
}

void GeneratorSpec::validate() const {
  if (z_dim == 0) throw DomainError("latent dimension must be positive");
  if (classes < 1) throw DomainError("generator needs at least one class");
  if (condition == ConditionMode::Hidden && condition_dim == 0) throw DomainError("condition_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("dropout rate must lie in [0, 1)");
  if (output.numel() == 0) throw DomainError("generator output shape is empty");
  for (auto h : hidden)
    if (h == 0) throw DomainError("zero-width hidden layer");
}

std::size_t GeneratorSpec::parameter_count() const {
  std::size_t n = 0, in = z_dim + encoded_dim();
  for (auto h : hidden) {
    n += in * h + h;
    in = h;
  }
  return n + in * output.numel() + output.numel();
}

std::string GeneratorSpec::descriptor() const {
  return "generator z=" + std::to_string(z_dim) + " condition=" +
         (condition == ConditionMode::Hot ? "hot" : "hidden") + " cdim=" + std::to_string(condition_dim) +
         " classes=" + std::to_string(classes) + " dropout=" + fmt_double(dropout) + " output=" + output.str() +
         " hidden=" + join(hidden) + " slope=" + fmt_double(slope) + " cseed=" + std::to_string(condition_seed);
}

GeneratorSpec GeneratorSpec::from_descriptor(const std::string& descriptor) {
  const auto f = parse_descriptor(descriptor);
  if (f.count("") == 0 || f.at("") != "generator") throw FormatError("not a generator descriptor");
  GeneratorSpec s;
  s.z_dim = std::stoul(field(f, "z"));
  const auto& mode = field(f, "condition");
  if (mode == "hot") {
    s.condition = ConditionMode::Hot;
  } else if (mode == "hidden") {
    s.condition = ConditionMode::Hidden;
  } else {
    throw FormatError("unknown condition mode '" + mode + "'");
  }
  s.condition_dim = std::stoul(field(f, "cdim"));
  s.classes = std::stoul(field(f, "classes"));
  s.dropout = std::stod(field(f, "dropout"));
  s.output = ImageShape::parse(field(f, "output"));
  s.hidden = split_sizes(field(f, "hidden"));
  s.slope = std::stod(field(f, "slope"));
  s.condition_seed = std::stoull(field(f, "cseed"));
  s.validate();
  return s;
}

namespace {

// n x d rows; Gram-Schmidt when n <= d, otherwise unit-normalized rows.
std::vector<std::vector<double>> projection(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, "condition-projection"));
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = rows[i];
    for (auto& x : r) x = rng.normal();
    if (n <= d) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += r[k] * rows[j][k];
        for (std::size_t k = 0; k < d; ++k) r[k] -= dot * rows[j][k];
      }
    }
    double norm = 0;
    for (auto x : r) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : r) x /= norm;
  }
  return rows;
}

}  // namespace

ConditionVector make_condition(std::size_t label, const GeneratorSpec& spec, std::uint64_t seed) {
  if (label >= spec.classes) {
    throw DomainError("condition label " + std::to_string(label) + " outside [0, " + std::to_string(spec.classes) +
                      ")");
  }
  ConditionVector c;
  c.label = label;
  if (spec.condition == ConditionMode::Hot) {
    c.encoded.assign(spec.classes, 0.0f);
    c.encoded[label] = 1.0f;
  } else {
    const auto rows = projection(spec.classes, spec.condition_dim, seed);
    c.encoded.assign(rows[label].begin(), rows[label].end());
  }
  return c;
}

Generator::Generator(GeneratorSpec spec, Rng& init) : spec_(std::move(spec)) {
  spec_.validate();
  params_ = generator_layout(spec_, &init);
  track(params_, true);
  for (std::size_t k = 0; k < spec_.classes; ++k) conditions_.push_back(make_condition(k, spec_, spec_.condition_seed));
}

Generator::Generator(GeneratorSpec spec, std::vector<NamedTensor> params) : spec_(std::move(spec)) {
  spec_.validate();
  check_layout(generator_layout(spec_, nullptr), params);
  params_ = std::move(params);
  track(params_, true);
  for (std::size_t k = 0; k < spec_.classes; ++k) conditions_.push_back(make_condition(k, spec_, spec_.condition_seed));
}

const ConditionVector& Generator::condition(std::size_t label) const {
  if (label >= conditions_.size()) throw DomainError("condition label " + std::to_string(label) + " out of range");
  return conditions_[label];
}

Tensor Generator::forward(const Tensor& z, std::span<const ConditionVector> cond, std::optional<Mode> mode,
                          Rng* rng) const {
  if (!mode) throw ContractError("generator forward needs an explicit train/eval mode");
  if (*mode == Mode::Train && spec_.dropout > 0 && rng == nullptr) {
    throw ContractError("train-mode generator pass needs a dropout rng");
  }
  if (z.rank() != 2 || z.dim(1) != spec_.z_dim) {
    throw DimensionError("latent batch must be B x " + std::to_string(spec_.z_dim) + ", got " + shape_str(z.shape()));
  }
  const std::size_t b = z.dim(0);
  if (cond.size() != b) {
    throw DimensionError("latent batch of " + std::to_string(b) + " with " + std::to_string(cond.size()) +
                         " condition vectors");
  }
  const std::size_t e = spec_.encoded_dim();
  std::vector<float> c(b * e);
  for (std::size_t i = 0; i < b; ++i) {
    if (cond[i].encoded.size() != e) throw DimensionError("condition vector width does not match generator");
    std::copy(cond[i].encoded.begin(), cond[i].encoded.end(), c.begin() + static_cast<std::ptrdiff_t>(i * e));
  }
  Tensor x = concat_cols(z, Tensor({b, e}, std::move(c)));
  std::size_t k = 0;
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i, k += 2) {
    x = leaky_relu(affine(x, params_[k].value, params_[k + 1].value), spec_.slope);
    if (*mode == Mode::Train && spec_.dropout > 0) x = dropout(x, spec_.dropout, *rng);
  }
  x = sigmoid(affine(x, params_[k].value, params_[k + 1].value));
  return reshape(x, {b, spec_.output.channels, spec_.output.height, spec_.output.width});
}

Tensor Generator::sample_latent(std::size_t batch, Rng& rng) const {
  std::vector<float> z(batch * spec_.z_dim);
  for (auto& v : z) v = static_cast<float>(rng.normal());
  return Tensor({batch, spec_.z_dim}, std::move(z));
}

Tensor Generator::sample(std::span<const std::size_t> labels, Mode mode, Rng& rng) const {
  std::vector<ConditionVector> cond;
  cond.reserve(labels.size());
  for (auto l : labels) cond.push_back(condition(l));
  Tensor z = sample_latent(labels.size(), rng);
  return forward(z, cond, mode, &rng);
}

std::vector<Tensor> Generator::parameters() const { return values(params_); }

std::size_t Generator::parameter_count() const { return count(params_); }

Checkpoint to_checkpoint(const Classifier& clf) {
  Checkpoint c;
  c.architecture = clf.spec().descriptor();
  for (const auto& p : clf.named_parameters()) c.tensors.push_back({p.name, p.value.detach()});
  return c;
}

Checkpoint to_checkpoint(const Generator& gen) {
  Checkpoint c;
  c.architecture = gen.spec().descriptor();
  for (const auto& p : gen.named_parameters()) c.tensors.push_back({p.name, p.value.detach()});
  return c;
}

Classifier classifier_from_checkpoint(const Checkpoint& ckpt) {
  return Classifier(ClassifierSpec::from_descriptor(ckpt.architecture), ckpt.tensors);
}

Generator generator_from_checkpoint(const Checkpoint& ckpt) {
  return Generator(GeneratorSpec::from_descriptor(ckpt.architecture), ckpt.tensors);
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows expects a rank-2 tensor");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  auto d = scores.data();
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (d[r * cols + c] > d[r * cols + best]) best = c;
    out[r] = best;
  }
  return out;
}

double classifier_accuracy(const Classifier& clf, const Dataset& data, std::size_t batch) {
  NoGradGuard<float> no_grad;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) idx.push_back(i);
    const auto pred = argmax_rows(clf.forward(data.batch(idx)).logits);
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == data.labels[idx[i]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ninv
