#include "ninv/inversion.hpp"

#include <algorithm>
#include <cmath>

#include "ninv/autodiff.hpp"
#include "ninv/losses.hpp"
#include "ninv/ops.hpp"

namespace ninv {

namespace {

void check_weight(double w, const char* name) {
  if (!std::isfinite(w) || w < 0) throw DomainError(std::string(name) + " must be finite and non-negative");
}

Tensor weighted(const Tensor& term, double w) { return mul_scalar(term, w); }

std::vector<std::size_t> target_set(const Generator& gen, std::span<const std::size_t> labels) {
  std::vector<std::size_t> out(labels.begin(), labels.end());
  if (out.empty())
    for (std::size_t k = 0; k < gen.spec().classes; ++k) out.push_back(k);
  for (auto l : out)
    if (l >= gen.spec().classes) throw DomainError("target label " + std::to_string(l) + " unknown to the generator");
  return out;
}

void check_pairing(const Generator& gen, const Classifier& clf) {
  if (gen.spec().output != clf.spec().input) {
    throw DimensionError("generator emits " + gen.spec().output.str() + " but the classifier expects " +
                         clf.spec().input.str());
  }
  if (gen.spec().classes > clf.spec().classes) {
    throw DimensionError("generator conditions on more labels than the classifier outputs");
  }
}

}  // namespace

void InversionConfig::validate() const {
  check_weight(alpha, "alpha");
  check_weight(beta, "beta");
  check_weight(gamma, "gamma");
  check_weight(delta, "delta");
  if (!(smoothing >= 0 && smoothing < 1)) throw DomainError("smoothing must lie in [0, 1)");
  if (batch_size < 2) throw DomainError("inversion batch size must be at least 2");
  if (!(optim.learning_rate > 0)) throw DomainError("learning rate must be positive");
}

ReconConfig::ReconConfig(const InversionConfig& base) : InversionConfig(base) {}

void ReconConfig::validate() const {
  InversionConfig::validate();
  check_weight(alpha_pert, "alpha_pert");
  check_weight(beta_pert, "beta_pert");
  check_weight(eta_var, "eta_var");
  check_weight(eta_pix, "eta_pix");
  check_weight(eta_grad, "eta_grad");
  if (!(eps_pert >= 0 && eps_pert <= 1)) throw DomainError("eps_pert must lie in [0, 1]");
}

bool ReconConfig::has_recon_terms() const {
  return alpha_pert > 0 || beta_pert > 0 || eta_var > 0 || eta_pix > 0 || eta_grad > 0;
}

double LossBreakdown::weighted_sum(const ReconConfig& w) const {
  return w.alpha * kl + w.beta * ce + w.gamma * cosine + w.delta * ortho + w.alpha_pert * kl_pert +
         w.beta_pert * ce_pert + w.eta_var * var + w.eta_pix * pix + w.eta_grad * grad;
}

CompositeLoss inversion_loss(const Tensor& images, const Classifier& clf, std::span<const std::size_t> labels,
                             const InversionConfig& cfg) {
  if (labels.size() != images.dim(0)) throw DimensionError("one conditioning label per generated image required");
  const auto out = clf.forward(images);
  const auto target = soft_targets<float>(labels, clf.spec().classes, cfg.smoothing);
  const auto kl = kl_loss(softmax(out.logits), target);
  const auto ce = ce_loss(out.logits, labels);
  const auto cos = cosine_diversity_loss(out.features);
  const auto ortho = ortho_loss(out.features);

  CompositeLoss loss;
  loss.total = add(add(weighted(kl, cfg.alpha), weighted(ce, cfg.beta)),
                   add(weighted(cos, cfg.gamma), weighted(ortho, cfg.delta)));
  loss.terms.kl = kl.item();
  loss.terms.ce = ce.item();
  loss.terms.cosine = cos.item();
  loss.terms.ortho = ortho.item();
  loss.terms.total = loss.total.item();
  return loss;
}

CompositeLoss reconstruction_loss(const Tensor& images, const Classifier& clf, std::span<const std::size_t> labels,
                                  const ReconConfig& cfg, Rng& rng) {
  if (!clf.frozen()) throw ContractError("reconstruction requires a frozen classifier");
  CompositeLoss loss = inversion_loss(images, clf, labels, cfg);
  if (!cfg.has_recon_terms()) return loss;

  Tensor total = loss.total;
  if (cfg.alpha_pert > 0 || cfg.beta_pert > 0) {
    const auto perturbed = linf_perturb(images, cfg.eps_pert, rng);
    const auto logits = clf.forward(perturbed).logits;
    const auto kl = kl_loss(softmax(logits), soft_targets<float>(labels, clf.spec().classes, cfg.smoothing));
    const auto ce = ce_loss(logits, labels);
    total = add(total, add(weighted(kl, cfg.alpha_pert), weighted(ce, cfg.beta_pert)));
    loss.terms.kl_pert = kl.item();
    loss.terms.ce_pert = ce.item();
  }
  if (cfg.eta_var > 0) {
    const auto tv = tv_loss(images);
    total = add(total, weighted(tv, cfg.eta_var));
    loss.terms.var = tv.item();
  }
  if (cfg.eta_pix > 0) {
    const auto pix = pixel_loss(images);
    total = add(total, weighted(pix, cfg.eta_pix));
    loss.terms.pix = pix.item();
  }
  if (cfg.eta_grad > 0) {
    auto* tape = Tape::active();
    if (tape == nullptr) throw ContractError("gradient penalty needs an active tape");
    const Classifier alias = clf.tracked_alias();
    const auto params = alias.parameters();
    const std::vector<std::size_t> cols(labels.begin(), labels.end());
    const auto true_logits = sum(pick_cols(alias.forward(images).logits, cols));
    const auto penalty = grad_norm_sq<float>(*tape, true_logits, params);
    total = add(total, weighted(penalty, cfg.eta_grad));
    loss.terms.grad = penalty.item();
  }
  loss.total = total;
  loss.terms.total = total.item();
  return loss;
}

InversionState make_inversion_state(const Generator& gen, const InversionConfig& cfg) {
  const auto params = gen.parameters();
  return InversionState{make_optim_state(cfg.optim, params), 0};
}

namespace {

template <typename LossFn>
LossBreakdown generator_step(Generator& gen, const Classifier& clf, const InversionConfig& cfg, InversionState& state,
                             Rng& rng, LossFn&& loss_fn) {
  if (!clf.frozen()) throw ContractError("inversion requires a frozen classifier");
  check_pairing(gen, clf);
  const auto targets = target_set(gen, cfg.target_labels);
  std::vector<std::size_t> labels(cfg.batch_size);
  for (auto& l : labels) l = targets[rng.index(targets.size())];

  auto params = gen.parameters();
  std::vector<Tensor> grads;
  LossBreakdown terms;
  {
    Tape tape;
    const auto images = gen.sample(labels, Mode::Train, rng);
    CompositeLoss loss = loss_fn(images, labels);
    grads = tape.gradients(loss.total, params);
    terms = loss.terms;
  }
  optim_step(params, grads, state.optim);
  ++state.step;
  return terms;
}

}  // namespace

LossBreakdown inversion_step(Generator& gen, const Classifier& clf, const InversionConfig& cfg, InversionState& state,
                             Rng& rng) {
  return generator_step(gen, clf, cfg, state, rng, [&](const Tensor& images, const std::vector<std::size_t>& labels) {
    return inversion_loss(images, clf, labels, cfg);
  });
}

LossBreakdown reconstruction_step(Generator& gen, const Classifier& clf, const ReconConfig& cfg, InversionState& state,
                                  Rng& rng) {
  return generator_step(gen, clf, cfg, state, rng, [&](const Tensor& images, const std::vector<std::size_t>& labels) {
    return reconstruction_loss(images, clf, labels, cfg, rng);
  });
}

double inversion_accuracy(const Generator& gen, const Classifier& clf, std::size_t n_samples, Rng& rng,
                          std::span<const std::size_t> labels) {
  if (n_samples == 0) throw DomainError("inversion accuracy needs at least one sample");
  check_pairing(gen, clf);
  const auto targets = target_set(gen, labels);
  NoGradGuard<float> no_grad;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < n_samples; start += kChunk) {
    std::vector<std::size_t> batch;
    for (std::size_t i = start; i < std::min(n_samples, start + kChunk); ++i) batch.push_back(targets[i % targets.size()]);
    const auto pred = argmax_rows(clf.forward(gen.sample(batch, Mode::Eval, rng)).logits);
    for (std::size_t i = 0; i < batch.size(); ++i) correct += pred[i] == batch[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n_samples);
}

CsvSchema inversion_log_schema() {
  CsvSchema s;
  s.columns.push_back({"step", CsvType::Integer});
  for (const char* name : {"kl", "ce", "cosine", "ortho", "kl_pert", "ce_pert", "var", "pix", "grad", "total"}) {
    s.columns.push_back({name, CsvType::Real});
  }
  s.columns.push_back({"inversion_accuracy", CsvType::Text});
  return s;
}

CsvRow inversion_log_row(const InversionLogRow& row) {
  const auto& l = row.loss;
  return {static_cast<std::int64_t>(row.step),
          l.kl,
          l.ce,
          l.cosine,
          l.ortho,
          l.kl_pert,
          l.ce_pert,
          l.var,
          l.pix,
          l.grad,
          l.total,
          row.accuracy ? csv_field(*row.accuracy) : std::string()};
}

InversionRun run_inversion(Generator& gen, const Classifier& clf, const InversionConfig& cfg, Rng& rng,
                           CsvWriter* log, const ReconConfig* recon) {
  if (recon) {
    recon->validate();
  } else {
    cfg.validate();
  }
  auto state = make_inversion_state(gen, cfg);
  Rng eval_rng = rng.fork("inversion-eval");
  InversionRun run;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    InversionLogRow row;
    row.step = s;
    row.loss = recon ? reconstruction_step(gen, clf, *recon, state, rng) : inversion_step(gen, clf, cfg, state, rng);
    const bool last = s + 1 == cfg.steps;
    if (last || (cfg.eval_every > 0 && (s + 1) % cfg.eval_every == 0)) {
      row.accuracy = inversion_accuracy(gen, clf, cfg.eval_samples, eval_rng, cfg.target_labels);
      run.final_accuracy = *row.accuracy;
    }
    if (log) log->write(inversion_log_row(row));
    run.history.push_back(row);
  }
  if (cfg.steps == 0) run.final_accuracy = inversion_accuracy(gen, clf, cfg.eval_samples, eval_rng, cfg.target_labels);
  return run;
}

PcaResult pca_project(const Tensor& features, std::size_t k) {
  if (features.rank() != 2) throw DimensionError("pca expects N x d features");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (k < 1 || k > d || n <= k) throw DomainError("pca needs N > k >= 1 and k <= d");
  auto x = features.data();

  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[i * d + j];
  for (auto& m : mu) m /= static_cast<double>(n);
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double xa = x[i * d + a] - mu[a];
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += xa * (x[i * d + b] - mu[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) cov[b * d + a] = cov[a * d + b] /= static_cast<double>(n - 1);

  constexpr double kTol = 1e-8;
  constexpr std::size_t kMaxIter = 1000;
  PcaResult result;
  Rng rng(0x9e3779b97f4a7c15ull);
  double scale = 0;
  for (std::size_t a = 0; a < d; ++a) scale = std::max(scale, std::abs(cov[a * d + a]));

  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v(d), w(d);
    for (auto& e : v) e = rng.normal();
    auto orthonormalize = [&](std::vector<double>& u) {
      for (const auto& prev : result.components) {
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += u[j] * prev[j];
        for (std::size_t j = 0; j < d; ++j) u[j] -= dot * prev[j];
      }
      double norm = 0;
      for (auto e : u) norm += e * e;
      norm = std::sqrt(norm);
      if (norm > 0)
        for (auto& e : u) e /= norm;
      return norm;
    };
    orthonormalize(v);
    double lambda = 0;
    bool converged = false;
    std::size_t it = 0;
    while (it < kMaxIter) {
      ++it;
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0;
        for (std::size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
        w[a] = s;
      }
      double next = 0;
      for (std::size_t a = 0; a < d; ++a) next += v[a] * w[a];
      const double norm = orthonormalize(w);
      if (norm <= kTol * std::max(scale, 1e-300)) {
        // Remaining variance is numerically zero; any orthogonal direction will do.
        lambda = 0;
        converged = true;
        break;
      }
      double change = 0;
      for (std::size_t a = 0; a < d; ++a) change = std::max(change, std::abs(w[a] - v[a]));
      v = w;
      if (change < kTol || std::abs(next - lambda) <= kTol * std::abs(next)) {
        lambda = next;
        converged = true;
        break;
      }
      lambda = next;
    }
    result.iterations += it;
    if (!converged) {
      throw ConvergenceError("power iteration did not converge for component " + std::to_string(c), it);
    }
    // Rayleigh quotient of the final vector on the deflated matrix.
    double rq = 0;
    for (std::size_t a = 0; a < d; ++a) {
      double s = 0;
      for (std::size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
      rq += v[a] * s;
    }
    lambda = std::max(0.0, rq);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    result.explained_variance.push_back(lambda);
    result.components.push_back(v);
  }

  // Near-degenerate spectra can leave the deflated estimates slightly out of order.
  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return result.explained_variance[a] > result.explained_variance[b];
  });
  PcaResult sorted;
  sorted.iterations = result.iterations;
  for (auto c : order) {
    sorted.explained_variance.push_back(result.explained_variance[c]);
    sorted.components.push_back(result.components[c]);
  }
  result = std::move(sorted);

  std::vector<float> coords(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += (x[i * d + j] - mu[j]) * result.components[c][j];
      coords[i * k + c] = static_cast<float>(s);
    }
  result.coords = Tensor({n, k}, std::move(coords));
  return result;
}

}  // namespace ninv
