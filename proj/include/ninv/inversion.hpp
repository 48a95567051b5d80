#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ninv/csv.hpp"
#include "ninv/models.hpp"
#include "ninv/optim.hpp"
#include "ninv/rng.hpp"

namespace ninv {

struct InversionConfig {
  double alpha = 1.0;   // KL against the softened conditioning distribution
  double beta = 1.0;    // cross-entropy
  double gamma = 0.5;   // cosine diversity of penultimate features
  double delta = 0.1;   // orthogonality of penultimate features
  double smoothing = 0.1;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  OptimConfig optim{};
  double target_accuracy = 0.9;
  std::size_t eval_every = 250;  // 0 disables periodic accuracy sampling
  std::size_t eval_samples = 300;
  // Conditioning labels drawn uniformly from this set; empty means all.
  std::vector<std::size_t> target_labels;

  void validate() const;
};

/// Inversion plus the reconstruction-only terms.
struct ReconConfig : InversionConfig {
  double alpha_pert = 1.0;  // KL on the perturbed batch
  double beta_pert = 1.0;   // CE on the perturbed batch
  double eta_var = 0.1;     // total variation
  double eta_pix = 1.0;     // pixel range hinge
  double eta_grad = 0.01;   // squared weight-gradient norm of the true-label logits
  double eps_pert = 0.05;

  ReconConfig() { gamma = 0.25; }
  explicit ReconConfig(const InversionConfig& base);
  void validate() const;
  bool has_recon_terms() const;
};

struct LossBreakdown {
  double kl = 0, ce = 0, cosine = 0, ortho = 0;
  double kl_pert = 0, ce_pert = 0, var = 0, pix = 0, grad = 0;
  double total = 0;

  // Σ weight_i * term_i in double.
  double weighted_sum(const ReconConfig& w) const;
};

struct CompositeLoss {
  Tensor total;  // differentiable scalar
  LossBreakdown terms;
};

/// L_Inv = alpha KL + beta CE + gamma cosine + delta ortho on the batch's
/// penultimate features, against the conditioning labels.
CompositeLoss inversion_loss(const Tensor& images, const Classifier& clf, std::span<const std::size_t> labels,
                             const InversionConfig& cfg);

/// L_Inv plus the perturbed, TV, pixel and gradient-penalty terms. Terms
/// with zero weight are not evaluated (reported as 0), so with every
/// reconstruction weight at zero the total is the inversion loss bit for
/// bit. The gradient penalty needs an active tape and rng draws the
/// perturbation.
CompositeLoss reconstruction_loss(const Tensor& images, const Classifier& clf, std::span<const std::size_t> labels,
                                  const ReconConfig& cfg, Rng& rng);

struct InversionState {
  OptimState optim;
  std::size_t step = 0;
};

InversionState make_inversion_state(const Generator& gen, const InversionConfig& cfg);

/// One generator update. The classifier must be frozen; it is never written.
LossBreakdown inversion_step(Generator& gen, const Classifier& clf, const InversionConfig& cfg, InversionState& state,
                             Rng& rng);
LossBreakdown reconstruction_step(Generator& gen, const Classifier& clf, const ReconConfig& cfg, InversionState& state,
                                  Rng& rng);

/// Fraction of eval-mode samples (labels cycling over the target set) whose
/// classifier argmax equals the conditioning label.
double inversion_accuracy(const Generator& gen, const Classifier& clf, std::size_t n_samples, Rng& rng,
                          std::span<const std::size_t> labels = {});

struct InversionLogRow {
  std::size_t step = 0;
  LossBreakdown loss;
  std::optional<double> accuracy;
};

CsvSchema inversion_log_schema();
CsvRow inversion_log_row(const InversionLogRow& row);

struct InversionRun {
  std::vector<InversionLogRow> history;
  double final_accuracy = 0;
};

/// Runs cfg.steps updates (reconstruction terms when recon is given),
/// sampling accuracy every eval_every steps and at the end. Rows are also
/// streamed to log when non-null.
InversionRun run_inversion(Generator& gen, const Classifier& clf, const InversionConfig& cfg, Rng& rng,
                           CsvWriter* log = nullptr, const ReconConfig* recon = nullptr);

struct PcaResult {
  Tensor coords;  // N x k
  std::vector<double> explained_variance;
  std::vector<std::vector<double>> components;  // k unit vectors of length d
  std::size_t iterations = 0;
};

/// Top-k principal components by power iteration with deflation
/// (tolerance 1e-8, at most 1000 iterations per component).
PcaResult pca_project(const Tensor& features, std::size_t k);

}  // namespace ninv
