#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <filesystem>
#include <fstream>

#include "ninv/autodiff.hpp"
#include "ninv/losses.hpp"
#include "ninv/ops.hpp"
#include "ninv/privacy.hpp"
#include "support/fixtures.hpp"

using namespace ninv;
using ninv::testing::trained_bars_mlp;

namespace {

std::vector<float> noise_image(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return v;
}

// Two-pass window statistics, no running sums.
double ssim_oracle(const std::vector<float>& a, const std::vector<float>& b, const ImageShape& s) {
  const std::size_t k = 7;
  double total = 0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    double channel = 0;
    std::size_t windows = 0;
    for (std::size_t y = 0; y + k <= s.height; ++y)
      for (std::size_t x = 0; x + k <= s.width; ++x) {
        auto at = [&](const std::vector<float>& img, std::size_t dy, std::size_t dx) {
          return static_cast<double>(img[(c * s.height + y + dy) * s.width + x + dx]);
        };
        double ma = 0, mb = 0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) ma += at(a, dy, dx), mb += at(b, dy, dx);
        ma /= 49.0, mb /= 49.0;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const double da = at(a, dy, dx) - ma, db = at(b, dy, dx) - mb;
            va += da * da, vb += db * db, cov += da * db;
          }
        va /= 49.0, vb /= 49.0, cov /= 49.0;
        const double c1 = 1e-4, c2 = 9e-4;
        channel += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    total += channel / static_cast<double>(windows);
  }
  return total / static_cast<double>(s.channels);
}

Tensor stack(const std::vector<std::vector<float>>& images, const ImageShape& s) {
  std::vector<float> flat;
  for (const auto& im : images) flat.insert(flat.end(), im.begin(), im.end());
  return Tensor({images.size(), s.channels, s.height, s.width}, flat);
}

}  // namespace

TEST(Ssim, IdentityIsOne) {
  Rng rng(1);
  for (const ImageShape s : {ImageShape{1, 28, 28}, ImageShape{3, 12, 12}, ImageShape{1, 7, 7}}) {
    const auto a = noise_image(rng, s.numel());
    EXPECT_NEAR(ssim(a, a, s), 1.0, 1e-9) << s.str();
  }
}

TEST(Ssim, ConstantImagesAreIdentical) {
  const ImageShape s{1, 12, 12};
  const std::vector<float> a(s.numel(), 0.5f);
  EXPECT_NEAR(ssim(a, a, s), 1.0, 1e-12);
}

TEST(Ssim, SymmetricAndMatchesLoopOracle) {
  Rng rng(2);
  for (const ImageShape s : {ImageShape{1, 28, 28}, ImageShape{3, 12, 12}, ImageShape{1, 9, 13}}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto a = noise_image(rng, s.numel());
      auto b = a;
      for (auto& v : b) v = std::clamp(v + static_cast<float>(rng.normal(0, 0.2)), 0.0f, 1.0f);
      const double ab = ssim(a, b, s), ba = ssim(b, a, s);
      EXPECT_LT(std::abs(ab - ba), 1e-9);
      EXPECT_NEAR(ab, ssim_oracle(a, b, s), 1e-9);
      EXPECT_GE(ab, -1.0);
      EXPECT_LE(ab, 1.0);
    }
  }
}

TEST(Ssim, InvertedImageScoresNegative) {
  Rng rng(3);
  const ImageShape s{1, 12, 12};
  const auto a = noise_image(rng, s.numel());
  auto b = a;
  for (auto& v : b) v = 1.0f - v;
  const double v = ssim(a, b, s);
  EXPECT_LT(v, 0.0);
  EXPECT_GE(v, -1.0);
}

TEST(Ssim, IndependentNoiseAveragesNearZero) {
  Rng rng(4);
  const ImageShape s{1, 28, 28};
  double sum = 0;
  for (int i = 0; i < 100; ++i) sum += ssim(noise_image(rng, s.numel()), noise_image(rng, s.numel()), s);
  EXPECT_LT(std::abs(sum / 100.0), 0.1);
}

TEST(Ssim, RejectsSmallOrMismatchedImages) {
  const std::vector<float> small(36, 0.5f);
  EXPECT_THROW(ssim(small, small, ImageShape{1, 6, 6}), DimensionError);
  EXPECT_THROW(ssim(Tensor::zeros({1, 12, 12}), Tensor::zeros({1, 12, 11})), DimensionError);
  EXPECT_NEAR(ssim(Tensor::zeros({1, 1, 8, 8}), Tensor::zeros({1, 8, 8})), 1.0, 1e-12);
}

TEST(PrivacyScore, IdenticalSetsMatchThemselves) {
  auto data = synth_dataset(SynthSpec{SynthFamily::Bars, 3, {1, 12, 12}, 0.1, 5}, 30, 3).first;
  auto report = privacy_score(data.images, data.images, "train");
  EXPECT_EQ(report.reference, "train");
  ASSERT_EQ(report.matches.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(report.matches[i].recon, i);
    EXPECT_EQ(report.matches[i].match, i);
  }
  EXPECT_NEAR(report.mean_ssim, 1.0, 1e-9);
  EXPECT_NEAR(report.max_ssim, 1.0, 1e-9);
}

TEST(PrivacyScore, TiesGoToLowestIndex) {
  Rng rng(6);
  const ImageShape s{1, 12, 12};
  const auto a = noise_image(rng, s.numel()), b = noise_image(rng, s.numel());
  const auto report = privacy_score(stack({a}, s), stack({b, a, a}, s), "dup");
  EXPECT_EQ(report.matches[0].match, 1u);
}

TEST(PrivacyScore, BestMatchDominatesAndIsThreadIndependent) {
  Rng rng(7);
  const ImageShape s{1, 12, 12};
  std::vector<std::vector<float>> recon, ref;
  for (int i = 0; i < 13; ++i) recon.push_back(noise_image(rng, s.numel()));
  for (int i = 0; i < 20; ++i) ref.push_back(noise_image(rng, s.numel()));
  const auto one = privacy_score(stack(recon, s), stack(ref, s), "r", 1);
  const auto many = privacy_score(stack(recon, s), stack(ref, s), "r", 4);
  for (std::size_t i = 0; i < recon.size(); ++i) {
    EXPECT_EQ(one.matches[i].match, many.matches[i].match);
    EXPECT_EQ(one.matches[i].ssim, many.matches[i].ssim);
    for (const auto& r : ref) EXPECT_GE(one.matches[i].ssim, ssim(recon[i], r, s));
    EXPECT_NEAR(one.matches[i].ssim, ssim(recon[i], ref[one.matches[i].match], s), 1e-12);
  }
  EXPECT_EQ(one.mean_ssim, many.mean_ssim);
}

TEST(PrivacyScore, NoiseAgainstStructuredReferenceScoresLow) {
  Rng rng(8);
  const ImageShape s{1, 28, 28};
  auto ref = synth_dataset(SynthSpec{SynthFamily::Bars, 3, s, 0.1, 8}, 100, 3).first;
  std::vector<std::vector<float>> recon;
  for (int i = 0; i < 50; ++i) recon.push_back(noise_image(rng, s.numel()));
  EXPECT_LT(privacy_score(stack(recon, s), ref.images, "bars").mean_ssim, 0.2);
}

TEST(PrivacyScore, RejectsShapeMismatch) {
  EXPECT_THROW(privacy_score(Tensor::zeros({2, 1, 12, 12}), Tensor::zeros({2, 1, 10, 12}), "x"), DimensionError);
  EXPECT_THROW(privacy_score(Tensor::zeros({2, 144}), Tensor::zeros({2, 144}), "x"), DimensionError);
}

TEST(PrivacyReport, CsvHasOneRowPerReconstructionPlusSummary) {
  auto data = synth_dataset(SynthSpec{SynthFamily::Bars, 3, {1, 12, 12}, 0.1, 9}, 12, 3);
  const auto report = privacy_score(data.second.images, data.first.images, "train");
  const auto path = std::filesystem::temp_directory_path() / "ninv_privacy_report.csv";
  write_privacy_report(report, path);
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 1u + 3u + 2u);
  EXPECT_EQ(lines[0], "recon_id,match_id,ssim\r");
  EXPECT_EQ(lines[1].rfind("0," + std::to_string(report.matches[0].match) + ",", 0), 0u);
  EXPECT_EQ(lines[5].rfind("max,", 0), 0u);
  EXPECT_EQ(lines[4].rfind("mean,train,", 0), 0u);
}

namespace {

Tensor random_batch(Rng& rng, std::size_t b, double lo, double hi) {
  std::vector<float> v(b * 144);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor({b, 1, 12, 12}, v);
}

}  // namespace

TEST(ReconstructionLoss, ZeroReconWeightsReduceToInversionLossBitwise) {
  auto fx = trained_bars_mlp(11, 60);
  fx.clf.freeze();
  ReconConfig cfg;
  cfg.alpha_pert = cfg.beta_pert = cfg.eta_var = cfg.eta_pix = cfg.eta_grad = 0;
  Rng rng(11);
  const auto images = random_batch(rng, 16, -0.2, 1.2);
  std::vector<std::size_t> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3;
  const double inv = inversion_loss(images, fx.clf, labels, cfg).total.item();
  const double rec = reconstruction_loss(images, fx.clf, labels, cfg, rng).total.item();
  EXPECT_EQ(std::memcmp(&inv, &rec, sizeof(double)), 0);
}

TEST(ReconstructionLoss, ConstantInRangeBatchHasNoVarOrPixTerm) {
  auto fx = trained_bars_mlp(12, 60);
  fx.clf.freeze();
  ReconConfig cfg;
  Rng rng(12);
  const Tensor images({8, 1, 12, 12}, std::vector<float>(8 * 144, 0.4f));
  const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2, 0, 1};
  Tape tape;
  const auto loss = reconstruction_loss(images, fx.clf, labels, cfg, rng);
  EXPECT_EQ(loss.terms.var, 0.0);
  EXPECT_EQ(loss.terms.pix, 0.0);
}

TEST(ReconstructionLoss, TotalMatchesTermByTermRecomputation) {
  auto fx = trained_bars_mlp(13, 60);
  fx.clf.freeze();
  ReconConfig cfg;
  cfg.eta_grad = 0.05;
  Rng data_rng(13);
  const auto images = random_batch(data_rng, 12, -0.1, 1.1);
  std::vector<std::size_t> labels(12);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i * 7) % 3;

  Rng rng(99), oracle_rng(99);
  Tape tape;
  const auto loss = reconstruction_loss(images, fx.clf, labels, cfg, rng);

  const auto out = fx.clf.forward(images);
  const auto targets = soft_targets<float>(labels, 3, cfg.smoothing);
  const double kl = kl_loss(softmax(out.logits), targets).item();
  const double ce = ce_loss(out.logits, labels).item();
  const double cosine = cosine_diversity_loss(out.features).item();
  const double ortho = ortho_loss(out.features).item();
  const auto pert_logits = fx.clf.forward(linf_perturb(images, cfg.eps_pert, oracle_rng)).logits;
  const double kl_pert = kl_loss(softmax(pert_logits), targets).item();
  const double ce_pert = ce_loss(pert_logits, labels).item();
  const double var = tv_loss(images).item();
  const double pix = pixel_loss(images).item();

  // Squared weight gradient of the summed true-label logits, first order only.
  const auto alias = fx.clf.tracked_alias();
  const auto params = alias.parameters();
  Tape inner;
  const auto logits = alias.forward(images).logits;
  const auto true_sum = sum(pick_cols(logits, labels));
  const auto grads = inner.gradients(true_sum, params);
  double grad = 0;
  for (const auto& g : grads)
    for (float v : g.data()) grad += static_cast<double>(v) * v;

  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-12, std::abs(b)); };
  EXPECT_LT(rel(loss.terms.kl, kl), 1e-6);
  EXPECT_LT(rel(loss.terms.ce, ce), 1e-6);
  EXPECT_LT(rel(loss.terms.cosine, cosine), 1e-6);
  EXPECT_LT(rel(loss.terms.ortho, ortho), 1e-6);
  EXPECT_LT(rel(loss.terms.kl_pert, kl_pert), 1e-6);
  EXPECT_LT(rel(loss.terms.ce_pert, ce_pert), 1e-6);
  EXPECT_LT(rel(loss.terms.var, var), 1e-6);
  EXPECT_LT(rel(loss.terms.pix, pix), 1e-6);
  EXPECT_LT(rel(loss.terms.grad, grad), 1e-5);
  const double expected = cfg.alpha * kl + cfg.beta * ce + cfg.gamma * cosine + cfg.delta * ortho +
                          cfg.alpha_pert * kl_pert + cfg.beta_pert * ce_pert + cfg.eta_var * var +
                          cfg.eta_pix * pix + cfg.eta_grad * grad;
  EXPECT_LT(rel(loss.terms.total, expected), 1e-6);
}

TEST(ReconConfigValidation, RejectsBadWeights) {
  ReconConfig cfg;
  cfg.eta_pix = std::numeric_limits<double>::infinity();
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = ReconConfig{};
  cfg.eps_pert = 1.5;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = ReconConfig{};
  cfg.alpha_pert = -1;
  EXPECT_THROW(cfg.validate(), DomainError);
  EXPECT_NO_THROW(ReconConfig{}.validate());
}
