#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ninv/csv.hpp"
#include "ninv/data.hpp"
#include "ninv/inversion.hpp"
#include "ninv/tensor.hpp"

namespace ninv {

inline constexpr std::size_t kSsimWindow = 7;

/// Mean local SSIM over every 7x7 window fully inside the image (stride 1),
/// uniform weights, C1 = 0.01^2, C2 = 0.03^2, dynamic range 1; channels are
/// scored separately and averaged.
double ssim(std::span<const float> a, std::span<const float> b, const ImageShape& shape);

/// a and b are C x H x W or 1 x C x H x W.
double ssim(const Tensor& a, const Tensor& b);

struct PrivacyMatch {
  std::size_t recon = 0;
  std::size_t match = 0;  // index of the best reference image, lowest on ties
  double ssim = 0;
};

struct PrivacyReport {
  std::string reference;
  std::vector<PrivacyMatch> matches;
  double mean_ssim = 0;
  double max_ssim = 0;
};

/// Best-matching reference image per reconstruction. Work is spread over
/// threads (0 = hardware concurrency); results do not depend on the count.
PrivacyReport privacy_score(const Tensor& recons, const Tensor& reference, const std::string& reference_name,
                            std::size_t threads = 0);

/// Rows (recon_id, match_id, ssim) followed by "mean" and "max" summary rows.
void write_privacy_report(const PrivacyReport& report, const std::filesystem::path& path);

struct ReconstructionResult {
  InversionRun run;
  Tensor reconstructions;  // per_class samples for each class, class-major
  std::vector<std::size_t> labels;
};

/// Trains gen against the frozen classifier with the full reconstruction
/// loss, then draws per_class eval-mode samples for every class.
ReconstructionResult reconstruct(Generator& gen, const Classifier& clf, const ReconConfig& cfg, std::size_t per_class,
                                 Rng& rng, CsvWriter* log = nullptr);

}  // namespace ninv
