#include "ninv/privacy.hpp"

#include <algorithm>
#include <thread>

#include "ninv/autodiff.hpp"

namespace ninv {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// Summed-area table with a zero first row and column.
class Integral {
 public:
  Integral(std::size_t h, std::size_t w) : w_(w + 1), v_((h + 1) * (w + 1), 0.0) {}

  template <typename F>
  void fill(std::size_t h, std::size_t w, F&& value) {
    for (std::size_t y = 0; y < h; ++y) {
      double row = 0;
      for (std::size_t x = 0; x < w; ++x) {
        row += value(y, x);
        v_[(y + 1) * w_ + x + 1] = v_[y * w_ + x + 1] + row;
      }
    }
  }

  double window(std::size_t y, std::size_t x, std::size_t k) const {
    return v_[(y + k) * w_ + x + k] - v_[y * w_ + x + k] - v_[(y + k) * w_ + x] + v_[y * w_ + x];
  }

 private:
  std::size_t w_;
  std::vector<double> v_;
};

// Per-window mean and variance of one image, all channels.
struct WindowStats {
  std::vector<double> mean;
  std::vector<double> var;
};

void check_shape(const ImageShape& s) {
  if (s.height < kSsimWindow || s.width < kSsimWindow) {
    throw DimensionError("ssim needs images of at least 7x7, got " + s.str());
  }
}

WindowStats window_stats(std::span<const float> img, const ImageShape& s) {
  const std::size_t h = s.height, w = s.width, k = kSsimWindow;
  const std::size_t wy = h - k + 1, wx = w - k + 1;
  const double n = static_cast<double>(k * k);
  WindowStats st;
  st.mean.reserve(s.channels * wy * wx);
  st.var.reserve(s.channels * wy * wx);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const float* p = img.data() + c * h * w;
    Integral sum(h, w), sq(h, w);
    sum.fill(h, w, [&](std::size_t y, std::size_t x) { return static_cast<double>(p[y * w + x]); });
    sq.fill(h, w, [&](std::size_t y, std::size_t x) {
      const double v = p[y * w + x];
      return v * v;
    });
    for (std::size_t y = 0; y < wy; ++y)
      for (std::size_t x = 0; x < wx; ++x) {
        const double mu = sum.window(y, x, k) / n;
        st.mean.push_back(mu);
        st.var.push_back(sq.window(y, x, k) / n - mu * mu);
      }
  }
  return st;
}

double ssim_with_stats(std::span<const float> a, const WindowStats& sa, std::span<const float> b,
                       const WindowStats& sb, const ImageShape& s) {
  const std::size_t h = s.height, w = s.width, k = kSsimWindow;
  const std::size_t wy = h - k + 1, wx = w - k + 1;
  const double n = static_cast<double>(k * k);
  double total = 0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const float* pa = a.data() + c * h * w;
    const float* pb = b.data() + c * h * w;
    Integral cross(h, w);
    cross.fill(h, w, [&](std::size_t y, std::size_t x) {
      return static_cast<double>(pa[y * w + x]) * static_cast<double>(pb[y * w + x]);
    });
    double channel = 0;
    for (std::size_t y = 0; y < wy; ++y)
      for (std::size_t x = 0; x < wx; ++x) {
        const std::size_t i = (c * wy + y) * wx + x;
        const double ma = sa.mean[i], mb = sb.mean[i];
        const double cov = cross.window(y, x, k) / n - ma * mb;
        channel += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                   ((ma * ma + mb * mb + kC1) * (sa.var[i] + sb.var[i] + kC2));
      }
    total += channel / static_cast<double>(wy * wx);
  }
  return total / static_cast<double>(s.channels);
}

ImageShape image_shape_of(const Tensor& t) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3)};
  throw DimensionError("ssim expects a C x H x W image, got " + shape_str(t.shape()));
}

}  // namespace

double ssim(std::span<const float> a, std::span<const float> b, const ImageShape& shape) {
  check_shape(shape);
  if (a.size() != shape.numel() || b.size() != shape.numel()) {
    throw DimensionError("ssim inputs do not match shape " + shape.str());
  }
  return ssim_with_stats(a, window_stats(a, shape), b, window_stats(b, shape), shape);
}

double ssim(const Tensor& a, const Tensor& b) {
  const auto sa = image_shape_of(a), sb = image_shape_of(b);
  if (sa != sb) throw DimensionError("ssim shapes differ: " + sa.str() + " vs " + sb.str());
  return ssim(a.data(), b.data(), sa);
}

PrivacyReport privacy_score(const Tensor& recons, const Tensor& reference, const std::string& reference_name,
                            std::size_t threads) {
  if (recons.rank() != 4 || reference.rank() != 4) throw DimensionError("privacy_score expects N x C x H x W sets");
  const ImageShape s{recons.dim(1), recons.dim(2), recons.dim(3)};
  const ImageShape rs{reference.dim(1), reference.dim(2), reference.dim(3)};
  if (s != rs) throw DimensionError("reconstructions are " + s.str() + " but references are " + rs.str());
  check_shape(s);
  const std::size_t n = recons.dim(0), m = reference.dim(0), per = s.numel();

  auto image = [per](const Tensor& t, std::size_t i) { return t.data().subspan(i * per, per); };
  std::vector<WindowStats> ref_stats(m);
  for (std::size_t j = 0; j < m; ++j) ref_stats[j] = window_stats(image(reference, j), s);

  PrivacyReport report;
  report.reference = reference_name;
  report.matches.resize(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto a = image(recons, i);
      const auto sa = window_stats(a, s);
      PrivacyMatch best{i, 0, -2.0};
      for (std::size_t j = 0; j < m; ++j) {
        const double v = ssim_with_stats(a, sa, image(reference, j), ref_stats[j], s);
        if (v > best.ssim) best = {i, j, v};
      }
      report.matches[i] = best;
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  double sum = 0;
  report.max_ssim = -1.0;
  for (const auto& mt : report.matches) {
    sum += mt.ssim;
    report.max_ssim = std::max(report.max_ssim, mt.ssim);
  }
  report.mean_ssim = n ? sum / static_cast<double>(n) : 0.0;
  return report;
}

void write_privacy_report(const PrivacyReport& report, const std::filesystem::path& path) {
  CsvSchema schema{{{"recon_id", CsvType::Text}, {"match_id", CsvType::Text}, {"ssim", CsvType::Real}}};
  std::vector<CsvRow> rows;
  std::size_t best = 0;
  for (const auto& m : report.matches) {
    rows.push_back({std::to_string(m.recon), std::to_string(m.match), m.ssim});
    if (m.ssim > report.matches[best].ssim) best = m.recon;
  }
  rows.push_back({std::string("mean"), report.reference, report.mean_ssim});
  rows.push_back({std::string("max"), report.matches.empty() ? std::string() : std::to_string(report.matches[best].match),
                  report.max_ssim});
  write_csv(rows, schema, path);
}

ReconstructionResult reconstruct(Generator& gen, const Classifier& clf, const ReconConfig& cfg, std::size_t per_class,
                                 Rng& rng, CsvWriter* log) {
  ReconstructionResult result;
  result.run = run_inversion(gen, clf, cfg, rng, log, &cfg);
  for (std::size_t k = 0; k < gen.spec().classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) result.labels.push_back(k);
  NoGradGuard<float> guard;
  Rng sample_rng = rng.fork("reconstruction-samples");
  result.reconstructions = gen.sample(result.labels, Mode::Eval, sample_rng);
  return result;
}

}  // namespace ninv
