#include "ninv/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ninv {

void write_pgm_grid(const Tensor& images, std::size_t cols, const std::filesystem::path& path) {
  if (!images.defined() || images.rank() != 4) throw DimensionError("image grid expects N x C x H x W");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (c != 1 && c != 3) throw DimensionError("image grid supports 1 or 3 channels, got " + std::to_string(c));
  if (cols == 0) throw DomainError("grid needs at least one column");
  cols = std::min(cols, n);
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t gw = cols * w + (cols - 1), gh = rows * h + (rows - 1);

  std::vector<unsigned char> pixels(gw * gh * c, 0);
  auto src = images.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = (i / cols) * (h + 1), ox = (i % cols) * (w + 1);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const float v = std::clamp(src[((i * c + ch) * h + y) * w + x], 0.0f, 1.0f);
          pixels[((oy + y) * gw + (ox + x)) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (c == 1 ? "P5" : "P6") << "\n" << gw << " " << gh << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace ninv
