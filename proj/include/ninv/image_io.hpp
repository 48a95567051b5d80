#pragma once

#include <filesystem>

#include "ninv/tensor.hpp"

namespace ninv {

/// Tiles N x C x H x W images row-major into a grid with 1-px black
/// separators, ceil(N / cols) rows. C == 1 writes binary PGM (P5), C == 3
/// binary PPM (P6); maxval 255, pixels rounded from [0, 1].
void write_pgm_grid(const Tensor& images, std::size_t cols, const std::filesystem::path& path);

}  // namespace ninv
