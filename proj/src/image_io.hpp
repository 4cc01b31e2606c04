#pragma once

#include <string>

#include "tensor.hpp"

namespace dwtnet {

// 8-bit RGB PNG <-> 3 x H x W tensor in [0, 1]. Reading converts palette,
// gray and alpha variants to RGB; writing rounds to the nearest 8-bit level.
Tensor read_png_rgb8(const std::string& path);
void write_png_rgb8(const std::string& path, const Tensor& img01);

// 8-bit grayscale writer for masks (1 x H x W or H x W in [0, 1]).
void write_png_gray8(const std::string& path, const Tensor& img01);

}  // namespace dwtnet
