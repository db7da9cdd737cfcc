#pragma once

#include <string>

#include "axiseg/tensor.hpp"

namespace axiseg {

/// Writes a binary PGM ("P5\n<w> <h>\n255\n" + w*h bytes, row major).
/// `raster` is [H x W] or [1 x H x W] with values in [0, 1]; each value is
/// quantized as round(v * 255).
void write_pgm(const Tensor& raster, const std::string& path);

/// Reads a binary (P5, maxval 255) PGM and returns [1 x H x W] values in
/// [0, 1] (byte / 255).
Tensor read_pgm(const std::string& path);

}  // namespace axiseg
