#pragma once

#include <string>

#include "mmtod/tensor.hpp"

namespace mmtod {

// Lossless 8-bit image IO. Single-channel images are stored as binary PGM
// (P5), three-channel as binary PPM (P6). Pixels map linearly between
// [0,1] doubles and [0,255] bytes (round on write).

// Returns [1,H,W] or [3,H,W]. Throws on missing file or malformed header.
Tensor read_image(const std::string& path);

// Writes PGM for 1-channel input, PPM for 3-channel. Values are clamped to
// [0,1] before quantization.
void write_image(const std::string& path, const Tensor& image);

// Bilinear resize of a [C,H,W] image to [C,out_h,out_w].
Tensor resize_bilinear(const Tensor& image, int out_w, int out_h);

}  // namespace mmtod
