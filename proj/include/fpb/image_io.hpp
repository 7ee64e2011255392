#pragma once

#include <array>
#include <string>

#include "fpb/tensor.hpp"

namespace fpb {

// Per-channel RGB normalisation (ImageNet statistics).
inline constexpr std::array<real, 3> kPixelMean{0.485, 0.456, 0.406};
inline constexpr std::array<real, 3> kPixelStd{0.229, 0.224, 0.225};

// Decodes an image file, resizes it (bilinear) to height x width and returns
// a normalised RGB [3,H,W] tensor. Throws std::runtime_error on decode
// failure.
Tensor load_image(const std::string& path, int height, int width);

// Inverse of the normalisation, clamped to 8-bit, written as PNG/JPEG by
// extension.
void save_image(const Tensor& chw, const std::string& path);

// Writes a single-channel [H,W] map as a colour heat map of `height x width`
// blended over `image` (normalised [3,H',W'], may be empty).
void save_heatmap(const Tensor& map, const Tensor& image, int height, int width, const std::string& path);

}  // namespace fpb
