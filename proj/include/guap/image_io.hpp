#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "guap/tensor.hpp"

namespace guap {

/// Decodes a PNG into (channels, h, w) floats in [0, 1]. Returns nullopt if
/// the file cannot be decoded.
std::optional<Tensor<float>> read_png(const std::filesystem::path& path, int64_t channels = 3);

/// Encodes (c, h, w) floats in [0, 1] (c = 1 or 3); each pixel is repeated
/// scale x scale times.
void write_png(const std::filesystem::path& path, const Tensor<float>& image, int64_t scale = 1);

/// Bilinear resize of (c, h, w) to (c, out_h, out_w), half-pixel centres.
Tensor<float> resize_bilinear(const Tensor<float>& image, int64_t out_h, int64_t out_w);

}  // namespace guap
