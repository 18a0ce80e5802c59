#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

// Minimal PNG writer: 8-bit grayscale (channels = 1) or RGB (channels = 3),
// interleaved row-major pixels. Atomic (temp file + rename).
void write_png(const std::string& path, const std::vector<uint8_t>& pixels, int width,
               int height, int channels);

// clamp((x + 1) / 2) * 255, rounded to nearest
uint8_t value_to_byte(float x);

// image: [C,H,W] or [1,C,H,W], C = 1 or 3
void save_image_png(const std::string& path, const Tensor& image);

// batch: [N,C,H,W]; images tiled left-to-right, top-to-bottom with a 1-pixel
// mid-gray separator.
void save_contact_sheet(const std::string& path, const Tensor& batch, int cols);

}  // namespace hkd
