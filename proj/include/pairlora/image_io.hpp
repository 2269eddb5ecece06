#pragma once

// PNG I/O for [3,H,W] tensors with values in [-1,1], plus the 8-bit
// quantization used whenever metrics must match emitted artifacts exactly.

#include <string>
#include <vector>

#include "pairlora/tensor.hpp"

namespace pairlora {

// [-1,1] float -> 8-bit and back; clamps out-of-range values
uint8_t quantize_px(float v);
float dequantize_px(uint8_t v);

// in-memory round trip through 8 bits (identical to PNG pixel content)
Tensor quantize_image(const Tensor& img);

void write_png(const std::string& path, const Tensor& img);
Tensor read_png(const std::string& path);

// tile images (all same shape) into a rows x cols mosaic with a 1px separator
Tensor make_grid(const std::vector<Tensor>& images, int cols);

}  // namespace pairlora
