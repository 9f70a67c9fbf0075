#pragma once

#include <string>

#include "sfcn/tensor.hpp"

namespace sfcn {

// 8-bit RGB PNG payloads; tensor layout [3,H,W] with values in [0,1],
// quantized by round(v * 255) on write.
void write_png_rgb8(const std::string& path, const Tensor& image);
Tensor read_png_rgb8(const std::string& path);

}  // namespace sfcn
