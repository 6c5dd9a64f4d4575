#pragma once

#include <string>

#include "stratgen/tensor.hpp"

namespace stratgen {

// Binary PPM (P6, maxval 255). Images are [H,W,3] float tensors in [0,1];
// writing quantizes round-to-nearest, so a round trip moves each channel by
// at most 1/255. Parse failures report the byte offset.
void write_ppm(const Tensor& image, const std::string& path);
Tensor read_ppm(const std::string& path);

}  // namespace stratgen
