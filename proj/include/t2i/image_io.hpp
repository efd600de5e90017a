#pragma once

#include <cstdint>
#include <filesystem>

#include "t2i/tensor.hpp"

namespace t2i {

// 8-bit quantization used by every image file: byte = floor(clamp(v,0,1)*255 + 0.5).
std::uint8_t quantize(float v);
inline float dequantize(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

// Round-trips a tensor through the file quantization without I/O.
ImageTensor quantized(const ImageTensor& img);

// Binary PPM (P6) for 3 channels, PGM (P5) for 1 channel, maxval 255.
void write_pnm(const std::filesystem::path& path, const ImageTensor& img);
ImageTensor read_pnm(const std::filesystem::path& path);

}  // namespace t2i
