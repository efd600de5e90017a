#include "t2i/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace t2i {

std::uint8_t quantize(float v) {
  const double c = v < 0.0f ? 0.0 : (v > 1.0f ? 1.0 : static_cast<double>(v));
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

ImageTensor quantized(const ImageTensor& img) {
  ImageTensor out = img;
  for (auto& v : out.data) v = dequantize(quantize(v));
  return out;
}

void write_pnm(const std::filesystem::path& path, const ImageTensor& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("write_pnm: need 1 or 3 channels, got " + std::to_string(img.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<char> bytes(img.size());
  const std::size_t plane = img.plane();
  // Interleave channels-first data into pixel order.
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < img.channels; ++c)
      bytes[i * img.channels + c] = static_cast<char>(quantize(img.data[c * plane + i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

ImageTensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  const std::string magic = next_token(in);
  int channels;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw std::runtime_error("unsupported image format '" + magic + "' in " + path.string());
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("malformed header in " + path.string());
  }
  if (maxval != 255 || w <= 0 || h <= 0) throw std::runtime_error("unsupported header in " + path.string());
  ImageTensor img(channels, h, w);
  std::vector<char> bytes(img.size());
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error("truncated pixel data in " + path.string());
  }
  const std::size_t plane = img.plane();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < channels; ++c)
      img.data[c * plane + i] = dequantize(static_cast<std::uint8_t>(bytes[i * channels + c]));
  return img;
}

}  // namespace t2i
