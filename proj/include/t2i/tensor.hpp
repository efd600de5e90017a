#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace t2i {

// Raised for malformed configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a training loss term becomes NaN/Inf (CLI exit code 3).
class NanLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised on any attempt to mutate write-protected parameters.
class FrozenParamError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) : dims_(dims) {}
  explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) {}

  int rank() const { return static_cast<int>(dims_.size()); }
  int operator[](int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& dims() const { return dims_; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : dims_) n *= static_cast<std::size_t>(d);
    return n;
  }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int> dims_;
};

// Channels-first float image. Values live in [0,1] for corpus/metrics and in
// [-1,1] inside the diffusion process.
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w) {
    if (c <= 0 || h <= 0 || w <= 0) {
      throw std::invalid_argument("ImageTensor: dimensions must be positive, got " +
                                  std::to_string(c) + "x" + std::to_string(h) + "x" +
                                  std::to_string(w));
    }
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const ImageTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  Shape shape() const { return Shape{channels, height, width}; }
};

// Fixed-dimension real vector: text embedding, image encoding or semantic features.
struct Embedding {
  std::vector<float> values;

  Embedding() = default;
  explicit Embedding(std::vector<float> v) : values(std::move(v)) {}
  std::size_t dim() const { return values.size(); }
};

}  // namespace t2i
