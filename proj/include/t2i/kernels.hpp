#pragma once

// Data-parallel inner loops. Every kernel exists twice:
//   serial::   straightforward reference loops, kept for testing and benchmarks
//   parallel:: OpenMP implementation used by the library
// Parallel kernels partition work by output element, so each output is
// accumulated by one thread in a fixed order and results do not depend on the
// thread count. Gradient kernels accumulate (+=) into their outputs.

#include <cstddef>
#include <span>

namespace t2i::kernels {

// 3x3 convolution, zero padding 1, stride 1 or 2, NCHW layout.
struct ConvGeom {
  int batch = 1;
  int in_ch = 1;
  int height = 1;
  int width = 1;
  int out_ch = 1;
  int stride = 1;

  int out_h() const { return (height - 1) / stride + 1; }
  int out_w() const { return (width - 1) / stride + 1; }
  std::size_t in_size() const { return static_cast<std::size_t>(batch) * in_ch * height * width; }
  std::size_t out_size() const { return static_cast<std::size_t>(batch) * out_ch * out_h() * out_w(); }
  std::size_t weight_size() const { return static_cast<std::size_t>(out_ch) * in_ch * 9; }
};

// Dense layer y = x W^T + b with x:[rows,in], W:[out,in].
struct LinearGeom {
  int rows = 1;
  int in = 1;
  int out = 1;
};

// Sobel gradient on single-channel planes with replicated borders.
// mag = sqrt(gx^2 + gy^2 + delta) - sqrt(delta); delta > 0 keeps it smooth.
struct SobelGeom {
  int planes = 1;
  int height = 1;
  int width = 1;
  std::size_t size() const { return static_cast<std::size_t>(planes) * height * width; }
};

namespace serial {

template <class T>
void conv3x3_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> bias, std::span<T> out);
template <class T>
void conv3x3_backward_input(const ConvGeom& g, std::span<const T> dout, std::span<const T> weight,
                            std::span<T> din);
template <class T>
void conv3x3_backward_params(const ConvGeom& g, std::span<const T> dout, std::span<const T> in,
                             std::span<T> dweight, std::span<T> dbias);

template <class T>
void linear_forward(const LinearGeom& g, std::span<const T> x, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> y);
template <class T>
void linear_backward_input(const LinearGeom& g, std::span<const T> dy, std::span<const T> weight,
                           std::span<T> dx);
template <class T>
void linear_backward_params(const LinearGeom& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dweight, std::span<T> dbias);

template <class T>
void sobel_forward(const SobelGeom& g, std::span<const T> in, T delta, std::span<T> gx,
                   std::span<T> gy, std::span<T> mag);
template <class T>
void sobel_backward(const SobelGeom& g, std::span<const T> gx, std::span<const T> gy,
                    std::span<const T> mag, T delta, std::span<const T> dmag, std::span<T> din);

// Mean SSIM over all window x window placements (stride 1) of two planes.
double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 int window, double c1, double c2);

}  // namespace serial

namespace parallel {

template <class T>
void conv3x3_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> bias, std::span<T> out);
template <class T>
void conv3x3_backward_input(const ConvGeom& g, std::span<const T> dout, std::span<const T> weight,
                            std::span<T> din);
template <class T>
void conv3x3_backward_params(const ConvGeom& g, std::span<const T> dout, std::span<const T> in,
                             std::span<T> dweight, std::span<T> dbias);

template <class T>
void linear_forward(const LinearGeom& g, std::span<const T> x, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> y);
template <class T>
void linear_backward_input(const LinearGeom& g, std::span<const T> dy, std::span<const T> weight,
                           std::span<T> dx);
template <class T>
void linear_backward_params(const LinearGeom& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dweight, std::span<T> dbias);

template <class T>
void sobel_forward(const SobelGeom& g, std::span<const T> in, T delta, std::span<T> gx,
                   std::span<T> gy, std::span<T> mag);
template <class T>
void sobel_backward(const SobelGeom& g, std::span<const T> gx, std::span<const T> gy,
                    std::span<const T> mag, T delta, std::span<const T> dmag, std::span<T> din);

// Mean SSIM over all window x window placements (stride 1) of two planes.
double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 int window, double c1, double c2);

}  // namespace parallel

using parallel::conv3x3_backward_input;
using parallel::conv3x3_backward_params;
using parallel::conv3x3_forward;
using parallel::linear_backward_input;
using parallel::linear_backward_params;
using parallel::linear_forward;
using parallel::sobel_backward;
using parallel::sobel_forward;
using parallel::ssim_mean;

}  // namespace t2i::kernels
