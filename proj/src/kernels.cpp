#include "t2i/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace t2i::kernels {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

constexpr int kSobelSmooth[3] = {1, 2, 1};

template <class T>
inline T sobel_gx(const T* p, int h, int w, int y, int x) {
  T acc = 0;
  const int xl = clampi(x - 1, 0, w - 1);
  const int xr = clampi(x + 1, 0, w - 1);
  for (int d = -1; d <= 1; ++d) {
    const int yy = clampi(y + d, 0, h - 1);
    acc += static_cast<T>(kSobelSmooth[d + 1]) * (p[yy * w + xr] - p[yy * w + xl]);
  }
  return acc;
}

template <class T>
inline T sobel_gy(const T* p, int h, int w, int y, int x) {
  T acc = 0;
  const int yu = clampi(y - 1, 0, h - 1);
  const int yd = clampi(y + 1, 0, h - 1);
  for (int d = -1; d <= 1; ++d) {
    const int xx = clampi(x + d, 0, w - 1);
    acc += static_cast<T>(kSobelSmooth[d + 1]) * (p[yd * w + xx] - p[yu * w + xx]);
  }
  return acc;
}

template <class T>
inline T magnitude(T gx, T gy, T delta) {
  return std::sqrt(gx * gx + gy * gy + delta) - std::sqrt(delta);
}

// Adjoint of the Sobel stencil for one plane.
template <class T>
void sobel_scatter_plane(const T* gx, const T* gy, const T* mag, T delta, const T* dmag, T* din,
                         int h, int w) {
  const T root = std::sqrt(delta);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      const T denom = mag[i] + root;
      if (denom <= T(0)) continue;
      const T dgx = dmag[i] * gx[i] / denom;
      const T dgy = dmag[i] * gy[i] / denom;
      const int xl = clampi(x - 1, 0, w - 1);
      const int xr = clampi(x + 1, 0, w - 1);
      const int yu = clampi(y - 1, 0, h - 1);
      const int yd = clampi(y + 1, 0, h - 1);
      for (int d = -1; d <= 1; ++d) {
        const T k = static_cast<T>(kSobelSmooth[d + 1]);
        const int yy = clampi(y + d, 0, h - 1);
        din[yy * w + xr] += k * dgx;
        din[yy * w + xl] -= k * dgx;
        const int xx = clampi(x + d, 0, w - 1);
        din[yd * w + xx] += k * dgy;
        din[yu * w + xx] -= k * dgy;
      }
    }
  }
}

inline double ssim_window(const double* a, const double* b, int width, int y0, int x0, int win,
                          double c1, double c2) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int y = y0; y < y0 + win; ++y) {
    for (int x = x0; x < x0 + win; ++x) {
      const double va = a[y * width + x];
      const double vb = b[y * width + x];
      sa += va;
      sb += vb;
      saa += va * va;
      sbb += vb * vb;
      sab += va * vb;
    }
  }
  const double n = static_cast<double>(win) * win;
  const double ma = sa / n, mb = sb / n;
  const double va = saa / n - ma * ma;
  const double vb = sbb / n - mb * mb;
  const double cov = sab / n - ma * mb;
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------
namespace serial {

template <class T>
void conv3x3_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> bias, std::span<T> out) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_ch; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = bias[co];
          for (int ci = 0; ci < g.in_ch; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * g.stride + ky - 1;
                const int ix = ox * g.stride + kx - 1;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc += weight[((co * g.in_ch + ci) * 3 + ky) * 3 + kx] *
                       in[((static_cast<std::size_t>(n) * g.in_ch + ci) * g.height + iy) * g.width + ix];
              }
          out[((static_cast<std::size_t>(n) * g.out_ch + co) * oh + oy) * ow + ox] = acc;
        }
}

template <class T>
void conv3x3_backward_input(const ConvGeom& g, std::span<const T> dout, std::span<const T> weight,
                            std::span<T> din) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_ch; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const T d = dout[((static_cast<std::size_t>(n) * g.out_ch + co) * oh + oy) * ow + ox];
          for (int ci = 0; ci < g.in_ch; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * g.stride + ky - 1;
                const int ix = ox * g.stride + kx - 1;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                din[((static_cast<std::size_t>(n) * g.in_ch + ci) * g.height + iy) * g.width + ix] +=
                    weight[((co * g.in_ch + ci) * 3 + ky) * 3 + kx] * d;
              }
        }
}

template <class T>
void conv3x3_backward_params(const ConvGeom& g, std::span<const T> dout, std::span<const T> in,
                             std::span<T> dweight, std::span<T> dbias) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_ch; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const T d = dout[((static_cast<std::size_t>(n) * g.out_ch + co) * oh + oy) * ow + ox];
          dbias[co] += d;
          for (int ci = 0; ci < g.in_ch; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * g.stride + ky - 1;
                const int ix = ox * g.stride + kx - 1;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                dweight[((co * g.in_ch + ci) * 3 + ky) * 3 + kx] +=
                    d * in[((static_cast<std::size_t>(n) * g.in_ch + ci) * g.height + iy) * g.width + ix];
              }
        }
}

template <class T>
void linear_forward(const LinearGeom& g, std::span<const T> x, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> y) {
  for (int r = 0; r < g.rows; ++r)
    for (int o = 0; o < g.out; ++o) {
      T acc = bias[o];
      for (int i = 0; i < g.in; ++i) acc += x[r * g.in + i] * weight[o * g.in + i];
      y[r * g.out + o] = acc;
    }
}

template <class T>
void linear_backward_input(const LinearGeom& g, std::span<const T> dy, std::span<const T> weight,
                           std::span<T> dx) {
  for (int r = 0; r < g.rows; ++r)
    for (int o = 0; o < g.out; ++o)
      for (int i = 0; i < g.in; ++i) dx[r * g.in + i] += dy[r * g.out + o] * weight[o * g.in + i];
}

template <class T>
void linear_backward_params(const LinearGeom& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dweight, std::span<T> dbias) {
  for (int r = 0; r < g.rows; ++r)
    for (int o = 0; o < g.out; ++o) {
      dbias[o] += dy[r * g.out + o];
      for (int i = 0; i < g.in; ++i) dweight[o * g.in + i] += dy[r * g.out + o] * x[r * g.in + i];
    }
}

template <class T>
void sobel_forward(const SobelGeom& g, std::span<const T> in, T delta, std::span<T> gx,
                   std::span<T> gy, std::span<T> mag) {
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (int p = 0; p < g.planes; ++p) {
    const T* src = in.data() + p * plane;
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        const std::size_t i = p * plane + static_cast<std::size_t>(y) * g.width + x;
        gx[i] = sobel_gx(src, g.height, g.width, y, x);
        gy[i] = sobel_gy(src, g.height, g.width, y, x);
        mag[i] = magnitude(gx[i], gy[i], delta);
      }
  }
}

template <class T>
void sobel_backward(const SobelGeom& g, std::span<const T> gx, std::span<const T> gy,
                    std::span<const T> mag, T delta, std::span<const T> dmag, std::span<T> din) {
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (int p = 0; p < g.planes; ++p) {
    const std::size_t o = p * plane;
    sobel_scatter_plane(gx.data() + o, gy.data() + o, mag.data() + o, delta, dmag.data() + o,
                        din.data() + o, g.height, g.width);
  }
}

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 int window, double c1, double c2) {
  double total = 0;
  int count = 0;
  for (int y = 0; y + window <= height; ++y)
    for (int x = 0; x + window <= width; ++x) {
      total += ssim_window(a.data(), b.data(), width, y, x, window, c1, c2);
      ++count;
    }
  return total / count;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP implementations.
// ---------------------------------------------------------------------------
namespace parallel {

template <class T>
void conv3x3_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> bias, std::span<T> out) {
  const int oh = g.out_h(), ow = g.out_w(), s = g.stride;
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    for (int co = 0; co < g.out_ch; ++co) {
      T* o = out.data() + (static_cast<std::size_t>(n) * g.out_ch + co) * out_plane;
      std::fill(o, o + out_plane, bias[co]);
      for (int ci = 0; ci < g.in_ch; ++ci) {
        const T* src = in.data() + (static_cast<std::size_t>(n) * g.in_ch + ci) * in_plane;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const T wv = weight[((co * g.in_ch + ci) * 3 + ky) * 3 + kx];
            const int ox_lo = kx == 0 ? 1 : 0;
            const int ox_hi = std::min(ow - 1, (g.width - kx) / s);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * s + ky - 1;
              if (iy < 0 || iy >= g.height) continue;
              const T* irow = src + static_cast<std::size_t>(iy) * g.width;
              T* orow = o + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * irow[ox + kx - 1];
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * irow[ox * s + kx - 1];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv3x3_backward_input(const ConvGeom& g, std::span<const T> dout, std::span<const T> weight,
                            std::span<T> din) {
  const int oh = g.out_h(), ow = g.out_w(), s = g.stride;
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    for (int ci = 0; ci < g.in_ch; ++ci) {
      T* dst = din.data() + (static_cast<std::size_t>(n) * g.in_ch + ci) * in_plane;
      for (int co = 0; co < g.out_ch; ++co) {
        const T* d = dout.data() + (static_cast<std::size_t>(n) * g.out_ch + co) * out_plane;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const T wv = weight[((co * g.in_ch + ci) * 3 + ky) * 3 + kx];
            const int ox_lo = kx == 0 ? 1 : 0;
            const int ox_hi = std::min(ow - 1, (g.width - kx) / s);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * s + ky - 1;
              if (iy < 0 || iy >= g.height) continue;
              T* irow = dst + static_cast<std::size_t>(iy) * g.width;
              const T* drow = d + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) irow[ox + kx - 1] += wv * drow[ox];
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) irow[ox * s + kx - 1] += wv * drow[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv3x3_backward_params(const ConvGeom& g, std::span<const T> dout, std::span<const T> in,
                             std::span<T> dweight, std::span<T> dbias) {
  const int oh = g.out_h(), ow = g.out_w(), s = g.stride;
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int co = 0; co < g.out_ch; ++co) {
    for (int n = 0; n < g.batch; ++n) {
      const T* d = dout.data() + (static_cast<std::size_t>(n) * g.out_ch + co) * out_plane;
      T bsum = 0;
      for (std::size_t i = 0; i < out_plane; ++i) bsum += d[i];
      dbias[co] += bsum;
      for (int ci = 0; ci < g.in_ch; ++ci) {
        const T* src = in.data() + (static_cast<std::size_t>(n) * g.in_ch + ci) * in_plane;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int ox_lo = kx == 0 ? 1 : 0;
            const int ox_hi = std::min(ow - 1, (g.width - kx) / s);
            T acc = 0;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * s + ky - 1;
              if (iy < 0 || iy >= g.height) continue;
              const T* irow = src + static_cast<std::size_t>(iy) * g.width;
              const T* drow = d + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += drow[ox] * irow[ox + kx - 1];
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += drow[ox] * irow[ox * s + kx - 1];
              }
            }
            dweight[((co * g.in_ch + ci) * 3 + ky) * 3 + kx] += acc;
          }
        }
      }
    }
  }
}

template <class T>
void linear_forward(const LinearGeom& g, std::span<const T> x, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int r = 0; r < g.rows; ++r)
    for (int o = 0; o < g.out; ++o) {
      const T* xr = x.data() + static_cast<std::size_t>(r) * g.in;
      const T* wr = weight.data() + static_cast<std::size_t>(o) * g.in;
      T acc = bias[o];
      for (int i = 0; i < g.in; ++i) acc += xr[i] * wr[i];
      y[static_cast<std::size_t>(r) * g.out + o] = acc;
    }
}

template <class T>
void linear_backward_input(const LinearGeom& g, std::span<const T> dy, std::span<const T> weight,
                           std::span<T> dx) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < g.rows; ++r) {
    T* dxr = dx.data() + static_cast<std::size_t>(r) * g.in;
    for (int o = 0; o < g.out; ++o) {
      const T d = dy[static_cast<std::size_t>(r) * g.out + o];
      const T* wr = weight.data() + static_cast<std::size_t>(o) * g.in;
      for (int i = 0; i < g.in; ++i) dxr[i] += d * wr[i];
    }
  }
}

template <class T>
void linear_backward_params(const LinearGeom& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dweight, std::span<T> dbias) {
#pragma omp parallel for schedule(static)
  for (int o = 0; o < g.out; ++o) {
    T* dwr = dweight.data() + static_cast<std::size_t>(o) * g.in;
    for (int r = 0; r < g.rows; ++r) {
      const T d = dy[static_cast<std::size_t>(r) * g.out + o];
      dbias[o] += d;
      const T* xr = x.data() + static_cast<std::size_t>(r) * g.in;
      for (int i = 0; i < g.in; ++i) dwr[i] += d * xr[i];
    }
  }
}

template <class T>
void sobel_forward(const SobelGeom& g, std::span<const T> in, T delta, std::span<T> gx,
                   std::span<T> gy, std::span<T> mag) {
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
#pragma omp parallel for collapse(2) schedule(static)
  for (int p = 0; p < g.planes; ++p)
    for (int y = 0; y < g.height; ++y) {
      const T* src = in.data() + p * plane;
      for (int x = 0; x < g.width; ++x) {
        const std::size_t i = p * plane + static_cast<std::size_t>(y) * g.width + x;
        gx[i] = sobel_gx(src, g.height, g.width, y, x);
        gy[i] = sobel_gy(src, g.height, g.width, y, x);
        mag[i] = magnitude(gx[i], gy[i], delta);
      }
    }
}

template <class T>
void sobel_backward(const SobelGeom& g, std::span<const T> gx, std::span<const T> gy,
                    std::span<const T> mag, T delta, std::span<const T> dmag, std::span<T> din) {
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  // The stencil adjoint scatters within a plane, so planes are the unit of work.
#pragma omp parallel for schedule(static)
  for (int p = 0; p < g.planes; ++p) {
    const std::size_t o = p * plane;
    sobel_scatter_plane(gx.data() + o, gy.data() + o, mag.data() + o, delta, dmag.data() + o,
                        din.data() + o, g.height, g.width);
  }
}

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 int window, double c1, double c2) {
  const int rows = height - window + 1;
  const int cols = width - window + 1;
  std::vector<double> row_sums(static_cast<std::size_t>(rows), 0.0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < rows; ++y) {
    double acc = 0;
    for (int x = 0; x < cols; ++x) acc += ssim_window(a.data(), b.data(), width, y, x, window, c1, c2);
    row_sums[static_cast<std::size_t>(y)] = acc;
  }
  double total = 0;
  for (double r : row_sums) total += r;
  return total / (static_cast<double>(rows) * cols);
}

}  // namespace parallel

#define T2I_INSTANTIATE(NS, T)                                                                  \
  template void NS::conv3x3_forward<T>(const ConvGeom&, std::span<const T>, std::span<const T>, \
                                       std::span<const T>, std::span<T>);                       \
  template void NS::conv3x3_backward_input<T>(const ConvGeom&, std::span<const T>,              \
                                              std::span<const T>, std::span<T>);                \
  template void NS::conv3x3_backward_params<T>(const ConvGeom&, std::span<const T>,             \
                                               std::span<const T>, std::span<T>, std::span<T>); \
  template void NS::linear_forward<T>(const LinearGeom&, std::span<const T>, std::span<const T>, \
                                      std::span<const T>, std::span<T>);                        \
  template void NS::linear_backward_input<T>(const LinearGeom&, std::span<const T>,             \
                                             std::span<const T>, std::span<T>);                 \
  template void NS::linear_backward_params<T>(const LinearGeom&, std::span<const T>,            \
                                              std::span<const T>, std::span<T>, std::span<T>);  \
  template void NS::sobel_forward<T>(const SobelGeom&, std::span<const T>, T, std::span<T>,     \
                                     std::span<T>, std::span<T>);                               \
  template void NS::sobel_backward<T>(const SobelGeom&, std::span<const T>, std::span<const T>, \
                                      std::span<const T>, T, std::span<const T>, std::span<T>);

T2I_INSTANTIATE(serial, float)
T2I_INSTANTIATE(serial, double)
T2I_INSTANTIATE(parallel, float)
T2I_INSTANTIATE(parallel, double)

#undef T2I_INSTANTIATE

}  // namespace t2i::kernels
