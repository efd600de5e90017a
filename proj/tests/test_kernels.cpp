#include <omp.h>

#include <cmath>
#include <vector>

#include "doctest.h"
#include "t2i/kernels.hpp"
#include "t2i/rng.hpp"

using namespace t2i;
namespace k = t2i::kernels;

namespace {

template <class T>
std::vector<T> rand_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
  return v;
}

// The parallel kernels may sum in a different order than the reference loops.
template <class T>
bool close(const std::vector<T>& a, const std::vector<T>& b) {
  const double tol = sizeof(T) == 4 ? 1e-5 : 1e-12;
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(double(a[i]) - double(b[i])) > tol * std::max(1.0, std::abs(double(a[i])))) return false;
  return true;
}

}  // namespace

TEST_CASE_TEMPLATE("conv3x3: parallel matches serial", T, float, double) {
  for (int stride : {1, 2}) {
    const k::ConvGeom g{3, 4, 9, 10, 5, stride};
    const auto in = rand_vec<T>(g.in_size(), 1), w = rand_vec<T>(g.weight_size(), 2);
    const auto b = rand_vec<T>(static_cast<std::size_t>(g.out_ch), 3), dout = rand_vec<T>(g.out_size(), 4);
    std::vector<T> o1(g.out_size()), o2(g.out_size());
    k::serial::conv3x3_forward<T>(g, in, w, b, o1);
    k::parallel::conv3x3_forward<T>(g, in, w, b, o2);
    CHECK(close(o1, o2));

    std::vector<T> di1(g.in_size()), di2(g.in_size()), dw1(g.weight_size()), dw2(g.weight_size());
    std::vector<T> db1(static_cast<std::size_t>(g.out_ch)), db2(static_cast<std::size_t>(g.out_ch));
    k::serial::conv3x3_backward_input<T>(g, dout, w, di1);
    k::parallel::conv3x3_backward_input<T>(g, dout, w, di2);
    k::serial::conv3x3_backward_params<T>(g, dout, in, dw1, db1);
    k::parallel::conv3x3_backward_params<T>(g, dout, in, dw2, db2);
    CHECK(close(di1, di2));
    CHECK(close(dw1, dw2));
    CHECK(close(db1, db2));
  }
}

TEST_CASE("conv3x3: hand-evaluated impulse response") {
  // Single channel 3x3 input with a 1 at the centre; the output at (y,x) picks
  // up weight (1 - (y-1), 1 - (x-1)) i.e. the kernel flipped around the centre.
  const k::ConvGeom g{1, 1, 3, 3, 1, 1};
  std::vector<double> in(9, 0.0);
  in[4] = 1.0;
  const std::vector<double> w{1, 2, 3, 4, 5, 6, 7, 8, 9}, b{0.5};
  std::vector<double> out(9);
  k::conv3x3_forward<double>(g, in, w, b, out);
  const std::vector<double> want{9.5, 8.5, 7.5, 6.5, 5.5, 4.5, 3.5, 2.5, 1.5};
  CHECK(out == want);
}

TEST_CASE_TEMPLATE("linear: parallel matches serial and a direct product", T, float, double) {
  const k::LinearGeom g{5, 7, 3};
  const auto x = rand_vec<T>(35, 1), w = rand_vec<T>(21, 2), b = rand_vec<T>(3, 3), dy = rand_vec<T>(15, 4);
  std::vector<T> y1(15), y2(15);
  k::serial::linear_forward<T>(g, x, w, b, y1);
  k::parallel::linear_forward<T>(g, x, w, b, y2);
  CHECK(close(y1, y2));
  for (int r = 0; r < 5; ++r)
    for (int o = 0; o < 3; ++o) {
      double acc = static_cast<double>(b[static_cast<std::size_t>(o)]);
      for (int i = 0; i < 7; ++i) acc += static_cast<double>(x[static_cast<std::size_t>(r * 7 + i)]) * w[static_cast<std::size_t>(o * 7 + i)];
      CHECK(static_cast<double>(y1[static_cast<std::size_t>(r * 3 + o)]) == doctest::Approx(acc).epsilon(1e-5));
    }
  std::vector<T> dx1(35), dx2(35), dw1(21), dw2(21), db1(3), db2(3);
  k::serial::linear_backward_input<T>(g, dy, w, dx1);
  k::parallel::linear_backward_input<T>(g, dy, w, dx2);
  k::serial::linear_backward_params<T>(g, dy, x, dw1, db1);
  k::parallel::linear_backward_params<T>(g, dy, x, dw2, db2);
  CHECK(close(dx1, dx2));
  CHECK(close(dw1, dw2));
  CHECK(close(db1, db2));
}

TEST_CASE_TEMPLATE("sobel: parallel matches serial", T, float, double) {
  const k::SobelGeom g{3, 8, 12};
  const auto in = rand_vec<T>(g.size(), 5), dmag = rand_vec<T>(g.size(), 6);
  std::vector<T> gx1(g.size()), gy1(g.size()), m1(g.size()), gx2(g.size()), gy2(g.size()), m2(g.size());
  k::serial::sobel_forward<T>(g, in, T(1e-4), gx1, gy1, m1);
  k::parallel::sobel_forward<T>(g, in, T(1e-4), gx2, gy2, m2);
  CHECK(close(m1, m2));
  std::vector<T> d1(g.size()), d2(g.size());
  k::serial::sobel_backward<T>(g, gx1, gy1, m1, T(1e-4), dmag, d1);
  k::parallel::sobel_backward<T>(g, gx2, gy2, m2, T(1e-4), dmag, d2);
  CHECK(close(d1, d2));
}

TEST_CASE("ssim_mean: parallel matches serial") {
  const auto a = rand_vec<double>(40 * 24, 7), b = rand_vec<double>(40 * 24, 8);
  CHECK(k::serial::ssim_mean(a, b, 40, 24, 8, 1e-4, 9e-4) ==
        doctest::Approx(k::parallel::ssim_mean(a, b, 40, 24, 8, 1e-4, 9e-4)).epsilon(1e-12));
}

TEST_CASE("parallel kernels do not depend on the thread count") {
  const k::ConvGeom g{4, 3, 12, 12, 6, 1};
  const auto in = rand_vec<float>(g.in_size(), 1), w = rand_vec<float>(g.weight_size(), 2);
  const auto b = rand_vec<float>(6, 3), dout = rand_vec<float>(g.out_size(), 4);
  const auto sa = rand_vec<double>(32 * 32, 5), sb = rand_vec<double>(32 * 32, 6);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> out(g.out_size()), din(g.in_size()), dw(g.weight_size()), db(6);
    k::parallel::conv3x3_forward<float>(g, in, w, b, out);
    k::parallel::conv3x3_backward_input<float>(g, dout, w, din);
    k::parallel::conv3x3_backward_params<float>(g, dout, in, dw, db);
    std::vector<float> all = out;
    all.insert(all.end(), din.begin(), din.end());
    all.insert(all.end(), dw.begin(), dw.end());
    all.insert(all.end(), db.begin(), db.end());
    all.push_back(static_cast<float>(k::parallel::ssim_mean(sa, sb, 32, 32, 8, 1e-4, 9e-4)));
    return all;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(saved);
  CHECK(one == four);
}
