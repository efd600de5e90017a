// Serial reference vs OpenMP kernels at the shapes used during training.

#include <benchmark/benchmark.h>

#include <vector>

#include "t2i/kernels.hpp"
#include "t2i/rng.hpp"

namespace k = t2i::kernels;

namespace {

std::vector<float> randv(std::size_t n, std::uint64_t seed) {
  t2i::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

std::vector<double> randd(std::size_t n, std::uint64_t seed) {
  t2i::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(0, 1);
  return v;
}

// Denoiser hidden layer: batch 32, 16 -> 16 channels, 32x32.
k::ConvGeom conv_geom(const benchmark::State& st) {
  return {32, static_cast<int>(st.range(0)), 32, 32, static_cast<int>(st.range(0)), 1};
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& st) {
  const k::ConvGeom g = conv_geom(st);
  const auto in = randv(g.in_size(), 1), w = randv(g.weight_size(), 2), b = randv(static_cast<std::size_t>(g.out_ch), 3);
  std::vector<float> out(g.out_size());
  for (auto _ : st) {
    if constexpr (Parallel) {
      k::parallel::conv3x3_forward<float>(g, in, w, b, out);
    } else {
      k::serial::conv3x3_forward<float>(g, in, w, b, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(g.out_size()));
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& st) {
  const k::ConvGeom g = conv_geom(st);
  const auto in = randv(g.in_size(), 1), w = randv(g.weight_size(), 2), dout = randv(g.out_size(), 4);
  std::vector<float> din(g.in_size()), dw(g.weight_size()), db(static_cast<std::size_t>(g.out_ch));
  for (auto _ : st) {
    if constexpr (Parallel) {
      k::parallel::conv3x3_backward_input<float>(g, dout, w, din);
      k::parallel::conv3x3_backward_params<float>(g, dout, in, dw, db);
    } else {
      k::serial::conv3x3_backward_input<float>(g, dout, w, din);
      k::serial::conv3x3_backward_params<float>(g, dout, in, dw, db);
    }
    benchmark::DoNotOptimize(din.data());
  }
}

template <bool Parallel>
void BM_Sobel(benchmark::State& st) {
  const k::SobelGeom g{static_cast<int>(st.range(0)), 32, 32};
  const auto in = randv(g.size(), 5), dmag = randv(g.size(), 6);
  std::vector<float> gx(g.size()), gy(g.size()), mag(g.size()), din(g.size());
  for (auto _ : st) {
    if constexpr (Parallel) {
      k::parallel::sobel_forward<float>(g, in, 1e-4f, gx, gy, mag);
      k::parallel::sobel_backward<float>(g, gx, gy, mag, 1e-4f, dmag, din);
    } else {
      k::serial::sobel_forward<float>(g, in, 1e-4f, gx, gy, mag);
      k::serial::sobel_backward<float>(g, gx, gy, mag, 1e-4f, dmag, din);
    }
    benchmark::DoNotOptimize(din.data());
  }
}

template <bool Parallel>
void BM_Ssim(benchmark::State& st) {
  const int side = static_cast<int>(st.range(0));
  const auto a = randd(static_cast<std::size_t>(side) * side, 7), b = randd(static_cast<std::size_t>(side) * side, 8);
  for (auto _ : st) {
    double v;
    if constexpr (Parallel) {
      v = k::parallel::ssim_mean(a, b, side, side, 8, 1e-4, 9e-4);
    } else {
      v = k::serial::ssim_mean(a, b, side, side, 8, 1e-4, 9e-4);
    }
    benchmark::DoNotOptimize(v);
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Sobel<false>)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Sobel<true>)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Ssim<false>)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Ssim<true>)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
