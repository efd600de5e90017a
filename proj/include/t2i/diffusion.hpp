#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "t2i/autograd.hpp"
#include "t2i/corpus.hpp"
#include "t2i/params.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

// Per-timestep coefficients, stored at index t-1 for t = 1..T.
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  double beta_at(int t) const { return beta.at(idx(t)); }
  double alpha_at(int t) const { return alpha.at(idx(t)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(idx(t)); }
  double sigma_at(int t) const { return sigma.at(idx(t)); }

 private:
  std::size_t idx(int t) const;
};

inline constexpr int kDefaultTimesteps = 100;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

// Linear beta; sigma_t = sqrt(beta_t) except sigma_1 = 0.
NoiseSchedule build_schedule(int T = kDefaultTimesteps, double beta_start = kDefaultBetaStart,
                             double beta_end = kDefaultBetaEnd);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
ImageTensor forward_noise(const ImageTensor& x0, int t, const ImageTensor& eps, const NoiseSchedule& sched);

// (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), clamped to [-1,1] unless clamp is false.
ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps_hat, int t, const NoiseSchedule& sched,
                       bool clamp = true);

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

struct DenoiserArch {
  int canvas = kDefaultCanvas;
  int image_ch = 3;
  int prior_ch = 1;
  int hidden = 16;
  int time_dim = 16;
  int text_dim = 32;

  int cond_dim() const { return time_dim + text_dim; }
};

struct DenoiserParams {
  DenoiserArch arch;
  ParamSet<float> params;
};

// conv3 (the output layer) starts at zero, so a fresh denoiser predicts 0.
DenoiserParams init_denoiser(const DenoiserArch& arch, std::uint64_t seed);

// Sinusoidal embedding of each timestep: [sin(t w_i) | cos(t w_i)], w_i = 10000^(-i/half).
template <class T>
std::vector<T> timestep_embedding(std::span<const int> timesteps, int dim);

// x_t:[N,C,H,W], prior:[N,P,H,W], text:[N,text_dim] -> eps_hat:[N,C,H,W].
template <class T>
ag::Var denoiser_graph(ag::Tape<T>& tape, const DenoiserArch& arch, const std::vector<ag::Var>& p, ag::Var x_t,
                       ag::Var prior, std::span<const int> timesteps, ag::Var text);

ImageTensor denoise(const ImageTensor& x_t, int t, const StructurePrior& s, const Embedding& text,
                    const DenoiserParams& params);

std::vector<ImageTensor> denoise_batch(std::span<const ImageTensor> x_t, std::span<const int> t,
                                       std::span<const StructurePrior> s, std::span<const Embedding> text,
                                       const DenoiserParams& params);

// ---------------------------------------------------------------------------
// Reverse process
// ---------------------------------------------------------------------------

struct DiffusionState {
  ImageTensor x;
  int t = 0;
};

// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z
DiffusionState reverse_update(const DiffusionState& state, const ImageTensor& eps_hat, const NoiseSchedule& sched,
                              const ImageTensor& z);

DiffusionState reverse_step(const DiffusionState& state, const StructurePrior& s, const Embedding& text,
                            const DenoiserParams& params, const NoiseSchedule& sched, const ImageTensor& z);

using NoisePredictor = std::function<ImageTensor(const ImageTensor& x_t, int t)>;

// Runs the reverse chain from a seeded Gaussian x_T with an arbitrary noise
// predictor. Returns x_0 clamped to [-1,1].
ImageTensor sample_with(const NoisePredictor& eps, int channels, int height, int width, const NoiseSchedule& sched,
                        std::uint64_t seed);

ImageTensor sample(const StructurePrior& s, const Embedding& text, const DenoiserParams& params,
                   const NoiseSchedule& sched, std::uint64_t seed);

// Same result per item as sample(), with the denoiser evaluated batch-wise.
std::vector<ImageTensor> sample_batch(std::span<const StructurePrior> s, std::span<const Embedding> text,
                                      const DenoiserParams& params, const NoiseSchedule& sched,
                                      std::span<const std::uint64_t> seeds);

// [-1,1] <-> [0,1]
ImageTensor to_model_range(const ImageTensor& img);
ImageTensor to_unit_range(const ImageTensor& img);

}  // namespace t2i
