#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "t2i/checkpoint.hpp"
#include "t2i/corpus.hpp"
#include "t2i/diffusion.hpp"
#include "t2i/encoders.hpp"
#include "t2i/objectives.hpp"

namespace t2i {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 32;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  int timesteps = kDefaultTimesteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  LossWeights weights;
  double temperature = 0.07;
  bool symmetric_clip = false;
  int embed_dim = 32;
  int denoiser_hidden = 16;
  int checkpoint_interval = 250;  // 0 disables intermediate checkpoints

  void validate() const;
  ContrastiveConfig contrastive() const { return {temperature, batch_size, symmetric_clip}; }
  NoiseSchedule schedule() const { return build_schedule(timesteps, beta_start, beta_end); }
};

struct ModelArchs {
  TextEncoderArch text;
  ImageEncoderArch image;
  SemanticArch semantic;
  DenoiserArch denoiser;
};

ModelArchs archs_for(const TrainConfig& cfg, int canvas, const SemanticArch& semantic);

// Trainable parameters plus the frozen semantic encoder. `step` counts
// completed optimizer steps; SGD keeps no optimizer state.
struct TrainState {
  TextEncoderParams text;
  ImageEncoderParams image;
  DenoiserParams denoiser;
  SemanticEncoderParams semantic;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

TrainState init_train_state(const TrainConfig& cfg, int canvas, SemanticEncoderParams semantic);

// Images in [0,1]; priors single-channel edge maps.
struct TrainBatch {
  std::vector<ImageTensor> images;
  std::vector<Caption> captions;
  std::vector<StructurePrior> priors;
};

TrainBatch make_batch(const Corpus& corpus, std::span<const std::size_t> indices);

// Minibatch for a given step: drawn without replacement from the train split.
std::vector<std::size_t> batch_indices_for_step(const Corpus& corpus, const TrainConfig& cfg, std::uint64_t step);

// Random quantities of one step.
struct StepDraws {
  std::vector<int> timesteps;
  std::vector<float> noise;  // [N,C,H,W]
};

StepDraws draws_for_step(std::uint64_t seed, std::uint64_t step, int n, int channels, int canvas, int T);

struct StepResult {
  LossReport report;
  StepDraws draws;
};

// One SGD step on `state` (its step counter advances by one).
StepResult train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& cfg, const NoiseSchedule& sched);

// ---------------------------------------------------------------------------
// Loss graph shared by training (float) and gradient checks (double)
// ---------------------------------------------------------------------------

struct ModelVars {
  std::vector<ag::Var> text, image, semantic, denoiser;
};

template <class T>
struct BatchTensors {
  int n = 0;
  int canvas = 0;
  std::vector<T> images;  // [N,3,H,W] in [0,1]
  std::vector<T> priors;  // [N,1,H,W]
  std::vector<int> tokens;  // [N,16] padded
};

template <class T>
BatchTensors<T> batch_tensors(const TrainBatch& batch);

struct LossVars {
  ag::Var clip, structure, semantic, denoise, total;
};

template <class T>
LossVars build_loss_graph(ag::Tape<T>& tape, const ModelArchs& archs, const ModelVars& vars, const BatchTensors<T>& b,
                          const StepDraws& draws, const NoiseSchedule& sched, const ContrastiveConfig& ccfg,
                          const LossWeights& w);

// ---------------------------------------------------------------------------
// Full training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(std::uint64_t step, const LossReport&)> on_step;
};

// Runs from state.step up to cfg.steps. With out_dir set, writes
// ckpt_XXXXXX.bin at each interval, final.bin and loss.csv; an existing
// loss.csv is truncated to state.step rows first so a resumed run produces
// the same file as an uninterrupted one.
TrainState train(const Corpus& corpus, const TrainConfig& cfg, TrainState state, const TrainOptions& opts = {},
                 std::vector<LossReport>* log = nullptr);

TrainState train(const Corpus& corpus, const TrainConfig& cfg, const SemanticEncoderParams& semantic,
                 const TrainOptions& opts = {}, std::vector<LossReport>* log = nullptr);

std::string loss_csv_header();
std::string loss_csv_row(std::uint64_t step, const LossReport& r);

// ---------------------------------------------------------------------------
// Checkpoint mapping
// ---------------------------------------------------------------------------

Checkpoint to_checkpoint(const TrainState& state);
TrainState from_checkpoint(const Checkpoint& ckpt);

Checkpoint semantic_checkpoint(const SemanticEncoderParams& p, std::uint64_t seed);
SemanticEncoderParams semantic_from_checkpoint(const Checkpoint& ckpt);

// Saves `path` plus a JSON sidecar (same stem, .json) with architecture,
// configuration and seed.
void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg);

}  // namespace t2i
