#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "t2i/autograd.hpp"
#include "t2i/corpus.hpp"
#include "t2i/params.hpp"

namespace t2i {

struct TextEncoderArch {
  int vocab = 0;  // filled from vocab_size() by default_text_arch()
  int embed_width = 32;
  int hidden = 64;
  int out_dim = 32;
};

// Two stride-2 3x3 convolutions with SiLU; output is c2 x (canvas/4)^2.
struct ConvTrunkArch {
  int canvas = kDefaultCanvas;
  int in_ch = 3;
  int c1 = 8;
  int c2 = 16;

  int out_side() const { return ((canvas - 1) / 2) / 2 + 1; }
  int flat() const { return c2 * out_side() * out_side(); }
};

struct ImageEncoderArch {
  ConvTrunkArch trunk;
  int hidden = 64;
  int out_dim = 32;
};

struct SemanticArch {
  ConvTrunkArch trunk;
  int feature_dim = 32;
  int classes = kNumClasses;
};

TextEncoderArch default_text_arch(int out_dim = 32);

struct TextEncoderParams {
  TextEncoderArch arch;
  ParamSet<float> params;
};

struct ImageEncoderParams {
  ImageEncoderArch arch;
  ParamSet<float> params;
};

// Frozen feature extractor f: conv trunk plus the penultimate dense layer of
// the attribute classifier.
struct SemanticEncoderParams {
  SemanticArch arch;
  ParamSet<float> params;
};

TextEncoderParams init_text_encoder(const TextEncoderArch& arch, std::uint64_t seed);
ImageEncoderParams init_image_encoder(const ImageEncoderArch& arch, std::uint64_t seed);
SemanticEncoderParams init_semantic_encoder(const SemanticArch& arch, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Graph builders (float for training, double for gradient checks).
// `p` holds the bound parameters in declaration order.
// ---------------------------------------------------------------------------

// tokens: N rows of kMaxCaptionTokens padded ids -> [N, out_dim]
template <class T>
ag::Var text_encoder_graph(ag::Tape<T>& tape, const TextEncoderArch& arch, const std::vector<ag::Var>& p,
                           const std::vector<int>& padded_tokens);

// images: [N,3,H,W] in [0,1] -> [N, out_dim]
template <class T>
ag::Var image_encoder_graph(ag::Tape<T>& tape, const ImageEncoderArch& arch, const std::vector<ag::Var>& p,
                            ag::Var images);

// images: [N,3,H,W] in [0,1] -> [N, feature_dim]
template <class T>
ag::Var semantic_encoder_graph(ag::Tape<T>& tape, const SemanticArch& arch, const std::vector<ag::Var>& p,
                               ag::Var images);

// Smoothing constant of the differentiable Sobel magnitude used by phi.
inline constexpr double kStructureDelta = 1e-4;

// phi: luminance, 2x average-pooled pyramid (full, half, quarter), Sobel
// magnitude per level, flattened and concatenated -> [N, F].
template <class T>
ag::Var structure_graph(ag::Tape<T>& tape, ag::Var images);

std::vector<int> padded_tokens(std::span<const Caption> captions);

// Packs images into one [N,C,H,W] buffer.
template <class T>
std::vector<T> stack_images(std::span<const ImageTensor> images);

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Throws std::out_of_range naming the id when a token is outside the vocabulary.
Embedding encode_text(const Caption& caption, const TextEncoderParams& params);
std::vector<Embedding> encode_texts(std::span<const Caption> captions, const TextEncoderParams& params);

Embedding encode_image(const ImageTensor& image, const ImageEncoderParams& params);
std::vector<Embedding> encode_images(std::span<const ImageTensor> images, const ImageEncoderParams& params);

struct FeatureStack {
  std::vector<double> values;
};

// Parameter-free; single- or three-channel input with side divisible by 4.
FeatureStack structure_features(const ImageTensor& image);

// Requires frozen params (FrozenParamError otherwise).
Embedding semantic_features(const ImageTensor& image, const SemanticEncoderParams& frozen);
std::vector<Embedding> semantic_features(std::span<const ImageTensor> images, const SemanticEncoderParams& frozen);

// ---------------------------------------------------------------------------
// Pretraining of f
// ---------------------------------------------------------------------------

struct PretrainConfig {
  int epochs = 3;
  int batch_size = 32;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  SemanticArch arch;
};

struct PretrainReport {
  std::vector<double> batch_losses;  // first epoch, in order
  std::vector<double> epoch_losses;
  double heldout_accuracy = 0.0;
};

// Trains a (shape, color) classifier of the dominant object and returns its
// penultimate-layer extractor, frozen. Needs >= 32 items and >= 2 classes.
SemanticEncoderParams pretrain_semantic_encoder(const Corpus& corpus, const PretrainConfig& config,
                                                PretrainReport* report = nullptr);

}  // namespace t2i
