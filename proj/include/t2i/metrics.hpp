#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "t2i/corpus.hpp"
#include "t2i/encoders.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

inline constexpr int kSsimWindow = 8;
inline constexpr double kSsimC1 = 1e-4;  // (0.01 L)^2, L = 1
inline constexpr double kSsimC2 = 9e-4;  // (0.03 L)^2
inline constexpr double kEigenClamp = 1e-8;

// Mean SSIM over 8x8 stride-1 windows of the luminance of two [0,1] images.
double ssim(const ImageTensor& a, const ImageTensor& b);

// Mean and unbiased covariance (row-major d x d).
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> cov;
  std::size_t count = 0;

  std::size_t dim() const { return mean.size(); }
};

FeatureStats stats_from_features(std::span<const Embedding> features);
FeatureStats feature_stats(std::span<const ImageTensor> images, const SemanticEncoderParams& frozen);

// |mu_p - mu_q|^2 + Tr(S_p + S_q - 2 (S_p^1/2 S_q S_p^1/2)^1/2)
double frechet_distance(const FeatureStats& p, const FeatureStats& q);

double clip_score(std::span<const ImageTensor> images, std::span<const Caption> captions,
                  const TextEncoderParams& text, const ImageEncoderParams& image);
double clip_score(std::span<const Embedding> image_emb, std::span<const Embedding> text_emb);

// Baseline: image i scored against caption (i + 1) mod n.
double shuffled_clip_score(std::span<const ImageTensor> images, std::span<const Caption> captions,
                           const TextEncoderParams& text, const ImageEncoderParams& image);

struct ItemMetrics {
  std::string image;
  std::size_t ref_index = 0;
  double clip = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  double clip_score = 0.0;
  double fid = 0.0;
  double ssim = 0.0;
  std::vector<ItemMetrics> items;

  std::string to_json() const;
  std::string items_csv() const;
};

struct EvalModels {
  const TextEncoderParams* text = nullptr;
  const ImageEncoderParams* image = nullptr;
  const SemanticEncoderParams* semantic = nullptr;
};

// Generated images (in [0,1]) paired with reference images and captions.
MetricReport evaluate_images(std::span<const ImageTensor> generated, std::span<const ImageTensor> references,
                             std::span<const Caption> captions, const EvalModels& models,
                             std::span<const std::string> names = {}, std::span<const std::size_t> ref_index = {});

// Reads every .ppm in gen_dir (sorted by name) with its .json sidecar, whose
// ref_index points into the corpus manifest.
MetricReport evaluate(const std::filesystem::path& gen_dir, const CorpusManifest& ref, const EvalModels& models);

}  // namespace t2i
