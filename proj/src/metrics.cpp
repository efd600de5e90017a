#include "t2i/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "t2i/checkpoint.hpp"
#include "t2i/image_io.hpp"
#include "t2i/kernels.hpp"
#include "t2i/objectives.hpp"

namespace t2i {

namespace {

std::vector<double> luma(const ImageTensor& img) {
  const std::size_t n = img.plane();
  std::vector<double> out(n);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = img.data[i];
  } else if (img.channels == 3) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = ag::kLumaR * img.data[i] + ag::kLumaG * img.data[n + i] + ag::kLumaB * img.data[2 * n + i];
    }
  } else {
    throw std::invalid_argument("ssim: expected 1 or 3 channels, got " + std::to_string(img.channels));
  }
  return out;
}

Eigen::MatrixXd as_matrix(const FeatureStats& s) {
  const Eigen::Index d = static_cast<Eigen::Index>(s.dim());
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = s.cov[static_cast<std::size_t>(i * d + j)];
  return m;
}

// Eigenvalues of a symmetric matrix, tiny negatives clamped to zero.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::runtime_error(std::string(what) + ": eigendecomposition failed");
  const double lo = es.eigenvalues().size() ? es.eigenvalues().minCoeff() : 0.0;
  if (lo < -kEigenClamp) {
    throw std::domain_error(std::string(what) + " is not positive semidefinite (eigenvalue " + std::to_string(lo) + ")");
  }
  return es;
}

}  // namespace

double ssim(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  if (a.height < kSsimWindow || a.width < kSsimWindow) throw std::invalid_argument("ssim: image smaller than window");
  const auto la = luma(a), lb = luma(b);
  return kernels::ssim_mean(la, lb, a.height, a.width, kSsimWindow, kSsimC1, kSsimC2);
}

FeatureStats stats_from_features(std::span<const Embedding> f) {
  if (f.size() < 2) throw std::invalid_argument("feature_stats: need at least 2 samples, got " + std::to_string(f.size()));
  const std::size_t d = f[0].dim();
  FeatureStats s;
  s.count = f.size();
  s.mean.assign(d, 0.0);
  s.cov.assign(d * d, 0.0);
  for (const auto& e : f) {
    if (e.dim() != d) throw std::invalid_argument("feature_stats: inconsistent feature dimension");
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += e.values[i];
  }
  for (auto& m : s.mean) m /= static_cast<double>(f.size());
  for (const auto& e : f) {
    for (std::size_t i = 0; i < d; ++i) {
      const double di = e.values[i] - s.mean[i];
      for (std::size_t j = 0; j < d; ++j) s.cov[i * d + j] += di * (e.values[j] - s.mean[j]);
    }
  }
  for (auto& c : s.cov) c /= static_cast<double>(f.size() - 1);
  return s;
}

FeatureStats feature_stats(std::span<const ImageTensor> images, const SemanticEncoderParams& frozen) {
  if (images.size() < 2) throw std::invalid_argument("feature_stats: need at least 2 images");
  const auto f = semantic_features(images, frozen);
  return stats_from_features(f);
}

double frechet_distance(const FeatureStats& p, const FeatureStats& q) {
  if (p.dim() != q.dim() || p.dim() == 0) throw std::invalid_argument("frechet_distance: dimension mismatch");
  if (p.cov.size() != p.dim() * p.dim() || q.cov.size() != q.dim() * q.dim()) {
    throw std::invalid_argument("frechet_distance: covariance size mismatch");
  }
  double mean_term = 0;
  for (std::size_t i = 0; i < p.dim(); ++i) mean_term += (p.mean[i] - q.mean[i]) * (p.mean[i] - q.mean[i]);

  const Eigen::MatrixXd sp = as_matrix(p), sq = as_matrix(q);
  const auto ep = psd_eigen(sp, "covariance p");
  psd_eigen(sq, "covariance q");
  const Eigen::VectorXd root = ep.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sp_half = ep.eigenvectors() * root.asDiagonal() * ep.eigenvectors().transpose();
  Eigen::MatrixXd m = sp_half * sq * sp_half;
  m = 0.5 * (m + m.transpose());
  const auto em = psd_eigen(m, "covariance product");
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fid = mean_term + sp.trace() + sq.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, fid);
}

double clip_score(std::span<const Embedding> image_emb, std::span<const Embedding> text_emb) {
  if (image_emb.empty()) throw std::invalid_argument("clip_score: empty input");
  if (image_emb.size() != text_emb.size()) throw std::invalid_argument("clip_score: length mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < image_emb.size(); ++i) acc += cosine_sim(image_emb[i], text_emb[i]);
  return acc / static_cast<double>(image_emb.size());
}

double clip_score(std::span<const ImageTensor> images, std::span<const Caption> captions,
                  const TextEncoderParams& text, const ImageEncoderParams& image) {
  if (images.empty()) throw std::invalid_argument("clip_score: empty input");
  if (images.size() != captions.size()) throw std::invalid_argument("clip_score: length mismatch");
  return clip_score(encode_images(images, image), encode_texts(captions, text));
}

double shuffled_clip_score(std::span<const ImageTensor> images, std::span<const Caption> captions,
                           const TextEncoderParams& text, const ImageEncoderParams& image) {
  if (images.size() < 2) throw std::invalid_argument("shuffled_clip_score: need at least 2 items");
  if (images.size() != captions.size()) throw std::invalid_argument("shuffled_clip_score: length mismatch");
  auto t = encode_texts(captions, text);
  std::rotate(t.begin(), t.begin() + 1, t.end());
  return clip_score(encode_images(images, image), t);
}

std::string MetricReport::to_json() const {
  nlohmann::json j{{"clip_score", clip_score},
                   {"fid", fid},
                   {"fid_label", "FID (internal feature space)"},
                   {"ssim", ssim},
                   {"n_items", items.size()},
                   {"feature_space", "internal"}};
  return j.dump(2) + "\n";
}

std::string MetricReport::items_csv() const {
  std::string out = "index,image,ref_index,clip,ssim\n";
  char buf[512];
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%.9g,%.9g\n", i, items[i].image.c_str(), items[i].ref_index,
                  items[i].clip, items[i].ssim);
    out += buf;
  }
  return out;
}

MetricReport evaluate_images(std::span<const ImageTensor> generated, std::span<const ImageTensor> references,
                             std::span<const Caption> captions, const EvalModels& models,
                             std::span<const std::string> names, std::span<const std::size_t> ref_index) {
  if (generated.empty()) throw std::invalid_argument("evaluate: no generated images");
  if (references.size() != generated.size() || captions.size() != generated.size()) {
    throw std::invalid_argument("evaluate: generated, reference and caption counts differ");
  }
  if (!models.text || !models.image || !models.semantic) throw std::invalid_argument("evaluate: missing models");
  const auto iv = encode_images(generated, *models.image);
  const auto tv = encode_texts(captions, *models.text);
  MetricReport r;
  double clip_acc = 0, ssim_acc = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    ItemMetrics m;
    m.image = i < names.size() ? names[i] : std::to_string(i);
    m.ref_index = i < ref_index.size() ? ref_index[i] : i;
    m.clip = cosine_sim(iv[i], tv[i]);
    m.ssim = ssim(generated[i], references[i]);
    clip_acc += m.clip;
    ssim_acc += m.ssim;
    r.items.push_back(std::move(m));
  }
  r.clip_score = clip_acc / static_cast<double>(generated.size());
  r.ssim = ssim_acc / static_cast<double>(generated.size());
  if (generated.size() >= 2) {
    r.fid = frechet_distance(feature_stats(generated, *models.semantic), feature_stats(references, *models.semantic));
  }
  return r;
}

MetricReport evaluate(const std::filesystem::path& gen_dir, const CorpusManifest& ref, const EvalModels& models) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(gen_dir)) throw std::runtime_error("evaluate: not a directory: " + gen_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(gen_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("evaluate: no generated images in " + gen_dir.string());

  std::vector<ImageTensor> gen, refs;
  std::vector<Caption> caps;
  std::vector<std::string> names;
  std::vector<std::size_t> idx;
  for (const auto& f : files) {
    fs::path side = f;
    side.replace_extension(".json");
    if (!fs::exists(side)) throw std::runtime_error("evaluate: missing sidecar " + side.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(side));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("evaluate: bad sidecar " + side.string() + ": " + e.what());
    }
    if (!j.contains("ref_index") || !j.contains("caption")) {
      throw std::runtime_error("evaluate: sidecar " + side.string() + " lacks ref_index/caption");
    }
    const auto ri = j.at("ref_index").get<std::size_t>();
    if (ri >= ref.records.size()) throw std::runtime_error("evaluate: ref_index out of range in " + side.string());
    gen.push_back(read_pnm(f));
    refs.push_back(read_pnm(ref.root / ref.records[ri].image_path));
    caps.push_back(tokenize(j.at("caption").get<std::string>()));
    names.push_back(f.filename().string());
    idx.push_back(ri);
  }
  return evaluate_images(gen, refs, caps, models, names, idx);
}

}  // namespace t2i
