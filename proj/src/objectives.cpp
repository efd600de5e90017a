#include "t2i/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace t2i {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

void LossWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3}) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("loss weights must be finite and >= 0");
  }
  const bool all_zero = lambda1 == 0.0 && lambda2 == 0.0 && lambda3 == 0.0;
  if (denoise_only_mode && !all_zero) throw ConfigError("denoise_only requires all loss weights to be zero");
  if (!denoise_only_mode && all_zero) throw ConfigError("loss weights are all zero (use denoise_only)");
}

double cosine_sim(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("cosine_sim: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += static_cast<double>(a.values[i]) * b.values[i];
    na += static_cast<double>(a.values[i]) * a.values[i];
    nb += static_cast<double>(b.values[i]) * b.values[i];
  }
  return dot / (std::max(std::sqrt(na), ag::kCosineEps) * std::max(std::sqrt(nb), ag::kCosineEps));
}

double clip_loss(std::span<const Embedding> v, std::span<const Embedding> t, const ContrastiveConfig& cfg) {
  if (v.empty()) throw std::invalid_argument("clip_loss: empty batch");
  if (v.size() != t.size()) throw std::invalid_argument("clip_loss: batch size mismatch");
  const int n = static_cast<int>(v.size());
  std::vector<double> sim(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sim[static_cast<std::size_t>(i) * n + j] = cosine_sim(v[i], t[j]);
  return clip_loss_from_similarity(sim, n, cfg);
}

double clip_loss_from_similarity(std::span<const double> sim, int n, const ContrastiveConfig& cfg) {
  if (n < 1) throw std::invalid_argument("clip_loss: empty batch");
  if (sim.size() != static_cast<std::size_t>(n) * n) throw std::invalid_argument("clip_loss: similarity size");
  cfg.validate();
  ag::Tape<double> tape;
  const ag::Var s = tape.constant(Shape{n, n}, std::vector<double>(sim.begin(), sim.end()));
  std::vector<int> diag(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
  const double scale = 1.0 / cfg.temperature;
  double l = tape.item(ag::softmax_xent(tape, s, diag, scale));
  if (cfg.symmetric) l = 0.5 * (l + tape.item(ag::softmax_xent(tape, ag::transpose2d(tape, s), diag, scale)));
  return l;
}

double struct_loss(const FeatureStack& a, const FeatureStack& b) {
  if (a.values.size() != b.values.size() || a.values.empty()) {
    throw std::invalid_argument("struct_loss: feature size mismatch");
  }
  double acc = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) acc += std::abs(a.values[i] - b.values[i]);
  return acc / static_cast<double>(a.values.size());
}

double struct_loss(const ImageTensor& x_hat, const StructurePrior& s) {
  if (x_hat.height != s.edge_map.height || x_hat.width != s.edge_map.width) {
    throw std::invalid_argument("struct_loss: shape mismatch " + x_hat.shape().str() + " vs " +
                                s.edge_map.shape().str());
  }
  return struct_loss(structure_features(x_hat), structure_features(s.edge_map));
}

double sem_loss(const Embedding& f_xhat, const Embedding& f_x) { return 1.0 - cosine_sim(f_xhat, f_x); }

double total_loss(const LossParts& p, const LossWeights& w) {
  const std::pair<const char*, double> terms[] = {
      {"l_clip", p.l_clip}, {"l_struct", p.l_struct}, {"l_sem", p.l_sem}, {"l_denoise", p.l_denoise}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NanLossError(std::string("non-finite loss term ") + name);
  }
  return w.lambda1 * p.l_clip + w.lambda2 * p.l_struct + w.lambda3 * p.l_sem + p.l_denoise;
}

LossReport make_report(const LossParts& parts, const LossWeights& w) {
  LossReport r;
  static_cast<LossParts&>(r) = parts;
  r.l_total = total_loss(parts, w);
  return r;
}

}  // namespace t2i
