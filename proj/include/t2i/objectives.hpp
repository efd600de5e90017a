#pragma once

#include <span>
#include <vector>

#include "t2i/autograd.hpp"
#include "t2i/corpus.hpp"
#include "t2i/encoders.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

struct ContrastiveConfig {
  double temperature = 0.07;
  int batch_size = 32;
  bool symmetric = false;  // average image->text and text->image

  void validate() const;
};

// Weights of the auxiliary terms; the denoising MSE always enters at weight 1.
// All-zero weights are only legal through denoise_only().
struct LossWeights {
  double lambda1 = 0.5;
  double lambda2 = 1.0;
  double lambda3 = 0.5;
  bool denoise_only_mode = false;

  static LossWeights denoise_only() { return {0.0, 0.0, 0.0, true}; }
  void validate() const;
};

struct LossParts {
  double l_clip = 0.0;
  double l_struct = 0.0;
  double l_sem = 0.0;
  double l_denoise = 0.0;
};

struct LossReport : LossParts {
  double l_total = 0.0;
};

// a.b / (max(|a|,eps) max(|b|,eps))
double cosine_sim(const Embedding& a, const Embedding& b);

double clip_loss(std::span<const Embedding> v, std::span<const Embedding> t, const ContrastiveConfig& cfg);
// Same loss from a precomputed row-major N x N similarity matrix.
double clip_loss_from_similarity(std::span<const double> sim, int n, const ContrastiveConfig& cfg);

// Mean absolute difference of phi(x_hat) and phi(s); images in [0,1].
double struct_loss(const ImageTensor& x_hat, const StructurePrior& s);
double struct_loss(const FeatureStack& a, const FeatureStack& b);

double sem_loss(const Embedding& f_xhat, const Embedding& f_x);

// Throws NanLossError naming the first non-finite term.
double total_loss(const LossParts& parts, const LossWeights& w);
LossReport make_report(const LossParts& parts, const LossWeights& w);

// ---------------------------------------------------------------------------
// Graph forms used by training and gradient checks
// ---------------------------------------------------------------------------

template <class T>
ag::Var clip_loss_graph(ag::Tape<T>& tape, ag::Var v, ag::Var t, const ContrastiveConfig& cfg) {
  const int n = tape.shape(v)[0];
  std::vector<int> diag(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
  const T scale = static_cast<T>(1.0 / cfg.temperature);
  const ag::Var sims = ag::cosine_matrix(tape, v, t);
  const ag::Var i2t = ag::softmax_xent(tape, sims, diag, scale);
  if (!cfg.symmetric) return i2t;
  const ag::Var t2i = ag::softmax_xent(tape, ag::transpose2d(tape, sims), diag, scale);
  return ag::weighted_sum(tape, {i2t, t2i}, std::vector<T>{T(0.5), T(0.5)});
}

// x_hat and s are [N,C,H,W] batches in [0,1].
template <class T>
ag::Var struct_loss_graph(ag::Tape<T>& tape, ag::Var x_hat, ag::Var s) {
  return ag::mean_abs_diff(tape, structure_graph(tape, x_hat), structure_graph(tape, s));
}

// Mean over rows of 1 - cos(a_i, b_i).
template <class T>
ag::Var sem_loss_graph(ag::Tape<T>& tape, ag::Var a, ag::Var b) {
  return ag::mean(tape, ag::affine(tape, ag::cosine_rows(tape, a, b), T(-1), T(1)));
}

}  // namespace t2i
