#include "t2i/encoders.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace t2i {

namespace {

template <class T>
ag::Var conv_trunk(ag::Tape<T>& tape, const ConvTrunkArch& arch, const std::vector<ag::Var>& p,
                   ag::Var images) {
  const Shape s = tape.shape(images);
  if (s.rank() != 4 || s[1] != arch.in_ch || s[2] != arch.canvas || s[3] != arch.canvas) {
    throw std::invalid_argument("image batch " + s.str() + " does not match encoder canvas " +
                                std::to_string(arch.canvas));
  }
  ag::Var h = ag::silu(tape, ag::conv3x3(tape, images, p[0], p[1], 2));
  h = ag::silu(tape, ag::conv3x3(tape, h, p[2], p[3], 2));
  return ag::reshape(tape, h, Shape{s[0], arch.flat()});
}

void add_trunk(ParamSet<float>& ps, const ConvTrunkArch& a, Rng& rng) {
  ps.add("conv1.w", Shape{a.c1, a.in_ch, 3, 3},
         glorot_uniform(static_cast<std::size_t>(a.c1) * a.in_ch * 9, a.in_ch * 9, a.c1 * 9, rng));
  ps.add("conv1.b", Shape{a.c1}, std::vector<float>(static_cast<std::size_t>(a.c1), 0.0f));
  ps.add("conv2.w", Shape{a.c2, a.c1, 3, 3},
         glorot_uniform(static_cast<std::size_t>(a.c2) * a.c1 * 9, a.c1 * 9, a.c2 * 9, rng));
  ps.add("conv2.b", Shape{a.c2}, std::vector<float>(static_cast<std::size_t>(a.c2), 0.0f));
}

void add_dense(ParamSet<float>& ps, const std::string& name, int in, int out, Rng& rng) {
  ps.add(name + ".w", Shape{out, in}, glorot_uniform(static_cast<std::size_t>(out) * in, in, out, rng));
  ps.add(name + ".b", Shape{out}, std::vector<float>(static_cast<std::size_t>(out), 0.0f));
}

std::vector<Embedding> rows_to_embeddings(std::span<const float> v, int rows, int dim) {
  std::vector<Embedding> out;
  out.reserve(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r)
    out.emplace_back(std::vector<float>(v.begin() + r * dim, v.begin() + (r + 1) * dim));
  return out;
}

void require_frozen(const SemanticEncoderParams& p) {
  if (!p.params.frozen()) {
    throw FrozenParamError("semantic_features requires frozen (pretrained) encoder parameters");
  }
}

}  // namespace

TextEncoderArch default_text_arch(int out_dim) {
  TextEncoderArch a;
  a.vocab = vocab_size();
  a.out_dim = out_dim;
  return a;
}

TextEncoderParams init_text_encoder(const TextEncoderArch& arch, std::uint64_t seed) {
  if (arch.vocab <= 0 || arch.out_dim <= 0) throw std::invalid_argument("text encoder: bad dimensions");
  Rng rng(seed);
  TextEncoderParams p{arch, {}};
  p.params.add("embed", Shape{arch.vocab, arch.embed_width},
               glorot_uniform(static_cast<std::size_t>(arch.vocab) * arch.embed_width, arch.vocab,
                              arch.embed_width, rng));
  add_dense(p.params, "fc1", arch.embed_width, arch.hidden, rng);
  add_dense(p.params, "fc2", arch.hidden, arch.out_dim, rng);
  return p;
}

ImageEncoderParams init_image_encoder(const ImageEncoderArch& arch, std::uint64_t seed) {
  if (arch.out_dim <= 0) throw std::invalid_argument("image encoder: bad dimensions");
  Rng rng(seed);
  ImageEncoderParams p{arch, {}};
  add_trunk(p.params, arch.trunk, rng);
  add_dense(p.params, "fc1", arch.trunk.flat(), arch.hidden, rng);
  add_dense(p.params, "fc2", arch.hidden, arch.out_dim, rng);
  return p;
}

SemanticEncoderParams init_semantic_encoder(const SemanticArch& arch, std::uint64_t seed) {
  Rng rng(seed);
  SemanticEncoderParams p{arch, {}};
  add_trunk(p.params, arch.trunk, rng);
  add_dense(p.params, "feat", arch.trunk.flat(), arch.feature_dim, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

template <class T>
ag::Var text_encoder_graph(ag::Tape<T>& tape, const TextEncoderArch& arch, const std::vector<ag::Var>& p,
                           const std::vector<int>& padded) {
  (void)arch;
  ag::Var h = ag::embedding_mean(tape, p[0], padded, kMaxCaptionTokens);
  h = ag::silu(tape, ag::linear(tape, h, p[1], p[2]));
  return ag::linear(tape, h, p[3], p[4]);
}

template <class T>
ag::Var image_encoder_graph(ag::Tape<T>& tape, const ImageEncoderArch& arch, const std::vector<ag::Var>& p,
                            ag::Var images) {
  ag::Var h = conv_trunk(tape, arch.trunk, p, images);
  h = ag::silu(tape, ag::linear(tape, h, p[4], p[5]));
  return ag::linear(tape, h, p[6], p[7]);
}

template <class T>
ag::Var semantic_encoder_graph(ag::Tape<T>& tape, const SemanticArch& arch, const std::vector<ag::Var>& p,
                               ag::Var images) {
  ag::Var h = conv_trunk(tape, arch.trunk, p, images);
  return ag::silu(tape, ag::linear(tape, h, p[4], p[5]));
}

template <class T>
ag::Var structure_graph(ag::Tape<T>& tape, ag::Var images) {
  const Shape s = tape.shape(images);
  if (s.rank() != 4 || s[2] % 4 != 0 || s[3] % 4 != 0) {
    throw std::invalid_argument("structure features need [N,C,H,W] with H,W divisible by 4, got " + s.str());
  }
  const T delta = static_cast<T>(kStructureDelta);
  ag::Var l0 = ag::luminance(tape, images);
  ag::Var l1 = ag::avgpool2(tape, l0);
  ag::Var l2 = ag::avgpool2(tape, l1);
  return ag::flatten_concat(tape, {ag::sobel_magnitude(tape, l0, delta), ag::sobel_magnitude(tape, l1, delta),
                                   ag::sobel_magnitude(tape, l2, delta)});
}

#define T2I_INSTANTIATE_GRAPHS(T)                                                                     \
  template ag::Var text_encoder_graph<T>(ag::Tape<T>&, const TextEncoderArch&,                        \
                                         const std::vector<ag::Var>&, const std::vector<int>&);       \
  template ag::Var image_encoder_graph<T>(ag::Tape<T>&, const ImageEncoderArch&,                      \
                                          const std::vector<ag::Var>&, ag::Var);                      \
  template ag::Var semantic_encoder_graph<T>(ag::Tape<T>&, const SemanticArch&,                       \
                                             const std::vector<ag::Var>&, ag::Var);                   \
  template ag::Var structure_graph<T>(ag::Tape<T>&, ag::Var);                                         \
  template std::vector<T> stack_images<T>(std::span<const ImageTensor>);

std::vector<int> padded_tokens(std::span<const Caption> captions) {
  std::vector<int> out;
  out.reserve(captions.size() * kMaxCaptionTokens);
  for (const auto& c : captions) {
    if (c.tokens.size() > kMaxCaptionTokens) throw std::invalid_argument("caption longer than 16 tokens");
    for (int id : c.tokens)
      if (id < 0 || id >= vocab_size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
    const auto p = c.padded();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <class T>
std::vector<T> stack_images(std::span<const ImageTensor> images) {
  if (images.empty()) return {};
  std::vector<T> out;
  out.reserve(images.size() * images[0].size());
  for (const auto& img : images) {
    if (!img.same_shape(images[0])) throw std::invalid_argument("stack_images: mixed image shapes");
    out.insert(out.end(), img.data.begin(), img.data.end());
  }
  return out;
}

T2I_INSTANTIATE_GRAPHS(float)
T2I_INSTANTIATE_GRAPHS(double)
#undef T2I_INSTANTIATE_GRAPHS

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

std::vector<Embedding> encode_texts(std::span<const Caption> captions, const TextEncoderParams& params) {
  ag::Tape<float> tape;
  const auto p = bind(tape, params.params, false);
  const ag::Var out = text_encoder_graph(tape, params.arch, p, padded_tokens(captions));
  return rows_to_embeddings(tape.value(out), static_cast<int>(captions.size()), params.arch.out_dim);
}

Embedding encode_text(const Caption& caption, const TextEncoderParams& params) {
  return encode_texts(std::span<const Caption>(&caption, 1), params).front();
}

std::vector<Embedding> encode_images(std::span<const ImageTensor> images, const ImageEncoderParams& params) {
  if (images.empty()) return {};
  ag::Tape<float> tape;
  const auto p = bind(tape, params.params, false);
  const ImageTensor& f = images.front();
  const ag::Var x = tape.constant(Shape{static_cast<int>(images.size()), f.channels, f.height, f.width},
                                  stack_images<float>(images));
  const ag::Var out = image_encoder_graph(tape, params.arch, p, x);
  return rows_to_embeddings(tape.value(out), static_cast<int>(images.size()), params.arch.out_dim);
}

Embedding encode_image(const ImageTensor& image, const ImageEncoderParams& params) {
  return encode_images(std::span<const ImageTensor>(&image, 1), params).front();
}

FeatureStack structure_features(const ImageTensor& image) {
  ag::Tape<double> tape;
  const ag::Var x = tape.constant(Shape{1, image.channels, image.height, image.width},
                                  std::vector<double>(image.data.begin(), image.data.end()));
  const ag::Var phi = structure_graph(tape, x);
  auto v = tape.value(phi);
  return FeatureStack{std::vector<double>(v.begin(), v.end())};
}

std::vector<Embedding> semantic_features(std::span<const ImageTensor> images, const SemanticEncoderParams& frozen) {
  require_frozen(frozen);
  if (images.empty()) return {};
  ag::Tape<float> tape;
  const auto p = bind(tape, frozen.params, false);
  const ImageTensor& f = images.front();
  const ag::Var x = tape.constant(Shape{static_cast<int>(images.size()), f.channels, f.height, f.width},
                                  stack_images<float>(images));
  const ag::Var out = semantic_encoder_graph(tape, frozen.arch, p, x);
  return rows_to_embeddings(tape.value(out), static_cast<int>(images.size()), frozen.arch.feature_dim);
}

Embedding semantic_features(const ImageTensor& image, const SemanticEncoderParams& frozen) {
  return semantic_features(std::span<const ImageTensor>(&image, 1), frozen).front();
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

SemanticEncoderParams pretrain_semantic_encoder(const Corpus& corpus, const PretrainConfig& config,
                                                PretrainReport* report) {
  if (corpus.items.size() < 32) {
    throw std::invalid_argument("pretrain: corpus too small (" + std::to_string(corpus.items.size()) +
                                " items, need >= 32)");
  }
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0)) {
    throw std::invalid_argument("pretrain: invalid configuration");
  }
  std::set<int> classes;
  for (const auto& it : corpus.items) classes.insert(it.scene.dominant().class_id());
  if (classes.size() < 2) throw std::invalid_argument("pretrain: corpus needs at least 2 scene classes");

  SemanticArch arch = config.arch;
  arch.trunk.canvas = corpus.canvas_size;
  SemanticEncoderParams enc = init_semantic_encoder(arch, derive_seed(config.seed, 0xF00D));
  ParamSet<float> head;
  {
    Rng rng(derive_seed(config.seed, 0xF00D, 1));
    add_dense(head, "head", arch.feature_dim, arch.classes, rng);
  }

  const std::vector<std::size_t> train_idx = corpus.indices(Split::kTrain);
  const std::vector<std::size_t> eval_idx = corpus.indices(Split::kEval);
  if (train_idx.empty()) throw std::invalid_argument("pretrain: no training items");
  const float lr = static_cast<float>(config.learning_rate);
  PretrainReport rep;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng rng(derive_seed(config.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<ImageTensor> imgs;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        imgs.push_back(corpus.items[order[k]].image);
        labels.push_back(corpus.items[order[k]].scene.dominant().class_id());
      }
      ag::Tape<float> tape;
      const auto pe = bind(tape, enc.params, true);
      const auto ph = bind(tape, head, true);
      const ag::Var x = tape.constant(Shape{static_cast<int>(imgs.size()), 3, arch.trunk.canvas, arch.trunk.canvas},
                                      stack_images<float>(imgs));
      const ag::Var feat = semantic_encoder_graph(tape, arch, pe, x);
      const ag::Var logits = ag::linear(tape, feat, ph[0], ph[1]);
      const ag::Var loss = ag::softmax_xent(tape, logits, labels, 1.0f);
      tape.backward(loss);
      const double lv = tape.item(loss);
      if (epoch == 0) rep.batch_losses.push_back(lv);
      epoch_sum += lv;
      ++batches;
      for (std::size_t i = 0; i < pe.size(); ++i) {
        auto& d = enc.params.mutable_data(i);
        auto g = tape.grad(pe[i]);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * g[k];
      }
      for (std::size_t i = 0; i < ph.size(); ++i) {
        auto& d = head.mutable_data(i);
        auto g = tape.grad(ph[i]);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * g[k];
      }
    }
    rep.epoch_losses.push_back(batches ? epoch_sum / batches : 0.0);
  }

  if (!eval_idx.empty()) {
    std::size_t correct = 0;
    for (std::size_t start = 0; start < eval_idx.size(); start += 64) {
      const std::size_t end = std::min(eval_idx.size(), start + 64);
      std::vector<ImageTensor> imgs;
      for (std::size_t k = start; k < end; ++k) imgs.push_back(corpus.items[eval_idx[k]].image);
      ag::Tape<float> tape;
      const auto pe = bind(tape, enc.params, false);
      const auto ph = bind(tape, head, false);
      const ag::Var x = tape.constant(Shape{static_cast<int>(imgs.size()), 3, arch.trunk.canvas, arch.trunk.canvas},
                                      stack_images<float>(imgs));
      const ag::Var logits = ag::linear(tape, semantic_encoder_graph(tape, arch, pe, x), ph[0], ph[1]);
      auto lv = tape.value(logits);
      for (std::size_t r = 0; r < imgs.size(); ++r) {
        const auto row = lv.subspan(r * static_cast<std::size_t>(arch.classes), static_cast<std::size_t>(arch.classes));
        const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (pred == corpus.items[eval_idx[start + r]].scene.dominant().class_id()) ++correct;
      }
    }
    rep.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(eval_idx.size());
  }
  if (report) *report = std::move(rep);
  enc.params.freeze();
  return enc;
}

}  // namespace t2i
