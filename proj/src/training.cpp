#include "t2i/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "t2i/config.hpp"

namespace t2i {

namespace {

constexpr std::uint64_t kTextInitStream = 0x7E47;
constexpr std::uint64_t kImageInitStream = 0x1A6E;
constexpr std::uint64_t kDenoiserInitStream = 0xDE01;
constexpr std::uint64_t kBatchStream = 0xBA7C;
constexpr std::uint64_t kNoiseStream = 0x401E;

void sgd(ParamSet<float>& ps, const ag::Tape<float>& tape, const std::vector<ag::Var>& vars, float lr) {
  for (std::size_t i = 0; i < vars.size(); ++i) {
    auto g = tape.grad(vars[i]);
    if (g.empty()) continue;
    auto& d = ps.mutable_data(i);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * g[k];
  }
}

// Copies loaded tensors into a freshly initialized set after checking names and shapes.
void adopt(ParamSet<float>& target, const ParamSet<float>& loaded, const std::string& group) {
  if (target.size() != loaded.size()) {
    throw std::runtime_error("checkpoint group '" + group + "' has " + std::to_string(loaded.size()) +
                             " tensors, expected " + std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].name != loaded[i].name || !(target[i].shape == loaded[i].shape)) {
      throw std::runtime_error("checkpoint group '" + group + "': tensor " + loaded[i].name + " " +
                               loaded[i].shape.str() + " does not match " + target[i].name + " " +
                               target[i].shape.str());
    }
    target.mutable_data(i) = loaded[i].data;
  }
}

void add_trunk_meta(Checkpoint& c, const std::string& prefix, const ConvTrunkArch& t) {
  c.meta.emplace_back(prefix + ".canvas", t.canvas);
  c.meta.emplace_back(prefix + ".c1", t.c1);
  c.meta.emplace_back(prefix + ".c2", t.c2);
}

ConvTrunkArch trunk_from_meta(const Checkpoint& c, const std::string& prefix) {
  ConvTrunkArch t;
  t.canvas = static_cast<int>(c.meta_value(prefix + ".canvas"));
  t.c1 = static_cast<int>(c.meta_value(prefix + ".c1"));
  t.c2 = static_cast<int>(c.meta_value(prefix + ".c2"));
  return t;
}

void add_semantic_meta(Checkpoint& c, const SemanticArch& a) {
  add_trunk_meta(c, "semantic", a.trunk);
  c.meta.emplace_back("semantic.feature_dim", a.feature_dim);
  c.meta.emplace_back("semantic.classes", a.classes);
}

SemanticArch semantic_arch_from_meta(const Checkpoint& c) {
  SemanticArch a;
  a.trunk = trunk_from_meta(c, "semantic");
  a.feature_dim = static_cast<int>(c.meta_value("semantic.feature_dim"));
  a.classes = static_cast<int>(c.meta_value("semantic.classes"));
  return a;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be >= 0");
  if (timesteps < 2) throw ConfigError("train.timesteps must be >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("train: need 0 < beta_start <= beta_end < 1");
  }
  if (embed_dim < 1) throw ConfigError("train.embed_dim must be >= 1");
  if (denoiser_hidden < 1) throw ConfigError("train.denoiser_hidden must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be >= 0");
  weights.validate();
  contrastive().validate();
}

ModelArchs archs_for(const TrainConfig& cfg, int canvas, const SemanticArch& semantic) {
  ModelArchs a;
  a.text = default_text_arch(cfg.embed_dim);
  a.image.trunk.canvas = canvas;
  a.image.out_dim = cfg.embed_dim;
  a.semantic = semantic;
  a.denoiser.canvas = canvas;
  a.denoiser.hidden = cfg.denoiser_hidden;
  a.denoiser.text_dim = cfg.embed_dim;
  return a;
}

TrainState init_train_state(const TrainConfig& cfg, int canvas, SemanticEncoderParams semantic) {
  if (!semantic.params.frozen()) throw FrozenParamError("training requires a frozen semantic encoder");
  if (semantic.arch.trunk.canvas != canvas) {
    throw std::invalid_argument("semantic encoder canvas " + std::to_string(semantic.arch.trunk.canvas) +
                                " does not match corpus canvas " + std::to_string(canvas));
  }
  const ModelArchs a = archs_for(cfg, canvas, semantic.arch);
  TrainState s{init_text_encoder(a.text, derive_seed(cfg.seed, kTextInitStream)),
               init_image_encoder(a.image, derive_seed(cfg.seed, kImageInitStream)),
               init_denoiser(a.denoiser, derive_seed(cfg.seed, kDenoiserInitStream)),
               std::move(semantic),
               0,
               cfg.seed};
  return s;
}

TrainBatch make_batch(const Corpus& corpus, std::span<const std::size_t> indices) {
  TrainBatch b;
  for (std::size_t i : indices) {
    const CorpusItem& it = corpus.items.at(i);
    b.images.push_back(it.image);
    b.captions.push_back(it.caption);
    b.priors.push_back(StructurePrior{it.edge});
  }
  return b;
}

std::vector<std::size_t> batch_indices_for_step(const Corpus& corpus, const TrainConfig& cfg, std::uint64_t step) {
  std::vector<std::size_t> pool = corpus.indices(Split::kTrain);
  const std::size_t n = static_cast<std::size_t>(cfg.batch_size);
  if (pool.size() < n) {
    throw std::invalid_argument("batch size " + std::to_string(n) + " exceeds the " + std::to_string(pool.size()) +
                                " training items");
  }
  Rng rng(derive_seed(cfg.seed, kBatchStream, step));
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(n);
  return pool;
}

StepDraws draws_for_step(std::uint64_t seed, std::uint64_t step, int n, int channels, int canvas, int T) {
  Rng rng(derive_seed(seed, kNoiseStream, step));
  StepDraws d;
  for (int i = 0; i < n; ++i) d.timesteps.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T))));
  d.noise.resize(static_cast<std::size_t>(n) * channels * canvas * canvas);
  rng.fill_normal(d.noise);
  return d;
}

template <class T>
BatchTensors<T> batch_tensors(const TrainBatch& batch) {
  const std::size_t n = batch.images.size();
  if (n == 0 || batch.captions.size() != n || batch.priors.size() != n) {
    throw std::invalid_argument("training batch: empty or inconsistent");
  }
  BatchTensors<T> b;
  b.n = static_cast<int>(n);
  b.canvas = batch.images[0].height;
  b.images = stack_images<T>(batch.images);
  for (const auto& p : batch.priors) {
    if (p.edge_map.channels != 1 || p.edge_map.height != b.canvas || p.edge_map.width != b.canvas) {
      throw std::invalid_argument("training batch: prior shape " + p.edge_map.shape().str());
    }
    b.priors.insert(b.priors.end(), p.edge_map.data.begin(), p.edge_map.data.end());
  }
  b.tokens = padded_tokens(batch.captions);
  return b;
}

template <class T>
LossVars build_loss_graph(ag::Tape<T>& tape, const ModelArchs& archs, const ModelVars& vars, const BatchTensors<T>& b,
                          const StepDraws& draws, const NoiseSchedule& sched, const ContrastiveConfig& ccfg,
                          const LossWeights& w) {
  const int n = b.n, c = 3, side = b.canvas;
  const std::size_t per = static_cast<std::size_t>(c) * side * side;
  if (draws.timesteps.size() != static_cast<std::size_t>(n) || draws.noise.size() != per * n) {
    throw std::invalid_argument("loss graph: draws do not match batch");
  }
  const ag::Var x0 = tape.constant(Shape{n, c, side, side}, b.images);
  const ag::Var prior = tape.constant(Shape{n, 1, side, side}, b.priors);

  const ag::Var temb = text_encoder_graph(tape, archs.text, vars.text, b.tokens);
  const ag::Var vemb = image_encoder_graph(tape, archs.image, vars.image, x0);
  const ag::Var l_clip = clip_loss_graph(tape, vemb, temb, ccfg);

  std::vector<T> xt(per * n), eps(draws.noise.begin(), draws.noise.end());
  std::vector<T> c_eps(static_cast<std::size_t>(n)), inv_a(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double ab = sched.alpha_bar_at(draws.timesteps[i]);
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    c_eps[i] = static_cast<T>(sb);
    inv_a[i] = static_cast<T>(1.0 / sa);
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t j = i * per + k;
      xt[j] = static_cast<T>(sa * (2.0 * static_cast<double>(b.images[j]) - 1.0) + sb * static_cast<double>(eps[j]));
    }
  }
  const ag::Var x_t = tape.constant(Shape{n, c, side, side}, std::move(xt));
  const ag::Var eps_v = tape.constant(Shape{n, c, side, side}, std::move(eps));
  const ag::Var eps_hat = denoiser_graph(tape, archs.denoiser, vars.denoiser, x_t, prior, draws.timesteps, temb);
  const ag::Var l_denoise = ag::mse(tape, eps_hat, eps_v);

  ag::Var x_hat = ag::sub(tape, x_t, ag::scale_rows(tape, eps_hat, std::move(c_eps)));
  x_hat = ag::clamp(tape, ag::scale_rows(tape, x_hat, std::move(inv_a)), T(-1), T(1));
  const ag::Var x_hat_unit = ag::affine(tape, x_hat, T(0.5), T(0.5));

  const ag::Var l_struct = struct_loss_graph(tape, x_hat_unit, prior);
  const ag::Var f_hat = semantic_encoder_graph(tape, archs.semantic, vars.semantic, x_hat_unit);
  const ag::Var f_ref = semantic_encoder_graph(tape, archs.semantic, vars.semantic, x0);
  const ag::Var l_sem = sem_loss_graph(tape, f_hat, f_ref);

  const ag::Var total = ag::weighted_sum(
      tape, {l_clip, l_struct, l_sem, l_denoise},
      std::vector<T>{static_cast<T>(w.lambda1), static_cast<T>(w.lambda2), static_cast<T>(w.lambda3), T(1)});
  return {l_clip, l_struct, l_sem, l_denoise, total};
}

template BatchTensors<float> batch_tensors<float>(const TrainBatch&);
template BatchTensors<double> batch_tensors<double>(const TrainBatch&);
template LossVars build_loss_graph<float>(ag::Tape<float>&, const ModelArchs&, const ModelVars&,
                                          const BatchTensors<float>&, const StepDraws&, const NoiseSchedule&,
                                          const ContrastiveConfig&, const LossWeights&);
template LossVars build_loss_graph<double>(ag::Tape<double>&, const ModelArchs&, const ModelVars&,
                                           const BatchTensors<double>&, const StepDraws&, const NoiseSchedule&,
                                           const ContrastiveConfig&, const LossWeights&);

StepResult train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& cfg, const NoiseSchedule& sched) {
  if (!state.semantic.params.frozen()) throw FrozenParamError("train_step requires a frozen semantic encoder");
  const BatchTensors<float> b = batch_tensors<float>(batch);
  const ModelArchs archs{state.text.arch, state.image.arch, state.semantic.arch, state.denoiser.arch};
  StepResult res;
  res.draws = draws_for_step(state.seed, state.step, b.n, 3, b.canvas, sched.T);

  ag::Tape<float> tape;
  ModelVars vars;
  vars.text = bind(tape, state.text.params, true);
  vars.image = bind(tape, state.image.params, true);
  vars.semantic = bind(tape, state.semantic.params, false);
  vars.denoiser = bind(tape, state.denoiser.params, true);
  const LossVars lv = build_loss_graph(tape, archs, vars, b, res.draws, sched, cfg.contrastive(), cfg.weights);

  LossParts parts;
  parts.l_clip = tape.item(lv.clip);
  parts.l_struct = tape.item(lv.structure);
  parts.l_sem = tape.item(lv.semantic);
  parts.l_denoise = tape.item(lv.denoise);
  try {
    res.report = make_report(parts, cfg.weights);
  } catch (const NanLossError& e) {
    throw NanLossError(std::string(e.what()) + " at step " + std::to_string(state.step));
  }

  tape.backward(lv.total);
  for (ag::Var v : vars.semantic) {
    if (!tape.grad(v).empty()) throw std::logic_error("internal error: frozen semantic encoder received a gradient");
  }
  const float lr = static_cast<float>(cfg.learning_rate);
  sgd(state.text.params, tape, vars.text, lr);
  sgd(state.image.params, tape, vars.image, lr);
  sgd(state.denoiser.params, tape, vars.denoiser, lr);
  ++state.step;
  return res;
}

// ---------------------------------------------------------------------------
// Loop
// ---------------------------------------------------------------------------

std::string loss_csv_header() { return "step,l_clip,l_struct,l_sem,l_denoise,l_total"; }

std::string loss_csv_row(std::uint64_t step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(step), r.l_clip,
                r.l_struct, r.l_sem, r.l_denoise, r.l_total);
  return buf;
}

namespace {

std::vector<std::string> existing_rows(const std::filesystem::path& csv, std::uint64_t keep) {
  std::vector<std::string> rows;
  std::ifstream f(csv);
  if (!f) {
    if (keep > 0) throw std::runtime_error("resume: missing loss log " + csv.string());
    return rows;
  }
  std::string line;
  std::getline(f, line);
  while (rows.size() < keep && std::getline(f, line)) rows.push_back(line);
  if (rows.size() < keep) throw std::runtime_error("resume: loss log " + csv.string() + " has too few rows");
  return rows;
}

void write_rows(const std::filesystem::path& csv, const std::vector<std::string>& rows) {
  std::string text = loss_csv_header() + "\n";
  for (const auto& r : rows) text += r + "\n";
  write_text_file(csv, text);
}

std::string ckpt_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06llu.bin", static_cast<unsigned long long>(step));
  return buf;
}

}  // namespace

TrainState train(const Corpus& corpus, const TrainConfig& cfg, TrainState state, const TrainOptions& opts,
                 std::vector<LossReport>* log) {
  cfg.validate();
  if (corpus.items.empty()) throw std::invalid_argument("train: empty corpus");
  if (state.seed != cfg.seed) throw std::invalid_argument("train: state seed differs from configuration seed");
  const NoiseSchedule sched = cfg.schedule();
  const bool files = !opts.out_dir.empty();
  const std::filesystem::path csv = files ? opts.out_dir / "loss.csv" : std::filesystem::path{};
  std::vector<std::string> rows;
  if (files) {
    std::filesystem::create_directories(opts.out_dir);
    rows = existing_rows(csv, state.step);
  }
  const auto target = static_cast<std::uint64_t>(cfg.steps);
  while (state.step < target) {
    const std::uint64_t s = state.step;
    const auto idx = batch_indices_for_step(corpus, cfg, s);
    const StepResult r = train_step(state, make_batch(corpus, idx), cfg, sched);
    if (log) log->push_back(r.report);
    if (opts.on_step) opts.on_step(s, r.report);
    if (files) {
      rows.push_back(loss_csv_row(s, r.report));
      if (cfg.checkpoint_interval > 0 && state.step % static_cast<std::uint64_t>(cfg.checkpoint_interval) == 0) {
        save_train_checkpoint(opts.out_dir / ckpt_name(state.step), state, cfg);
        write_rows(csv, rows);
      }
    }
  }
  if (files) {
    save_train_checkpoint(opts.out_dir / "final.bin", state, cfg);
    write_rows(csv, rows);
  }
  return state;
}

TrainState train(const Corpus& corpus, const TrainConfig& cfg, const SemanticEncoderParams& semantic,
                 const TrainOptions& opts, std::vector<LossReport>* log) {
  cfg.validate();
  return train(corpus, cfg, init_train_state(cfg, corpus.canvas_size, semantic), opts, log);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

Checkpoint semantic_checkpoint(const SemanticEncoderParams& p, std::uint64_t seed) {
  Checkpoint c;
  c.seed = seed;
  add_semantic_meta(c, p.arch);
  c.groups.push_back({"semantic", p.params});
  return c;
}

SemanticEncoderParams semantic_from_checkpoint(const Checkpoint& c) {
  const SemanticArch arch = semantic_arch_from_meta(c);
  SemanticEncoderParams p = init_semantic_encoder(arch, 0);
  const CheckpointGroup& g = c.group("semantic");
  if (!g.params.frozen()) throw std::runtime_error("checkpoint: semantic encoder group is not marked frozen");
  adopt(p.params, g.params, "semantic");
  p.params.freeze();
  return p;
}

Checkpoint to_checkpoint(const TrainState& s) {
  Checkpoint c;
  c.step = s.step;
  c.seed = s.seed;
  c.meta.emplace_back("canvas", s.image.arch.trunk.canvas);
  c.meta.emplace_back("embed_dim", s.text.arch.out_dim);
  c.meta.emplace_back("text.vocab", s.text.arch.vocab);
  c.meta.emplace_back("text.embed_width", s.text.arch.embed_width);
  c.meta.emplace_back("text.hidden", s.text.arch.hidden);
  add_trunk_meta(c, "image", s.image.arch.trunk);
  c.meta.emplace_back("image.hidden", s.image.arch.hidden);
  c.meta.emplace_back("denoiser.hidden", s.denoiser.arch.hidden);
  c.meta.emplace_back("denoiser.time_dim", s.denoiser.arch.time_dim);
  c.meta.emplace_back("denoiser.prior_ch", s.denoiser.arch.prior_ch);
  add_semantic_meta(c, s.semantic.arch);
  c.groups.push_back({"text", s.text.params});
  c.groups.push_back({"image", s.image.params});
  c.groups.push_back({"denoiser", s.denoiser.params});
  c.groups.push_back({"semantic", s.semantic.params});
  return c;
}

TrainState from_checkpoint(const Checkpoint& c) {
  const int canvas = static_cast<int>(c.meta_value("canvas"));
  const int d = static_cast<int>(c.meta_value("embed_dim"));
  TextEncoderArch ta = default_text_arch(d);
  ta.vocab = static_cast<int>(c.meta_value("text.vocab"));
  ta.embed_width = static_cast<int>(c.meta_value("text.embed_width"));
  ta.hidden = static_cast<int>(c.meta_value("text.hidden"));
  ImageEncoderArch ia;
  ia.trunk = trunk_from_meta(c, "image");
  ia.hidden = static_cast<int>(c.meta_value("image.hidden"));
  ia.out_dim = d;
  DenoiserArch da;
  da.canvas = canvas;
  da.hidden = static_cast<int>(c.meta_value("denoiser.hidden"));
  da.time_dim = static_cast<int>(c.meta_value("denoiser.time_dim"));
  da.prior_ch = static_cast<int>(c.meta_value("denoiser.prior_ch"));
  da.text_dim = d;

  TrainState s{init_text_encoder(ta, 0), init_image_encoder(ia, 0), init_denoiser(da, 0),
               semantic_from_checkpoint(c), c.step, c.seed};
  adopt(s.text.params, c.group("text").params, "text");
  adopt(s.image.params, c.group("image").params, "image");
  adopt(s.denoiser.params, c.group("denoiser").params, "denoiser");
  return s;
}

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg) {
  const Checkpoint c = to_checkpoint(state);
  save_checkpoint(path, c);
  nlohmann::json side;
  side["format"] = "t2i-checkpoint";
  side["version"] = kCheckpointVersion;
  side["step"] = state.step;
  side["seed"] = state.seed;
  side["train"] = to_json(cfg);
  nlohmann::json arch = nlohmann::json::object();
  for (const auto& [k, v] : c.meta) arch[k] = v;
  side["arch"] = arch;
  std::filesystem::path sidecar = path;
  sidecar.replace_extension(".json");
  write_text_file(sidecar, side.dump(2) + "\n");
}

}  // namespace t2i
