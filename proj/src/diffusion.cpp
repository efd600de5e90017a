#include "t2i/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace t2i {

std::size_t NoiseSchedule::idx(int t) const {
  if (t < 1 || t > T) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0)) throw std::invalid_argument("build_schedule: beta_start must be > 0");
  if (!(beta_start <= beta_end)) throw std::invalid_argument("build_schedule: beta_start must be <= beta_end");
  if (!(beta_end < 1.0)) throw std::invalid_argument("build_schedule: beta_end must be < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double b =
        T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
    prod *= 1.0 - b;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(prod);
    s.sigma.push_back(t == 1 ? 0.0 : std::sqrt(b));
  }
  return s;
}

namespace {

void require_same(const ImageTensor& a, const ImageTensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

ImageTensor forward_noise(const ImageTensor& x0, int t, const ImageTensor& eps, const NoiseSchedule& sched) {
  require_same(x0, eps, "forward_noise");
  const double ab = sched.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  ImageTensor out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = static_cast<float>(a * x0.data[i] + b * eps.data[i]);
  return out;
}

ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps_hat, int t, const NoiseSchedule& sched,
                       bool clamp) {
  require_same(x_t, eps_hat, "predict_x0");
  const double ab = sched.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  ImageTensor out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = (x_t.data[i] - b * eps_hat.data[i]) / a;
    if (clamp) v = std::clamp(v, -1.0, 1.0);
    out.data[i] = static_cast<float>(v);
  }
  return out;
}

ImageTensor to_model_range(const ImageTensor& img) {
  ImageTensor out = img;
  for (auto& v : out.data) v = 2.0f * v - 1.0f;
  return out;
}

ImageTensor to_unit_range(const ImageTensor& img) {
  ImageTensor out = img;
  for (auto& v : out.data) v = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

DenoiserParams init_denoiser(const DenoiserArch& a, std::uint64_t seed) {
  if (a.hidden <= 0 || a.time_dim <= 0 || a.time_dim % 2 != 0 || a.text_dim <= 0) {
    throw std::invalid_argument("init_denoiser: bad dimensions");
  }
  Rng rng(seed);
  DenoiserParams p{a, {}};
  auto& ps = p.params;
  const int in_ch = a.image_ch + a.prior_ch;
  const auto n = [](int x, int y) { return static_cast<std::size_t>(x) * y; };
  ps.add("conv1.w", Shape{a.hidden, in_ch, 3, 3}, glorot_uniform(n(a.hidden, in_ch * 9), in_ch * 9, a.hidden * 9, rng));
  ps.add("conv1.b", Shape{a.hidden}, std::vector<float>(n(a.hidden, 1), 0.0f));
  ps.add("conv2.w", Shape{a.hidden, a.hidden, 3, 3},
         glorot_uniform(n(a.hidden, a.hidden * 9), a.hidden * 9, a.hidden * 9, rng));
  ps.add("conv2.b", Shape{a.hidden}, std::vector<float>(n(a.hidden, 1), 0.0f));
  ps.add("conv3.w", Shape{a.image_ch, a.hidden, 3, 3}, std::vector<float>(n(a.image_ch, a.hidden * 9), 0.0f));
  ps.add("conv3.b", Shape{a.image_ch}, std::vector<float>(n(a.image_ch, 1), 0.0f));
  ps.add("cond1.w", Shape{a.hidden, a.cond_dim()}, glorot_uniform(n(a.hidden, a.cond_dim()), a.cond_dim(), a.hidden, rng));
  ps.add("cond1.b", Shape{a.hidden}, std::vector<float>(n(a.hidden, 1), 0.0f));
  ps.add("cond2.w", Shape{a.hidden, a.cond_dim()}, glorot_uniform(n(a.hidden, a.cond_dim()), a.cond_dim(), a.hidden, rng));
  ps.add("cond2.b", Shape{a.hidden}, std::vector<float>(n(a.hidden, 1), 0.0f));
  return p;
}

template <class T>
std::vector<T> timestep_embedding(std::span<const int> timesteps, int dim) {
  const int half = dim / 2;
  std::vector<T> out(timesteps.size() * static_cast<std::size_t>(dim));
  for (std::size_t n = 0; n < timesteps.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double a = static_cast<double>(timesteps[n]) * w;
      out[n * dim + i] = static_cast<T>(std::sin(a));
      out[n * dim + half + i] = static_cast<T>(std::cos(a));
    }
  }
  return out;
}

template <class T>
ag::Var denoiser_graph(ag::Tape<T>& tape, const DenoiserArch& arch, const std::vector<ag::Var>& p, ag::Var x_t,
                       ag::Var prior, std::span<const int> timesteps, ag::Var text) {
  const Shape xs = tape.shape(x_t);
  if (xs.rank() != 4 || xs[1] != arch.image_ch || xs[2] != arch.canvas || xs[3] != arch.canvas) {
    throw std::invalid_argument("denoiser: x_t shape " + xs.str() + " does not match configuration");
  }
  const int n = xs[0];
  if (tape.shape(prior) != Shape{n, arch.prior_ch, arch.canvas, arch.canvas}) {
    throw std::invalid_argument("denoiser: prior shape " + tape.shape(prior).str() + " does not match configuration");
  }
  if (tape.shape(text) != Shape{n, arch.text_dim}) {
    throw std::invalid_argument("denoiser: text embedding shape " + tape.shape(text).str() + ", expected [" +
                                std::to_string(n) + "," + std::to_string(arch.text_dim) + "]");
  }
  if (static_cast<int>(timesteps.size()) != n) throw std::invalid_argument("denoiser: timestep count mismatch");

  const ag::Var temb = tape.constant(Shape{n, arch.time_dim}, timestep_embedding<T>(timesteps, arch.time_dim));
  const ag::Var cond = ag::concat_dim1(tape, temb, text);
  const ag::Var c1 = ag::linear(tape, cond, p[6], p[7]);
  const ag::Var c2 = ag::linear(tape, cond, p[8], p[9]);

  ag::Var h = ag::concat_dim1(tape, x_t, prior);
  h = ag::silu(tape, ag::add_channel_bias(tape, ag::conv3x3(tape, h, p[0], p[1], 1), c1));
  h = ag::silu(tape, ag::add_channel_bias(tape, ag::conv3x3(tape, h, p[2], p[3], 1), c2));
  return ag::conv3x3(tape, h, p[4], p[5], 1);
}

template std::vector<float> timestep_embedding<float>(std::span<const int>, int);
template std::vector<double> timestep_embedding<double>(std::span<const int>, int);
template ag::Var denoiser_graph<float>(ag::Tape<float>&, const DenoiserArch&, const std::vector<ag::Var>&, ag::Var,
                                       ag::Var, std::span<const int>, ag::Var);
template ag::Var denoiser_graph<double>(ag::Tape<double>&, const DenoiserArch&, const std::vector<ag::Var>&, ag::Var,
                                        ag::Var, std::span<const int>, ag::Var);

std::vector<ImageTensor> denoise_batch(std::span<const ImageTensor> x_t, std::span<const int> t,
                                       std::span<const StructurePrior> s, std::span<const Embedding> text,
                                       const DenoiserParams& params) {
  const std::size_t n = x_t.size();
  if (t.size() != n || s.size() != n || text.size() != n) throw std::invalid_argument("denoise: batch size mismatch");
  if (n == 0) return {};
  const DenoiserArch& a = params.arch;
  std::vector<float> xs, ps, ts;
  for (std::size_t i = 0; i < n; ++i) {
    if (text[i].dim() != static_cast<std::size_t>(a.text_dim)) {
      throw std::invalid_argument("denoise: text embedding has dimension " + std::to_string(text[i].dim()) +
                                  ", expected " + std::to_string(a.text_dim));
    }
    xs.insert(xs.end(), x_t[i].data.begin(), x_t[i].data.end());
    ps.insert(ps.end(), s[i].edge_map.data.begin(), s[i].edge_map.data.end());
    ts.insert(ts.end(), text[i].values.begin(), text[i].values.end());
  }
  const int ni = static_cast<int>(n);
  const int c = x_t[0].channels, h = x_t[0].height, w = x_t[0].width;
  if (ps.size() != n * static_cast<std::size_t>(a.prior_ch) * h * w) {
    throw std::invalid_argument("denoise: structure prior size does not match image");
  }
  ag::Tape<float> tape;
  const auto p = bind(tape, params.params, false);
  const ag::Var vx = tape.constant(Shape{ni, c, h, w}, std::move(xs));
  const ag::Var vp = tape.constant(Shape{ni, a.prior_ch, h, w}, std::move(ps));
  const ag::Var vt = tape.constant(Shape{ni, a.text_dim}, std::move(ts));
  const ag::Var out = denoiser_graph(tape, a, p, vx, vp, t, vt);
  auto v = tape.value(out);
  std::vector<ImageTensor> res;
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  for (std::size_t i = 0; i < n; ++i) {
    ImageTensor img(c, h, w);
    std::copy(v.begin() + i * per, v.begin() + (i + 1) * per, img.data.begin());
    res.push_back(std::move(img));
  }
  return res;
}

ImageTensor denoise(const ImageTensor& x_t, int t, const StructurePrior& s, const Embedding& text,
                    const DenoiserParams& params) {
  return denoise_batch(std::span<const ImageTensor>(&x_t, 1), std::span<const int>(&t, 1),
                       std::span<const StructurePrior>(&s, 1), std::span<const Embedding>(&text, 1), params)
      .front();
}

// ---------------------------------------------------------------------------
// Reverse process
// ---------------------------------------------------------------------------

DiffusionState reverse_update(const DiffusionState& state, const ImageTensor& eps_hat, const NoiseSchedule& sched,
                              const ImageTensor& z) {
  if (state.t < 1) throw std::invalid_argument("reverse_step: t = " + std::to_string(state.t) + ", sampling already complete");
  require_same(state.x, eps_hat, "reverse_step");
  require_same(state.x, z, "reverse_step");
  const int t = state.t;
  const double a = sched.alpha_at(t);
  const double coef = (1.0 - a) / std::sqrt(1.0 - sched.alpha_bar_at(t));
  const double inv = 1.0 / std::sqrt(a);
  const double sig = sched.sigma_at(t);
  DiffusionState out{state.x, t - 1};
  for (std::size_t i = 0; i < out.x.size(); ++i) {
    out.x.data[i] = static_cast<float>(inv * (state.x.data[i] - coef * eps_hat.data[i]) + sig * z.data[i]);
  }
  return out;
}

DiffusionState reverse_step(const DiffusionState& state, const StructurePrior& s, const Embedding& text,
                            const DenoiserParams& params, const NoiseSchedule& sched, const ImageTensor& z) {
  if (state.t < 1) throw std::invalid_argument("reverse_step: t = 0, sampling already complete");
  return reverse_update(state, denoise(state.x, state.t, s, text, params), sched, z);
}

namespace {

ImageTensor gaussian(int c, int h, int w, Rng& rng) {
  ImageTensor img(c, h, w);
  rng.fill_normal(img.data);
  return img;
}

ImageTensor clamped(ImageTensor img) {
  for (auto& v : img.data) v = std::clamp(v, -1.0f, 1.0f);
  return img;
}

}  // namespace

ImageTensor sample_with(const NoisePredictor& eps, int channels, int height, int width, const NoiseSchedule& sched,
                        std::uint64_t seed) {
  Rng rng(seed);
  DiffusionState st{gaussian(channels, height, width, rng), sched.T};
  const ImageTensor zero(channels, height, width);
  while (st.t >= 1) {
    const ImageTensor z = st.t > 1 ? gaussian(channels, height, width, rng) : zero;
    st = reverse_update(st, eps(st.x, st.t), sched, z);
  }
  return clamped(std::move(st.x));
}

ImageTensor sample(const StructurePrior& s, const Embedding& text, const DenoiserParams& params,
                   const NoiseSchedule& sched, std::uint64_t seed) {
  const int c = params.arch.image_ch;
  return sample_with([&](const ImageTensor& x, int t) { return denoise(x, t, s, text, params); }, c,
                     s.edge_map.height, s.edge_map.width, sched, seed);
}

std::vector<ImageTensor> sample_batch(std::span<const StructurePrior> s, std::span<const Embedding> text,
                                      const DenoiserParams& params, const NoiseSchedule& sched,
                                      std::span<const std::uint64_t> seeds) {
  const std::size_t n = s.size();
  if (text.size() != n || seeds.size() != n) throw std::invalid_argument("sample_batch: batch size mismatch");
  if (n == 0) return {};
  const int c = params.arch.image_ch, h = s[0].edge_map.height, w = s[0].edge_map.width;
  std::vector<Rng> rngs;
  std::vector<DiffusionState> st;
  for (std::size_t i = 0; i < n; ++i) {
    rngs.emplace_back(seeds[i]);
    st.push_back({gaussian(c, h, w, rngs[i]), sched.T});
  }
  const ImageTensor zero(c, h, w);
  for (int t = sched.T; t >= 1; --t) {
    std::vector<ImageTensor> xs;
    for (const auto& x : st) xs.push_back(x.x);
    const std::vector<int> ts(n, t);
    const auto eps = denoise_batch(xs, ts, s, text, params);
    for (std::size_t i = 0; i < n; ++i) {
      const ImageTensor z = t > 1 ? gaussian(c, h, w, rngs[i]) : zero;
      st[i] = reverse_update(st[i], eps[i], sched, z);
    }
  }
  std::vector<ImageTensor> out;
  for (auto& x : st) out.push_back(clamped(std::move(x.x)));
  return out;
}

}  // namespace t2i
