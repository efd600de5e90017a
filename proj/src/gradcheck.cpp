#include "t2i/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "t2i/corpus.hpp"
#include "t2i/diffusion.hpp"
#include "t2i/encoders.hpp"
#include "t2i/objectives.hpp"
#include "t2i/training.hpp"

namespace t2i {

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

const GradcheckEntry& GradcheckReport::entry(const std::string& component) const {
  for (const auto& e : entries)
    if (e.component == component) return e;
  throw std::out_of_range("gradcheck: no entry for " + component);
}

std::string GradcheckReport::to_json() const {
  nlohmann::json j;
  j["tolerance"] = tolerance;
  j["all_passed"] = all_passed();
  j["components"] = nlohmann::json::array();
  for (const auto& e : entries) {
    j["components"].push_back({{"component", e.component},
                               {"max_rel_error", e.max_rel_error},
                               {"checked", e.checked},
                               {"parameters", e.parameters},
                               {"passed", e.passed}});
  }
  return j.dump(2) + "\n";
}

std::string GradcheckReport::to_text() const {
  std::string out;
  char buf[256];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-20s max_rel_error=%.3e checked=%zu %s\n", e.component.c_str(), e.max_rel_error,
                  e.checked, e.passed ? "PASS" : "FAIL");
    out += buf;
  }
  return out;
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kRelErrorFloor});
}

double check_gradients(const ScalarGraph& graph, const std::vector<GradInput>& inputs, std::size_t* checked) {
  auto eval = [&](const std::vector<GradInput>& in, bool grad, std::vector<std::vector<double>>* grads) {
    ag::Tape<double> tape;
    std::vector<ag::Var> leaves;
    for (const auto& x : in) leaves.push_back(tape.leaf(x.shape, x.value, grad));
    const ag::Var out = graph(tape, leaves);
    if (grad) {
      tape.backward(out);
      for (ag::Var v : leaves) {
        auto g = tape.grad(v);
        grads->emplace_back(g.begin(), g.end());
      }
    }
    return tape.item(out);
  };
  std::vector<std::vector<double>> analytic;
  eval(inputs, true, &analytic);
  std::vector<GradInput> work = inputs;
  double worst = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].value.size(); ++i) {
      const double x = inputs[k].value[i];
      const double h = std::ldexp(1.0, std::ilogb(std::max(1.0, std::abs(x))) - 16);
      work[k].value[i] = x + h;
      const double fp = eval(work, false, nullptr);
      work[k].value[i] = x - h;
      const double fm = eval(work, false, nullptr);
      work[k].value[i] = x;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k].empty() ? 0.0 : analytic[k][i];
      worst = std::max(worst, relative_error(a, numeric));
      ++count;
    }
  }
  if (checked) *checked = count;
  return worst;
}

std::vector<std::string> gradcheck_components() {
  return {"identity",           "text_encoder", "image_encoder", "structure_features",
          "semantic_features", "denoiser",     "clip_loss",     "total_loss"};
}

namespace {

constexpr int kMicroCanvas = 8;
constexpr int kMicroBatch = 3;
constexpr int kMicroDim = 4;

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Every tensor redrawn uniformly, so no layer sits at an all-zero point.
void randomize(ParamSet<float>& ps, Rng& rng) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (auto& v : ps.mutable_data(i)) v = static_cast<float>(rng.uniform(-0.5, 0.5));
}

std::vector<GradInput> as_inputs(const ParamSet<float>& ps) {
  std::vector<GradInput> in;
  for (const auto& t : ps.tensors()) in.push_back({t.shape, std::vector<double>(t.data.begin(), t.data.end())});
  return in;
}

struct Micro {
  ModelArchs archs;
  TextEncoderParams text;
  ImageEncoderParams image;
  SemanticEncoderParams semantic;
  DenoiserParams denoiser;
  TrainBatch batch;
};

Micro make_micro(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6C));
  TrainConfig cfg;
  cfg.embed_dim = kMicroDim;
  cfg.denoiser_hidden = 4;
  SemanticArch sa;
  sa.trunk = {kMicroCanvas, 3, 2, 4};
  sa.feature_dim = 4;
  Micro m;
  m.archs = archs_for(cfg, kMicroCanvas, sa);
  m.archs.text.embed_width = 4;
  m.archs.text.hidden = 8;
  m.archs.image.trunk = {kMicroCanvas, 3, 2, 4};
  m.archs.image.hidden = 8;
  m.archs.denoiser.time_dim = 4;
  m.text = init_text_encoder(m.archs.text, seed);
  m.image = init_image_encoder(m.archs.image, seed);
  m.semantic = init_semantic_encoder(m.archs.semantic, seed);
  m.denoiser = init_denoiser(m.archs.denoiser, seed);
  randomize(m.text.params, rng);
  randomize(m.image.params, rng);
  randomize(m.semantic.params, rng);
  randomize(m.denoiser.params, rng);
  m.semantic.params.freeze();
  const Corpus c = build_corpus(kMicroBatch, seed, kMicroCanvas);
  std::vector<std::size_t> idx(kMicroBatch);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  m.batch = make_batch(c, idx);
  return m;
}

std::vector<ag::Var> slice(const std::vector<ag::Var>& v, std::size_t from, std::size_t count) {
  return {v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(from + count)};
}

GradcheckEntry run_component(const std::string& name, const Micro& m, std::uint64_t seed) {
  std::uint64_t tag = 0;
  for (char ch : name) tag = tag * 131 + static_cast<unsigned char>(ch);
  Rng rng(derive_seed(seed, 0xC0, tag));
  const BatchTensors<double> b = batch_tensors<double>(m.batch);
  const int n = b.n, side = b.canvas;
  const Shape img_shape{n, 3, side, side};
  std::vector<GradInput> in;
  ScalarGraph g;
  std::size_t params = 0;

  // Projection weights are drawn lazily, once the output size is known.
  auto proj = std::make_shared<std::vector<double>>();
  auto project = [proj, seed](ag::Tape<double>& tape, ag::Var out) {
    if (proj->empty()) {
      Rng r(derive_seed(seed, 0xF1, out.id));
      *proj = random_vec(tape.value(out).size(), r);
    }
    return ag::dot_const(tape, out, *proj);
  };

  if (name == "identity") {
    // Dyadic inputs and weights keep every evaluation exact.
    auto dyadic = [&rng] {
      std::vector<double> v = random_vec(20, rng);
      for (auto& x : v) x = std::round(x * 1024.0) / 1024.0;
      return v;
    };
    in.push_back({Shape{4, 5}, dyadic()});
    g = [w = dyadic()](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      return ag::dot_const(t, ag::reshape(t, v[0], Shape{20}), w);
    };
  } else if (name == "text_encoder") {
    in = as_inputs(m.text.params);
    params = m.text.params.scalar_count();
    g = [&, project](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      return project(t, text_encoder_graph(t, m.archs.text, v, b.tokens));
    };
  } else if (name == "image_encoder") {
    in = as_inputs(m.image.params);
    params = m.image.params.scalar_count();
    in.push_back({img_shape, b.images});
    g = [&, project](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      return project(t, image_encoder_graph(t, m.archs.image, slice(v, 0, v.size() - 1), v.back()));
    };
  } else if (name == "structure_features") {
    std::vector<double> x = b.images;
    for (auto& e : x) e += rng.uniform(-0.1, 0.1);
    in.push_back({img_shape, x});
    g = [](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      const ag::Var phi = structure_graph(t, v[0]);
      return ag::dot_const(t, phi, std::vector<double>(t.value(phi).size(), 1.0));
    };
  } else if (name == "semantic_features") {
    in.push_back({img_shape, b.images});
    params = m.semantic.params.scalar_count();
    g = [&, project](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      const auto p = bind(t, m.semantic.params.cast<double>(), false);
      return project(t, semantic_encoder_graph(t, m.archs.semantic, p, v[0]));
    };
  } else if (name == "denoiser") {
    in = as_inputs(m.denoiser.params);
    params = m.denoiser.params.scalar_count();
    in.push_back({img_shape, random_vec(b.images.size(), rng)});
    in.push_back({Shape{n, kMicroDim}, random_vec(static_cast<std::size_t>(n) * kMicroDim, rng)});
    const std::vector<int> ts{7, 42, 93};
    g = [&, project, ts](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      const std::size_t np = v.size() - 2;
      const ag::Var prior = t.constant(Shape{n, 1, side, side}, b.priors);
      return project(t, denoiser_graph(t, m.archs.denoiser, slice(v, 0, np), v[np], prior, ts, v[np + 1]));
    };
  } else if (name == "clip_loss") {
    in.push_back({Shape{n + 2, kMicroDim}, random_vec(static_cast<std::size_t>(n + 2) * kMicroDim, rng)});
    in.push_back({Shape{n + 2, kMicroDim}, random_vec(static_cast<std::size_t>(n + 2) * kMicroDim, rng)});
    g = [](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      ContrastiveConfig c;
      c.temperature = 0.5;
      return clip_loss_graph(t, v[0], v[1], c);
    };
  } else if (name == "total_loss") {
    const auto ti = as_inputs(m.text.params), ii = as_inputs(m.image.params), di = as_inputs(m.denoiser.params);
    in.insert(in.end(), ti.begin(), ti.end());
    in.insert(in.end(), ii.begin(), ii.end());
    in.insert(in.end(), di.begin(), di.end());
    params = m.text.params.scalar_count() + m.image.params.scalar_count() + m.denoiser.params.scalar_count();
    StepDraws draws;
    draws.timesteps = {2, 9, 25};
    draws.noise.resize(b.images.size());
    rng.fill_normal(draws.noise);
    const std::size_t nt = ti.size(), ni = ii.size(), nd = di.size();
    g = [&, draws, nt, ni, nd](ag::Tape<double>& t, const std::vector<ag::Var>& v) {
      ModelVars mv;
      mv.text = slice(v, 0, nt);
      mv.image = slice(v, nt, ni);
      mv.denoiser = slice(v, nt + ni, nd);
      mv.semantic = bind(t, m.semantic.params.cast<double>(), false);
      ContrastiveConfig c;
      c.temperature = 0.5;
      return build_loss_graph(t, m.archs, mv, b, draws, build_schedule(), c, LossWeights{}).total;
    };
  } else {
    throw std::invalid_argument("gradcheck: unknown component '" + name + "'");
  }

  GradcheckEntry e;
  e.component = name;
  e.parameters = params;
  e.max_rel_error = check_gradients(g, in, &e.checked);
  return e;
}

}  // namespace

GradcheckReport gradcheck(const std::vector<std::string>& components, double tolerance, std::uint64_t seed) {
  const std::vector<std::string> names = components.empty() ? gradcheck_components() : components;
  for (const auto& n : names) {
    const auto all = gradcheck_components();
    if (std::find(all.begin(), all.end(), n) == all.end()) {
      throw std::invalid_argument("gradcheck: unknown component '" + n + "'");
    }
  }
  const Micro m = make_micro(seed);
  GradcheckReport r;
  r.tolerance = tolerance;
  for (const auto& n : names) {
    GradcheckEntry e = run_component(n, m, seed);
    e.passed = e.max_rel_error < tolerance;
    r.entries.push_back(std::move(e));
  }
  return r;
}

}  // namespace t2i
