// Acceptance harness: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "t2i/ablation.hpp"
#include "t2i/checkpoint.hpp"
#include "t2i/cli.hpp"
#include "t2i/config.hpp"
#include "t2i/corpus.hpp"
#include "t2i/diffusion.hpp"
#include "t2i/gradcheck.hpp"
#include "t2i/metrics.hpp"
#include "t2i/objectives.hpp"
#include "t2i/pipeline.hpp"
#include "t2i/rng.hpp"
#include "t2i/training.hpp"

using namespace t2i;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void note(Outcome& o, bool ok, const std::string& what) {
  if (!ok) o.pass = false;
  if (!o.detail.empty()) o.detail += "; ";
  o.detail += (ok ? "" : "FAILED ") + what;
}

std::vector<Embedding> random_batch(Rng& rng, int n, int d) {
  std::vector<Embedding> out;
  for (int i = 0; i < n; ++i) {
    std::vector<float> v(static_cast<std::size_t>(d));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    out.emplace_back(std::move(v));
  }
  return out;
}

ImageTensor random_image(Rng& rng, int c, int h, int w, double lo = -1, double hi = 1) {
  ImageTensor x(c, h, w);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(lo, hi));
  return x;
}

NoiseSchedule scalar_schedule(double alpha, double alpha_bar) {
  NoiseSchedule s = build_schedule(2, 0.1, 0.1);
  s.alpha[1] = alpha;
  s.beta[1] = 1 - alpha;
  s.alpha_bar[1] = alpha_bar;
  s.sigma[1] = std::sqrt(1 - alpha);
  return s;
}

int run_cli(std::vector<std::string> args, const fs::path& root) {
  args.push_back("--workdir");
  args.push_back(root.string());
  if (fs::exists(root / "cfg.json")) {
    args.push_back("--config");
    args.push_back((root / "cfg.json").string());
  }
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  if (code != kExitOk) throw std::runtime_error("t2i " + args[0] + " exited " + std::to_string(code) + ": " + err.str());
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<double> l_total_column(const fs::path& csv) {
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);
  std::vector<double> out;
  while (std::getline(f, line)) out.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  return out;
}

double mean_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
         static_cast<double>(hi - lo);
}

// ---------------------------------------------------------------------------

double brute_clip(const std::vector<Embedding>& v, const std::vector<Embedding>& t, double tau) {
  auto cosine = [](const Embedding& a, const Embedding& b) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
      dot += static_cast<long double>(a.values[i]) * b.values[i];
      na += static_cast<long double>(a.values[i]) * a.values[i];
      nb += static_cast<long double>(b.values[i]) * b.values[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  long double total = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    long double denom = 0;
    for (std::size_t j = 0; j < t.size(); ++j) denom += std::exp(cosine(v[i], t[j]) / tau);
    total += -std::log(std::exp(cosine(v[i], t[i]) / tau) / denom);
  }
  return static_cast<double>(total / static_cast<long double>(v.size()));
}

Outcome criterion1() {
  Outcome o;
  const Clock clock;
  const ContrastiveConfig cfg;
  const std::vector<Embedding> one{Embedding(std::vector<float>{1, 2, 3})}, other{Embedding(std::vector<float>{-1, 0, 5})};
  note(o, clip_loss(one, other, cfg) == 0.0, "N=1 gives 0");

  double uni = 0;
  for (int n = 2; n <= 8; ++n) {
    std::vector<double> sim(static_cast<std::size_t>(n * n), 0.37);
    uni = std::max(uni, std::abs(clip_loss_from_similarity(sim, n, cfg) - std::log(n)));
  }
  note(o, uni < 1e-9, "uniform similarities give ln N (err " + fmt("%.2e", uni) + ")");

  Rng rng(0xC1);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(8));
    const int d = 1 + static_cast<int>(rng.below(16));
    ContrastiveConfig c;
    c.temperature = trial % 2 ? 0.07 : 0.5;
    const auto v = random_batch(rng, n, d), t = random_batch(rng, n, d);
    worst = std::max(worst, std::abs(clip_loss(v, t, c) - brute_clip(v, t, c.temperature)));
  }
  note(o, worst < 1e-6, "100 random batches vs brute-force softmax max err " + fmt("%.2e", worst));
  const double secs = clock.seconds();
  note(o, secs < 1.0, "runtime " + fmt("%.3fs", secs));
  return o;
}

Outcome criterion2() {
  Outcome o;
  const Clock clock;
  const NoiseSchedule s = scalar_schedule(0.99, 0.9);
  const ImageTensor one(1, 1, 1, 1.0f), zero(1, 1, 1, 0.0f), unit_z(1, 1, 1, 1.0f);
  const ImageTensor eps(1, 1, 1, static_cast<float>(std::sqrt(0.1)));
  const double a = reverse_update({one, 2}, eps, s, zero).x.data[0];
  note(o, std::abs(a - 0.994987) < 1e-6 && std::abs(a - std::sqrt(0.99)) < 1e-6, "x_{t-1} = " + fmt("%.6f", a));
  const double b = reverse_update({zero, 2}, zero, s, zero).x.data[0];
  note(o, b == 0.0, "zero input stays zero");
  const double c = reverse_update({one, 2}, eps, s, unit_z).x.data[0];
  note(o, std::abs(c - (std::sqrt(0.99) + 0.1)) < 1e-6, "sigma_t z term " + fmt("%.6f", c));
  // t = 1: sigma_1 = 0, so the noise draw is ignored.
  const double d = reverse_update({ImageTensor(1, 1, 1, 0.5f), 1}, zero, build_schedule(2, 0.5, 0.5), unit_z).x.data[0];
  note(o, std::abs(d - 0.5 / std::sqrt(0.5)) < 1e-6, "final step ignores z " + fmt("%.6f", d));

  const NoiseSchedule sched = build_schedule();
  Rng rng(0xC2);
  double worst_mae = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const ImageTensor target = random_image(rng, 3, 16, 16);
    const NoisePredictor oracle = [&](const ImageTensor& x_t, int t) {
      const double ab = sched.alpha_bar_at(t);
      ImageTensor e(x_t.channels, x_t.height, x_t.width);
      for (std::size_t i = 0; i < e.size(); ++i)
        e.data[i] = static_cast<float>((x_t.data[i] - std::sqrt(ab) * target.data[i]) / std::sqrt(1 - ab));
      return e;
    };
    const ImageTensor out = sample_with(oracle, 3, 16, 16, sched, derive_seed(0xC2, static_cast<std::uint64_t>(trial)));
    double mae = 0;
    for (std::size_t i = 0; i < out.size(); ++i) mae += std::abs(double(out.data[i]) - target.data[i]);
    worst_mae = std::max(worst_mae, mae / static_cast<double>(out.size()));
  }
  note(o, worst_mae < 0.05, "oracle-denoiser sampling worst MAE " + fmt("%.2e", worst_mae));
  const double secs = clock.seconds();
  note(o, secs < 10.0, "runtime " + fmt("%.3fs", secs));
  return o;
}

Outcome criterion3() {
  Outcome o;
  note(o, struct_loss(FeatureStack{{1, 2, 3}}, FeatureStack{{1, 2, 3}}) == 0.0, "struct_loss of identical stacks is 0");
  const double flat = struct_loss(ImageTensor(3, 16, 16, 0.2f), StructurePrior{ImageTensor(1, 16, 16, 0.9f)});
  note(o, std::abs(flat) < 1e-12, "constant image vs constant prior " + fmt("%.1e", flat));
  ImageTensor edge(1, 16, 16, 0.0f);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) edge.at(0, y, x) = 1.0f;
  ImageTensor grey(3, 16, 16);
  for (int c = 0; c < 3; ++c) std::copy(edge.data.begin(), edge.data.end(), grey.data.begin() + c * 256);
  const double matched = struct_loss(grey, StructurePrior{edge});
  note(o, std::abs(matched) < 1e-6, "grey image matching its prior " + fmt("%.1e", matched));

  auto e = [](std::vector<float> v) { return Embedding(std::move(v)); };
  const double s0 = sem_loss(e({1, 2}), e({1, 2})), s1 = sem_loss(e({1, 0}), e({0, 1})), s2 = sem_loss(e({1, 2}), e({-1, -2}));
  note(o, std::abs(s0) < 1e-12 && std::abs(s1 - 1) < 1e-12 && std::abs(s2 - 2) < 1e-12,
       "sem_loss anchors " + fmt("%.3g", s0) + "/" + fmt("%.3g", s1) + "/" + fmt("%.3g", s2));

  Rng rng(0xC3);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const LossParts p{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 2), rng.uniform(0, 3)};
    const LossWeights w{rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3)};
    const double want = w.lambda1 * p.l_clip + w.lambda2 * p.l_struct + w.lambda3 * p.l_sem + p.l_denoise;
    worst = std::max(worst, std::abs(total_loss(p, w) - want));
  }
  note(o, worst < 1e-6, "total_loss recomposition max err " + fmt("%.1e", worst));
  return o;
}

Outcome criterion4() {
  Outcome o;
  const NoiseSchedule s = build_schedule();
  Rng rng(0xC4);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const ImageTensor x0 = random_image(rng, 3, 8, 8);
    ImageTensor eps(3, 8, 8);
    rng.fill_normal(eps.data);
    for (int t = 1; t <= s.T; ++t) {
      const ImageTensor back = predict_x0(forward_noise(x0, t, eps, s), eps, t, s, false);
      for (std::size_t i = 0; i < x0.size(); ++i) worst = std::max(worst, std::abs(double(back.data[i]) - x0.data[i]));
    }
  }
  note(o, worst < 1e-5, "round trip over 100 tensors x 100 steps max err " + fmt("%.1e", worst));

  int configs = 0;
  bool ok = true;
  for (int T : {1, 2, 10, 50, 100, 500, 1000})
    for (auto [b0, b1] : {std::pair{1e-4, 0.02}, std::pair{1e-3, 0.2}, std::pair{0.3, 0.3}, std::pair{1e-5, 0.9}}) {
      const NoiseSchedule q = build_schedule(T, b0, b1);
      ++configs;
      ok = ok && q.sigma_at(1) == 0.0;
      for (int t = 1; t <= T; ++t) {
        ok = ok && q.alpha_bar_at(t) > 0.0 && q.alpha_bar_at(t) < 1.0;
        if (t > 1) ok = ok && q.alpha_bar_at(t) < q.alpha_bar_at(t - 1);
      }
    }
  note(o, ok, "schedule invariants over " + std::to_string(configs) + " configurations");
  return o;
}

Outcome criterion5() {
  Outcome o;
  const Clock clock;
  const GradcheckReport r = gradcheck({}, 1e-4);
  for (const auto& e : r.entries) {
    note(o, e.passed && e.parameters <= 5000,
         e.component + " " + fmt("%.2e", e.max_rel_error) + " (" + std::to_string(e.parameters) + " params)");
  }
  const double secs = clock.seconds();
  note(o, secs < 60.0, "runtime " + fmt("%.1fs", secs));
  return o;
}

Outcome criterion6() {
  Outcome o;
  Rng rng(0xC6);
  double id = 0, sym = 0;
  for (int i = 0; i < 20; ++i) {
    const ImageTensor a = random_image(rng, 3, 32, 32, 0, 1), b = random_image(rng, 3, 32, 32, 0, 1);
    id = std::max(id, std::abs(ssim(a, a) - 1.0));
    sym = std::max(sym, std::abs(ssim(a, b) - ssim(b, a)));
  }
  note(o, id < 1e-10, "ssim(x,x) err " + fmt("%.1e", id));
  note(o, sym < 1e-10, "ssim symmetry err " + fmt("%.1e", sym));

  auto stats1d = [](double m, double v) {
    FeatureStats s;
    s.mean = {m};
    s.cov = {v};
    s.count = 10;
    return s;
  };
  double fd = 0, same = 0;
  for (int i = 0; i < 100; ++i) {
    const double m1 = rng.uniform(-3, 3), m2 = rng.uniform(-3, 3), v1 = rng.uniform(0.01, 5), v2 = rng.uniform(0.01, 5);
    const double ds = std::sqrt(v1) - std::sqrt(v2);
    fd = std::max(fd, std::abs(frechet_distance(stats1d(m1, v1), stats1d(m2, v2)) - ((m1 - m2) * (m1 - m2) + ds * ds)));
    same = std::max(same, std::abs(frechet_distance(stats1d(m1, v1), stats1d(m1, v1))));
  }
  note(o, fd < 1e-8, "1-D Frechet closed form err " + fmt("%.1e", fd));
  note(o, same < 1e-8, "identical stats " + fmt("%.1e", same));

  const auto v = random_batch(rng, 10, 16), t = random_batch(rng, 10, 16);
  const double base = clip_score(v, t);
  double worst = 0;
  for (float k : {0.01f, 0.5f, 3.0f, 100.0f}) {
    auto sv = v, st = t;
    for (auto& e : sv) for (auto& x : e.values) x *= k;
    for (auto& e : st) for (auto& x : e.values) x *= 1.0f / k;
    worst = std::max({worst, std::abs(clip_score(sv, t) - base), std::abs(clip_score(v, st) - base)});
  }
  note(o, worst < 1e-6, "clip_score scale invariance err " + fmt("%.1e", worst));
  return o;
}

// State shared by criteria 7 and 8: the default-config run.
struct DefaultRun {
  fs::path root;
  bool done = false;
  double seconds = 0;
  PipelineConfig cfg;
};

void ensure_default_run(DefaultRun& run) {
  if (run.done) return;
  fs::remove_all(run.root);
  fs::create_directories(run.root);
  const Clock clock;
  for (const char* step : {"dataset", "pretrain", "train", "sample"}) {
    run_cli({step}, run.root);
    std::fprintf(stderr, "  default run: %s done at %.0fs\n", step, clock.seconds());
  }
  run_cli({"eval"}, run.root);
  run.seconds = clock.seconds();
  run.done = true;
}

Outcome criterion7(DefaultRun& run) {
  Outcome o;
  ensure_default_run(run);
  const PipelineConfig& cfg = run.cfg;
  note(o, cfg.dataset.count == 2000 && cfg.dataset.canvas == 32 && cfg.train.embed_dim == 32 &&
              cfg.train.timesteps == 100 && cfg.train.steps == 1000,
       "default config: 2000 scenes, 32x32, d=32, T=100, 1000 steps");

  const auto l = l_total_column(run.root / "train" / "loss.csv");
  if (l.size() != 1000) {
    note(o, false, "loss.csv has " + std::to_string(l.size()) + " rows");
    return o;
  }
  const double first = mean_of(l, 0, 100), last = mean_of(l, 900, 1000);
  note(o, last < first, "mean l_total steps 900-1000 " + fmt("%.4f", last) + " < steps 0-100 " + fmt("%.4f", first));

  const Corpus corpus = load_corpus(CorpusManifest::load(run.root / "corpus"));
  const TrainState st = from_checkpoint(load_checkpoint(run.root / "train" / "final.bin"));
  const auto items = held_out_items(corpus, cfg.sample.max_items);
  std::vector<ImageTensor> images;
  std::vector<Caption> caps;
  for (std::size_t i : items) {
    images.push_back(corpus.items[i].image);
    caps.push_back(corpus.items[i].caption);
  }
  const double paired = clip_score(images, caps, st.text, st.image);
  const double shuffled = shuffled_clip_score(images, caps, st.text, st.image);
  note(o, paired > shuffled,
       "held-out paired CLIP " + fmt("%.4f", paired) + " > shuffled " + fmt("%.4f", shuffled) + " (" +
           std::to_string(items.size()) + " scenes)");
  note(o, run.seconds < 900.0, "pipeline runtime " + fmt("%.0fs", run.seconds));
  return o;
}

Outcome criterion8(DefaultRun& run) {
  Outcome o;
  ensure_default_run(run);
  const PipelineConfig& cfg = run.cfg;
  const Corpus corpus = load_corpus(CorpusManifest::load(run.root / "corpus"));
  const TrainState st = from_checkpoint(load_checkpoint(run.root / "train" / "final.bin"));
  const NoiseSchedule sched = cfg.train.schedule();
  const auto items = held_out_items(corpus, cfg.sample.max_items);
  const auto guided = generate_samples(corpus, items, st, sched, cfg.seed, {false, cfg.sample.batch_size});
  const auto blank = generate_samples(corpus, items, st, sched, cfg.seed, {true, cfg.sample.batch_size});
  const double s_guided = evaluate_samples(corpus, items, guided, st).ssim;
  const double s_blank = evaluate_samples(corpus, items, blank, st).ssim;
  note(o, s_guided > s_blank,
       "held-out SSIM with edge priors " + fmt("%.4f", s_guided) + " > zero priors " + fmt("%.4f", s_blank));

  PipelineConfig ab = cfg;
  ab.ablate.axis = AblationAxis::kStructWeight;
  ab.ablate.values = {0.0, 1.0};
  const SemanticEncoderParams semantic = semantic_from_checkpoint(load_checkpoint(run.root / "semantic" / "encoder.bin"));
  const AblationResult r = run_ablation(corpus, ab, semantic);
  const AblationRow& r0 = r.rows.at(0);
  const AblationRow& r1 = r.rows.at(1);
  note(o, r0.error.empty() && r1.error.empty(), "ablation cells completed");
  note(o, r1.final_l_struct < r0.final_l_struct,
       "final l_struct lambda2=1 " + fmt("%.4f", r1.final_l_struct) + " < lambda2=0 " + fmt("%.4f", r0.final_l_struct));
  return o;
}

std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), slurp(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome criterion9(const fs::path& base) {
  Outcome o;
  const char* cfg = R"({
  "seed": 9,
  "dataset": {"count": 300},
  "pretrain": {"epochs": 1},
  "train": {"steps": 40, "checkpoint_interval": 10, "timesteps": 20},
  "sample": {"max_items": 10},
  "ablate": {"values": [0.0, 1.0], "eval_items": 4}
})";
  auto full = [&](const fs::path& root) {
    fs::remove_all(root);
    fs::create_directories(root);
    write_text_file(root / "cfg.json", cfg);
    for (const char* step : {"dataset", "pretrain", "train", "sample", "eval", "ablate"}) run_cli({step}, root);
    run_cli({"sample", "--blank-prior"}, root);
  };
  const fs::path a = base / "run_a", b = base / "run_b", c = base / "run_c";
  full(a);
  full(b);
  const auto ta = tree(a), tb = tree(b);
  std::set<std::string> kinds;
  for (const auto& [name, _] : ta) kinds.insert(name.substr(0, name.find('/')));
  std::string diff;
  if (ta.size() != tb.size()) diff = "file count differs";
  for (std::size_t i = 0; diff.empty() && i < ta.size(); ++i)
    if (ta[i] != tb[i]) diff = ta[i].first;
  note(o, diff.empty() && kinds.count("train") && kinds.count("eval") && kinds.count("samples"),
       "two pipeline runs: " + std::to_string(ta.size()) + " files byte-identical" + (diff.empty() ? "" : " (differs: " + diff + ")"));

  fs::remove_all(c);
  fs::create_directories(c);
  write_text_file(c / "cfg.json", cfg);
  for (const char* step : {"dataset", "pretrain"}) run_cli({step}, c);
  run_cli({"train", "--steps", "25"}, c);
  run_cli({"train", "--resume", "train/ckpt_000020.bin"}, c);
  bool same = true;
  std::string which;
  for (const char* f : {"final.bin", "loss.csv", "ckpt_000030.bin", "ckpt_000040.bin"}) {
    if (slurp(a / "train" / f) != slurp(c / "train" / f)) {
      same = false;
      which += std::string(" ") + f;
    }
  }
  note(o, same, "resume from step 20 matches the uninterrupted run" + (same ? "" : ":" + which));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(c);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string workdir = (fs::temp_directory_path() / "t2i_acceptance").string();
  bool keep = false;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--workdir", workdir, "scratch directory")->capture_default_str();
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  const fs::path root(workdir);
  DefaultRun run;
  run.root = root / "default";
  const std::vector<std::function<Outcome()>> criteria{
      criterion1,
      criterion2,
      criterion3,
      criterion4,
      criterion5,
      criterion6,
      [&] { return criterion7(run); },
      [&] { return criterion8(run); },
      [&] { return criterion9(root); },
  };
  std::printf("threads: %d\n", omp_get_max_threads());
  std::fflush(stdout);
  int failed = 0;
  for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), i) == only.end()) continue;
    const Clock clock;
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s criterion %d (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", i, clock.seconds(), o.detail.c_str());
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(root);
  return failed == 0 ? 0 : 1;
}
