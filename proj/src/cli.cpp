#include "t2i/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "t2i/ablation.hpp"
#include "t2i/config.hpp"
#include "t2i/gradcheck.hpp"
#include "t2i/image_io.hpp"
#include "t2i/metrics.hpp"
#include "t2i/pipeline.hpp"
#include "t2i/training.hpp"

namespace t2i {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string workdir = ".";
  std::optional<std::uint64_t> seed;
  std::string out;

  PipelineConfig load() const {
    PipelineConfig c = config.empty() ? parse_config(nlohmann::json::object()) : load_config(config);
    if (seed) c.set_seed(*seed);
    return c;
  }
  fs::path root() const { return fs::path(workdir); }
  fs::path out_or(const fs::path& fallback) const { return out.empty() ? root() / fallback : root() / out; }
};

void add_common(CLI::App* sub, Common& c, const std::string& out_help) {
  sub->add_option("--config", c.config, "JSON configuration file");
  sub->add_option("--workdir", c.workdir, "root directory for all inputs and outputs")->capture_default_str();
  sub->add_option("--seed", c.seed, "override the configuration seed");
  sub->add_option("--out", c.out, out_help);
}

Corpus open_corpus(const fs::path& dir) { return load_corpus(CorpusManifest::load(dir)); }

SemanticEncoderParams open_semantic(const fs::path& root) {
  return semantic_from_checkpoint(load_checkpoint(root / "semantic" / "encoder.bin"));
}

std::string pad6(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

int run_dataset(const Common& c, bool overwrite, std::ostream& out) {
  const PipelineConfig cfg = c.load();
  const fs::path dir = c.out_or("corpus");
  const CorpusManifest m = generate_corpus(static_cast<std::size_t>(cfg.dataset.count), cfg.seed, dir,
                                           {cfg.dataset.canvas, overwrite});
  out << "wrote " << m.records.size() << " scenes to " << dir.string() << "\n";
  return kExitOk;
}

int run_pretrain(const Common& c, std::ostream& out) {
  const PipelineConfig cfg = c.load();
  const Corpus corpus = open_corpus(c.root() / "corpus");
  PretrainConfig pc = cfg.pretrain;
  pc.arch.trunk.canvas = corpus.canvas_size;
  PretrainReport rep;
  const SemanticEncoderParams enc = pretrain_semantic_encoder(corpus, pc, &rep);
  const fs::path dir = c.out_or("semantic");
  save_checkpoint(dir / "encoder.bin", semantic_checkpoint(enc, cfg.seed));
  nlohmann::json j{{"seed", cfg.seed},
                   {"epochs", pc.epochs},
                   {"heldout_accuracy", rep.heldout_accuracy},
                   {"epoch_losses", rep.epoch_losses},
                   {"feature_dim", pc.arch.feature_dim}};
  write_text_file(dir / "encoder.json", j.dump(2) + "\n");
  out << "semantic encoder: held-out accuracy " << rep.heldout_accuracy << "\n";
  return kExitOk;
}

int run_train(const Common& c, std::optional<int> steps, const std::string& resume, std::ostream& out,
              std::ostream& err) {
  PipelineConfig cfg = c.load();
  if (steps) cfg.train.steps = *steps;
  cfg.train.validate();
  const Corpus corpus = open_corpus(c.root() / "corpus");
  TrainOptions opts;
  opts.out_dir = c.out_or("train");
  opts.on_step = [&err](std::uint64_t s, const LossReport& r) {
    if ((s + 1) % 100 == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "step %llu l_total=%.5f\n", static_cast<unsigned long long>(s + 1), r.l_total);
      err << buf;
    }
  };
  TrainState st = resume.empty()
                      ? train(corpus, cfg.train, open_semantic(c.root()), opts)
                      : train(corpus, cfg.train, from_checkpoint(load_checkpoint(c.root() / resume)), opts);
  out << "trained to step " << st.step << "; checkpoint " << (opts.out_dir / "final.bin").string() << "\n";
  return kExitOk;
}

int run_sample(const Common& c, bool blank, const std::string& ckpt, std::ostream& out) {
  const PipelineConfig cfg = c.load();
  const Corpus corpus = open_corpus(c.root() / "corpus");
  const TrainState st = from_checkpoint(load_checkpoint(c.root() / ckpt));
  const NoiseSchedule sched = cfg.train.schedule();
  const auto items = held_out_items(corpus, cfg.sample.max_items);
  if (items.empty()) throw std::runtime_error("sample: corpus has no held-out scenes");
  const auto imgs = generate_samples(corpus, items, st, sched, cfg.seed, {blank, cfg.sample.batch_size});
  const fs::path dir = c.out_or(blank ? "samples_blank" : "samples");
  fs::create_directories(dir);
  const CorpusManifest manifest = CorpusManifest::load(c.root() / "corpus");
  for (std::size_t k = 0; k < items.size(); ++k) {
    const std::size_t ri = items[k];
    const std::string stem = pad6(ri);
    write_pnm(dir / (stem + ".ppm"), imgs[k]);
    nlohmann::json side{{"seed", sample_seed_for(cfg.seed, ri)},
                        {"T", sched.T},
                        {"beta_start", sched.beta_start},
                        {"beta_end", sched.beta_end},
                        {"caption", corpus.items[ri].caption.raw_text},
                        {"prior_path", blank ? std::string("blank") : "corpus/" + manifest.records[ri].edge_path},
                        {"ref_index", ri}};
    write_text_file(dir / (stem + ".json"), side.dump(2) + "\n");
  }
  out << "wrote " << items.size() << " samples to " << dir.string() << "\n";
  return kExitOk;
}

int run_eval(const Common& c, const std::string& samples, const std::string& ckpt, bool json, std::ostream& out) {
  c.load();
  const CorpusManifest manifest = CorpusManifest::load(c.root() / "corpus");
  const TrainState st = from_checkpoint(load_checkpoint(c.root() / ckpt));
  const MetricReport r = evaluate(c.root() / samples, manifest, {&st.text, &st.image, &st.semantic});
  const fs::path dir = c.out_or("eval");
  write_text_file(dir / "report.json", r.to_json());
  write_text_file(dir / "items.csv", r.items_csv());
  if (json) {
    out << r.to_json();
  } else {
    char buf[256];
    std::snprintf(buf, sizeof buf, "clip_score %.6f\nFID (internal feature space) %.6f\nssim %.6f\nn_items %zu\n",
                  r.clip_score, r.fid, r.ssim, r.items.size());
    out << buf;
  }
  return kExitOk;
}

int run_ablate(const Common& c, const std::string& axis, const std::vector<double>& values, std::optional<int> steps,
               std::ostream& out, std::ostream& err) {
  PipelineConfig cfg = c.load();
  if (!axis.empty()) {
    cfg.ablate.axis = parse_axis(axis);
    cfg.ablate.values = default_axis_values(cfg.ablate.axis);
  }
  if (!values.empty()) cfg.ablate.values = values;
  if (steps) cfg.train.steps = *steps;
  cfg.validate();
  const Corpus corpus = open_corpus(c.root() / "corpus");
  const AblationResult r =
      run_ablation(corpus, cfg, open_semantic(c.root()), [&err](const std::string& m) { err << m << "\n"; });
  const fs::path file = c.out_or(fs::path("ablate") / (axis_name(cfg.ablate.axis) + ".csv"));
  write_text_file(file, r.csv());
  out << r.csv();
  return kExitOk;
}

int run_gradcheck(const Common& c, double tol, const std::vector<std::string>& comps, bool json, std::ostream& out) {
  const PipelineConfig cfg = c.load();
  const GradcheckReport r = gradcheck(comps, tol, cfg.seed);
  if (!c.out.empty()) write_text_file(c.root() / c.out, r.to_json());
  out << (json ? r.to_json() : r.to_text());
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structure- and text-conditioned diffusion on a synthetic shapes corpus", "t2i"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  bool overwrite = false, blank = false, json = false;
  std::optional<int> steps;
  std::string resume, ckpt = "train/final.bin", samples = "samples", axis;
  std::vector<double> values;
  double tol = 1e-4;
  std::vector<std::string> comps;

  auto* dataset = app.add_subcommand("dataset", "generate the synthetic corpus");
  add_common(dataset, common, "corpus directory (default corpus)");
  dataset->add_flag("--overwrite", overwrite, "replace an existing non-empty corpus directory");

  auto* pretrain = app.add_subcommand("pretrain", "train and freeze the semantic encoder");
  add_common(pretrain, common, "output directory (default semantic)");

  auto* trn = app.add_subcommand("train", "jointly train encoders and denoiser");
  add_common(trn, common, "output directory (default train)");
  trn->add_option("--steps", steps, "override train.steps");
  trn->add_option("--resume", resume, "checkpoint to continue from");

  auto* smp = app.add_subcommand("sample", "sample held-out scenes");
  add_common(smp, common, "output directory (default samples or samples_blank)");
  smp->add_option("--checkpoint", ckpt, "trained checkpoint")->capture_default_str();
  smp->add_flag("--blank-prior", blank, "condition on an all-zero structure prior");

  auto* ev = app.add_subcommand("eval", "score generated samples");
  add_common(ev, common, "output directory (default eval)");
  ev->add_option("--samples", samples, "directory of generated images")->capture_default_str();
  ev->add_option("--checkpoint", ckpt, "trained checkpoint")->capture_default_str();
  ev->add_flag("--json", json, "print the report as JSON");

  auto* abl = app.add_subcommand("ablate", "run a sensitivity sweep");
  add_common(abl, common, "CSV path (default ablate/<axis>.csv)");
  abl->add_option("--axis", axis, "embed_dim, caption_len or struct_weight");
  abl->add_option("--values", values, "axis values")->delimiter(',');
  abl->add_option("--steps", steps, "override the base train.steps");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gc, common, "also write the JSON report here");
  gc->add_option("--tolerance", tol, "maximum relative error")->capture_default_str();
  gc->add_option("--component", comps, "component to check (repeatable)");
  gc->add_flag("--json", json, "print the report as JSON");

  auto active = [&app]() -> const CLI::App* {
    const CLI::App* a = &app;
    for (auto* s : app.get_subcommands()) a = s;
    return a;
  };

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << active()->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << active()->help();
    return kExitUsage;
  }

  try {
    if (*dataset) return run_dataset(common, overwrite, out);
    if (*pretrain) return run_pretrain(common, out);
    if (*trn) return run_train(common, steps, resume, out, err);
    if (*smp) return run_sample(common, blank, ckpt, out);
    if (*ev) return run_eval(common, samples, ckpt, json, out);
    if (*abl) return run_ablate(common, axis, values, steps, out, err);
    if (*gc) return run_gradcheck(common, tol, comps, json, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NanLossError& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace t2i
