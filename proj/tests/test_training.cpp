#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "t2i/checkpoint.hpp"
#include "t2i/corpus.hpp"
#include "t2i/training.hpp"

using namespace t2i;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  Corpus corpus = build_corpus(64, 11, 16);
  SemanticEncoderParams semantic;
  TrainConfig cfg;

  Fixture() {
    PretrainConfig pc;
    pc.epochs = 1;
    pc.arch.trunk.canvas = 16;
    semantic = pretrain_semantic_encoder(corpus, pc);
    cfg.steps = 6;
    cfg.batch_size = 8;
    cfg.timesteps = 10;
    cfg.learning_rate = 0.01;
    cfg.checkpoint_interval = 3;
    cfg.seed = 21;
  }
};

std::vector<std::uint8_t> bytes_of(const TrainState& s) { return serialize_checkpoint(to_checkpoint(s)); }

template <class P>
bool same_params(const P& a, const P& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].data != b.params[i].data) return false;
  return true;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  Fixture f;
  f.cfg.learning_rate = 0.0;
  TrainState st = init_train_state(f.cfg, 16, f.semantic);
  const auto before = bytes_of(st);
  const auto idx = batch_indices_for_step(f.corpus, f.cfg, 0);
  train_step(st, make_batch(f.corpus, idx), f.cfg, f.cfg.schedule());
  CHECK(st.step == 1);
  st.step = 0;
  CHECK(bytes_of(st) == before);
}

TEST_CASE("denoise-only step with a fresh denoiser reports the mean squared noise") {
  Fixture f;
  f.cfg.weights = LossWeights::denoise_only();
  TrainState st = init_train_state(f.cfg, 16, f.semantic);
  const auto idx = batch_indices_for_step(f.corpus, f.cfg, 0);
  const StepResult r = train_step(st, make_batch(f.corpus, idx), f.cfg, f.cfg.schedule());
  double acc = 0;
  for (float e : r.draws.noise) acc += static_cast<double>(e) * e;
  const double want = acc / static_cast<double>(r.draws.noise.size());
  CHECK(r.report.l_denoise == doctest::Approx(want).epsilon(1e-6));
  CHECK(r.report.l_total == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("step draws and batches are pure functions of (seed, step)") {
  Fixture f;
  const StepDraws a = draws_for_step(5, 17, 4, 3, 16, 100), b = draws_for_step(5, 17, 4, 3, 16, 100);
  CHECK(a.timesteps == b.timesteps);
  CHECK(a.noise == b.noise);
  for (int t : a.timesteps) {
    CHECK(t >= 1);
    CHECK(t <= 100);
  }
  CHECK(draws_for_step(5, 18, 4, 3, 16, 100).noise != a.noise);

  const auto i1 = batch_indices_for_step(f.corpus, f.cfg, 4), i2 = batch_indices_for_step(f.corpus, f.cfg, 4);
  CHECK(i1 == i2);
  CHECK(i1.size() == 8);
  std::set<std::size_t> uniq(i1.begin(), i1.end());
  CHECK(uniq.size() == i1.size());
  for (auto i : i1) CHECK(f.corpus.items[i].split == Split::kTrain);
}

TEST_CASE("training is deterministic, logs consistent reports, keeps f frozen") {
  Fixture f;
  std::vector<LossReport> la, lb;
  const TrainState a = train(f.corpus, f.cfg, f.semantic, {}, &la);
  const TrainState b = train(f.corpus, f.cfg, f.semantic, {}, &lb);
  CHECK(bytes_of(a) == bytes_of(b));
  REQUIRE(la.size() == 6);
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i].l_total == lb[i].l_total);
    const LossWeights& w = f.cfg.weights;
    const double recomposed = w.lambda1 * la[i].l_clip + w.lambda2 * la[i].l_struct + w.lambda3 * la[i].l_sem + la[i].l_denoise;
    CHECK(std::abs(la[i].l_total - recomposed) < 1e-6);
  }
  CHECK(same_params(a.semantic, f.semantic));
  CHECK(a.semantic.params.frozen());
  CHECK_FALSE(same_params(a.denoiser, init_train_state(f.cfg, 16, f.semantic).denoiser));
}

TEST_CASE("zero steps returns the initialization") {
  Fixture f;
  f.cfg.steps = 0;
  CHECK(bytes_of(train(f.corpus, f.cfg, f.semantic)) == bytes_of(init_train_state(f.cfg, 16, f.semantic)));
}

TEST_CASE("resume from a checkpoint matches an uninterrupted run") {
  Fixture f;
  const fs::path root = fs::temp_directory_path() / "t2i_test_resume";
  fs::remove_all(root);
  TrainOptions full, part;
  full.out_dir = root / "full";
  part.out_dir = root / "part";
  train(f.corpus, f.cfg, f.semantic, full);
  CHECK(fs::exists(root / "full" / "ckpt_000003.bin"));
  CHECK(fs::exists(root / "full" / "ckpt_000006.bin"));

  TrainConfig first = f.cfg;
  first.steps = 4;
  train(f.corpus, first, f.semantic, part);
  // Continue from the step-3 checkpoint; loss.csv already holds 4 rows and is
  // cut back to 3 before appending.
  const TrainState mid = from_checkpoint(load_checkpoint(root / "part" / "ckpt_000003.bin"));
  CHECK(mid.step == 3);
  train(f.corpus, f.cfg, mid, part);

  CHECK(read_text_file(root / "full" / "final.bin") == read_text_file(root / "part" / "final.bin"));
  CHECK(read_text_file(root / "full" / "loss.csv") == read_text_file(root / "part" / "loss.csv"));
  CHECK(read_text_file(root / "full" / "ckpt_000006.bin") == read_text_file(root / "part" / "ckpt_000006.bin"));
  fs::remove_all(root);
}

TEST_CASE("train state survives a checkpoint round trip") {
  Fixture f;
  f.cfg.steps = 2;
  const TrainState st = train(f.corpus, f.cfg, f.semantic);
  const auto bytes = bytes_of(st);
  const TrainState back = from_checkpoint(deserialize_checkpoint(bytes));
  CHECK(bytes_of(back) == bytes);
  CHECK(back.step == 2);
  CHECK(back.semantic.params.frozen());
  CHECK(same_params(back.denoiser, st.denoiser));

  const SemanticEncoderParams sem = semantic_from_checkpoint(semantic_checkpoint(f.semantic, 0));
  CHECK(same_params(sem, f.semantic));
  CHECK(sem.params.frozen());
}

TEST_CASE("invalid setups are rejected") {
  Fixture f;
  SemanticEncoderParams unfrozen = init_semantic_encoder(f.semantic.arch, 1);
  CHECK_THROWS(init_train_state(f.cfg, 16, unfrozen));
  CHECK_THROWS(init_train_state(f.cfg, 32, f.semantic));
  TrainConfig bad = f.cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("loss csv formatting") {
  CHECK(loss_csv_header() == "step,l_clip,l_struct,l_sem,l_denoise,l_total");
  LossReport r;
  r.l_clip = 1.5;
  r.l_total = 2.25;
  CHECK(loss_csv_row(7, r).rfind("7,1.5,0,0,0,2.25", 0) == 0);
}
