#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "t2i/objectives.hpp"
#include "t2i/rng.hpp"

using namespace t2i;

namespace {

Embedding vec(std::initializer_list<float> v) { return Embedding(std::vector<float>(v)); }

std::vector<Embedding> random_batch(Rng& rng, int n, int d) {
  std::vector<Embedding> out;
  for (int i = 0; i < n; ++i) {
    std::vector<float> v(static_cast<std::size_t>(d));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    out.emplace_back(std::move(v));
  }
  return out;
}

// Direct evaluation of -log softmax over each row, no stabilization tricks
// beyond what long double range gives.
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

}  // namespace

TEST_CASE("cosine similarity") {
  CHECK(cosine_sim(vec({3, 4}), vec({3, 4})) == doctest::Approx(1.0));
  CHECK(cosine_sim(vec({1, 0}), vec({0, 2})) == doctest::Approx(0.0));
  CHECK(cosine_sim(vec({1, 0}), vec({1, 1})) == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(cosine_sim(vec({0, 0}), vec({1, 1})) == 0.0);
  CHECK_THROWS(cosine_sim(vec({1, 0}), vec({1, 0, 0})));
}

TEST_CASE("clip loss: single pair is zero") {
  const ContrastiveConfig cfg;
  const std::vector<Embedding> v{vec({1, 2, 3})}, t{vec({-1, 0, 5})};
  CHECK(clip_loss(v, t, cfg) == 0.0);
}

TEST_CASE("clip loss: uniform similarities give ln N") {
  const ContrastiveConfig cfg;
  for (int n : {2, 3, 5, 8}) {
    std::vector<double> sim(static_cast<std::size_t>(n * n), 0.37);
    CHECK(clip_loss_from_similarity(sim, n, cfg) == doctest::Approx(std::log(n)).epsilon(1e-12));
    // Identical embeddings everywhere also make every similarity equal.
    const std::vector<Embedding> v(static_cast<std::size_t>(n), vec({1, 1})), t(static_cast<std::size_t>(n), vec({2, -1}));
    CHECK(clip_loss(v, t, cfg) == doctest::Approx(std::log(n)).epsilon(1e-9));
  }
}

TEST_CASE("clip loss: two-item identity similarity at unit temperature") {
  ContrastiveConfig cfg;
  cfg.temperature = 1.0;
  const std::vector<double> sim{1, 0, 0, 1};
  const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(want == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(clip_loss_from_similarity(sim, 2, cfg) == doctest::Approx(want).epsilon(1e-12));
  const std::vector<Embedding> v{vec({1, 0}), vec({0, 1})};
  CHECK(clip_loss(v, v, cfg) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("clip loss matches a brute-force softmax on random batches") {
  Rng rng(100);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(8));
    const int d = 1 + static_cast<int>(rng.below(16));
    ContrastiveConfig cfg;
    cfg.temperature = trial % 2 ? 0.07 : 0.5;
    const auto v = random_batch(rng, n, d), t = random_batch(rng, n, d);
    worst = std::max(worst, std::abs(clip_loss(v, t, cfg) - brute_clip(v, t, cfg.temperature)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("clip loss properties") {
  Rng rng(5);
  const ContrastiveConfig cfg;
  const auto v = random_batch(rng, 6, 8);
  const auto t = random_batch(rng, 6, 8);
  const double base = clip_loss(v, t, cfg);
  CHECK(base >= 0.0);
  for (float k : {0.5f, 2.0f, 10.0f}) {
    auto scaled = v;
    for (auto& x : scaled[2].values) x *= k;
    CHECK(std::abs(clip_loss(scaled, t, cfg) - base) < 1e-6);
  }
  CHECK_THROWS(clip_loss(std::vector<Embedding>{}, std::vector<Embedding>{}, cfg));
}

TEST_CASE("clip loss decreases when one diagonal similarity increases") {
  ContrastiveConfig cfg;
  std::vector<double> sim{0.2, 0.1, 0.3, 0.0, 0.5, -0.2, 0.1, 0.4, 0.6};
  const double before = clip_loss_from_similarity(sim, 3, cfg);
  sim[4] = 0.9;
  CHECK(clip_loss_from_similarity(sim, 3, cfg) < before);
}

TEST_CASE("symmetric clip loss averages both directions") {
  ContrastiveConfig one, two;
  one.temperature = two.temperature = 1.0;
  two.symmetric = true;
  const std::vector<double> sim{1.0, 0.2, -0.5, 0.3};
  const std::vector<double> sim_t{1.0, -0.5, 0.2, 0.3};
  CHECK(clip_loss_from_similarity(sim, 2, two) ==
        doctest::Approx(0.5 * (clip_loss_from_similarity(sim, 2, one) + clip_loss_from_similarity(sim_t, 2, one))));
}

TEST_CASE("struct loss anchors") {
  CHECK(struct_loss(FeatureStack{{1, 2, 3}}, FeatureStack{{1, 1, 1}}) == doctest::Approx(1.0));
  CHECK(struct_loss(FeatureStack{{1, 2, 3}}, FeatureStack{{1, 2, 3}}) == 0.0);
  CHECK(std::abs(struct_loss(ImageTensor(3, 16, 16, 0.2f), StructurePrior{ImageTensor(1, 16, 16, 0.9f)})) < 1e-12);
  CHECK_THROWS(struct_loss(FeatureStack{{1, 2}}, FeatureStack{{1, 2, 3}}));
  CHECK_THROWS(struct_loss(ImageTensor(3, 16, 16), StructurePrior{ImageTensor(1, 8, 8)}));
}

TEST_CASE("struct loss is zero when x_hat has the prior's edge pyramid") {
  ImageTensor edge(1, 16, 16, 0.0f);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) edge.at(0, y, x) = 1.0f;
  // A grey image whose luminance equals the edge map.
  ImageTensor img(3, 16, 16);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < edge.size(); ++i) img.data[c * edge.size() + i] = edge.data[i];
  CHECK(std::abs(struct_loss(img, StructurePrior{edge})) < 1e-6);
}

TEST_CASE("sem loss anchors") {
  CHECK(std::abs(sem_loss(vec({1, 2}), vec({1, 2}))) < 1e-12);
  CHECK(std::abs(sem_loss(vec({1, 2}), vec({3, 6}))) < 1e-7);
  CHECK(sem_loss(vec({1, 0}), vec({0, 1})) == doctest::Approx(1.0));
  CHECK(sem_loss(vec({1, 2}), vec({-1, -2})) == doctest::Approx(2.0));
  CHECK_THROWS(sem_loss(vec({1, 2}), vec({1, 2, 3})));
}

TEST_CASE("total loss recomposition") {
  CHECK(total_loss({0.3, 0.5, 0.2, 0.1}, {1, 2, 3}) == doctest::Approx(2.0));
  CHECK(total_loss({0.7, 0.5, 0.2, 0.0}, {1, 0, 0}) == doctest::Approx(0.7));
  CHECK(total_loss({0, 0, 0, 0}, LossWeights{}) == 0.0);

  Rng rng(8);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const LossParts p{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 2), rng.uniform(0, 3)};
    const LossWeights w{rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3)};
    const double want = w.lambda1 * p.l_clip + w.lambda2 * p.l_struct + w.lambda3 * p.l_sem + p.l_denoise;
    worst = std::max(worst, std::abs(total_loss(p, w) - want));
    const LossReport r = make_report(p, w);
    CHECK(r.l_total == total_loss(p, w));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("total loss names the non-finite term") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss({0.1, nan, 0.1, 0.1}, LossWeights{});
    FAIL("expected NanLossError");
  } catch (const NanLossError& e) {
    CHECK(std::string(e.what()).find("l_struct") != std::string::npos);
  }
  CHECK_THROWS_AS(total_loss({0.1, 0.1, 0.1, std::numeric_limits<double>::infinity()}, LossWeights{}), NanLossError);
}

TEST_CASE("loss weights validation") {
  CHECK_NOTHROW(LossWeights{}.validate());
  CHECK_NOTHROW(LossWeights::denoise_only().validate());
  CHECK_THROWS((LossWeights{0, 0, 0}.validate()));
  CHECK_THROWS((LossWeights{-1, 1, 1}.validate()));
}
