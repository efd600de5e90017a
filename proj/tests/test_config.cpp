#include "doctest.h"
#include "json.hpp"
#include "t2i/config.hpp"

using namespace t2i;
using nlohmann::json;

TEST_CASE("empty config yields defaults") {
  const PipelineConfig c = parse_config(json::object());
  CHECK(c.dataset.count == 2000);
  CHECK(c.dataset.canvas == 32);
  CHECK(c.train.steps == 1000);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.timesteps == 100);
  CHECK(c.train.embed_dim == 32);
  CHECK(c.train.weights.lambda1 == 0.5);
  CHECK(c.train.weights.lambda2 == 1.0);
  CHECK(c.train.weights.lambda3 == 0.5);
  CHECK(c.train.temperature == 0.07);
  CHECK(c.ablate.values == std::vector<double>{0.0, 0.25, 0.5, 1.0, 2.0});
}

TEST_CASE("seed propagates to every stage") {
  const PipelineConfig c = parse_config(json{{"seed", 77}});
  CHECK(c.seed == 77);
  CHECK(c.pretrain.seed == 77);
  CHECK(c.train.seed == 77);
}

TEST_CASE("unknown fields are rejected") {
  CHECK_THROWS_AS(parse_config(json{{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"stepz", 10}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"ablate", {{"axis", "struct_weight"}, {"extra", true}}}}), ConfigError);
}

TEST_CASE("mistyped and invalid values are rejected") {
  CHECK_THROWS_AS(parse_config(json{{"train", {{"steps", "ten"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"steps", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"seed", -1}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"steps", -1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"learning_rate", -0.1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"batch_size", 0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"lambda1", 0}, {"lambda2", 0}, {"lambda3", 0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"dataset", {{"canvas", 24}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"ablate", {{"axis", "depth"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"ablate", {{"axis", "caption_len"}, {"values", {2, 6}}}}}), ConfigError);
}

TEST_CASE("denoise-only mode needs all-zero weights") {
  const json ok{{"train", {{"lambda1", 0}, {"lambda2", 0}, {"lambda3", 0}, {"denoise_only", true}}}};
  CHECK(parse_config(ok).train.weights.denoise_only_mode);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"denoise_only", true}}}}), ConfigError);
}

TEST_CASE("ablation axis selects its default values") {
  const PipelineConfig c = parse_config(json{{"ablate", {{"axis", "caption_len"}}}});
  CHECK(c.ablate.axis == AblationAxis::kCaptionLen);
  CHECK(c.ablate.values == std::vector<double>{3, 6, 10, 14});
  CHECK(parse_config(json{{"ablate", {{"axis", "embed_dim"}}}}).ablate.values ==
        std::vector<double>{8, 16, 32, 64, 128});
}

TEST_CASE("config survives a JSON round trip") {
  const json in{{"seed", 5},
                {"dataset", {{"count", 300}}},
                {"train", {{"steps", 40}, {"learning_rate", 0.02}, {"symmetric_clip", true}}},
                {"ablate", {{"axis", "embed_dim"}, {"values", {8, 16}}}}};
  const PipelineConfig a = parse_config(in);
  const PipelineConfig b = parse_config(to_json(a));
  CHECK(to_json(a) == to_json(b));
  CHECK(b.train.learning_rate == 0.02);
  CHECK(b.train.symmetric_clip);
  CHECK(b.ablate.values == std::vector<double>{8, 16});
}
