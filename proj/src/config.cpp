#include "t2i/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace t2i {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <class U>
  void get(const char* key, U& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      const json& v = j_.at(key);
      if constexpr (std::is_same_v<U, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<U>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<U>) {
          if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_floating_point_v<U>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<U, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<U>();
    } catch (const std::exception&) {
      throw ConfigError("config: field '" + name_ + "." + key + "' has the wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown field '" + name_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_train(const json& j, TrainConfig& c) {
  Section s(j, "train");
  s.get("steps", c.steps);
  s.get("batch_size", c.batch_size);
  s.get("learning_rate", c.learning_rate);
  s.get("timesteps", c.timesteps);
  s.get("beta_start", c.beta_start);
  s.get("beta_end", c.beta_end);
  s.get("lambda1", c.weights.lambda1);
  s.get("lambda2", c.weights.lambda2);
  s.get("lambda3", c.weights.lambda3);
  s.get("denoise_only", c.weights.denoise_only_mode);
  s.get("temperature", c.temperature);
  s.get("symmetric_clip", c.symmetric_clip);
  s.get("embed_dim", c.embed_dim);
  s.get("denoiser_hidden", c.denoiser_hidden);
  s.get("checkpoint_interval", c.checkpoint_interval);
  s.finish();
}

}  // namespace

std::string axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::kEmbedDim: return "embed_dim";
    case AblationAxis::kCaptionLen: return "caption_len";
    case AblationAxis::kStructWeight: return "struct_weight";
  }
  return "?";
}

AblationAxis parse_axis(const std::string& s) {
  if (s == "embed_dim") return AblationAxis::kEmbedDim;
  if (s == "caption_len") return AblationAxis::kCaptionLen;
  if (s == "struct_weight") return AblationAxis::kStructWeight;
  throw ConfigError("unknown ablation axis '" + s + "' (embed_dim, caption_len, struct_weight)");
}

std::vector<double> default_axis_values(AblationAxis a) {
  switch (a) {
    case AblationAxis::kEmbedDim: return {8, 16, 32, 64, 128};
    case AblationAxis::kCaptionLen: return {3, 6, 10, 14};
    case AblationAxis::kStructWeight: return {0.0, 0.25, 0.5, 1.0, 2.0};
  }
  return {};
}

void AblationConfig::validate() const {
  if (values.empty()) throw ConfigError("ablate.values must not be empty");
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("ablate.values must be finite");
    switch (axis) {
      case AblationAxis::kEmbedDim:
        if (v < 1 || v != std::floor(v)) throw ConfigError("embed_dim values must be positive integers");
        break;
      case AblationAxis::kCaptionLen:
        if (v < kMinCaptionTokens || v > kMaxCaptionTokens || v != std::floor(v)) {
          throw ConfigError("caption_len values must be integers in [3, 16]");
        }
        break;
      case AblationAxis::kStructWeight:
        if (v < 0) throw ConfigError("struct_weight values must be >= 0");
        break;
    }
  }
  if (!(step_fraction > 0.0 && step_fraction <= 1.0)) throw ConfigError("ablate.step_fraction must be in (0, 1]");
  if (eval_items < 2) throw ConfigError("ablate.eval_items must be >= 2");
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  pretrain.seed = s;
  train.seed = s;
}

void PipelineConfig::validate() const {
  if (dataset.count < 0) throw ConfigError("dataset.count must be >= 0");
  if (dataset.canvas < 8 || (dataset.canvas & (dataset.canvas - 1)) != 0) {
    throw ConfigError("dataset.canvas must be a power of two >= 8");
  }
  if (pretrain.epochs < 0 || pretrain.batch_size < 1 || !(pretrain.learning_rate > 0)) {
    throw ConfigError("pretrain: epochs >= 0, batch_size >= 1, learning_rate > 0 required");
  }
  if (pretrain.arch.feature_dim < 1) throw ConfigError("pretrain.feature_dim must be >= 1");
  train.validate();
  if (sample.max_items < 0 || sample.batch_size < 1) throw ConfigError("sample: max_items >= 0, batch_size >= 1");
  ablate.validate();
}

PipelineConfig parse_config(const json& j) {
  PipelineConfig c;
  Section top(j, "config");
  std::uint64_t seed = 0;
  top.get("seed", seed);
  if (const json* d = top.sub("dataset")) {
    Section s(*d, "dataset");
    s.get("count", c.dataset.count);
    s.get("canvas", c.dataset.canvas);
    s.finish();
  }
  if (const json* p = top.sub("pretrain")) {
    Section s(*p, "pretrain");
    s.get("epochs", c.pretrain.epochs);
    s.get("batch_size", c.pretrain.batch_size);
    s.get("learning_rate", c.pretrain.learning_rate);
    s.get("feature_dim", c.pretrain.arch.feature_dim);
    s.finish();
  }
  if (const json* t = top.sub("train")) read_train(*t, c.train);
  if (const json* p = top.sub("sample")) {
    Section s(*p, "sample");
    s.get("max_items", c.sample.max_items);
    s.get("batch_size", c.sample.batch_size);
    s.finish();
  }
  if (const json* a = top.sub("ablate")) {
    Section s(*a, "ablate");
    std::string axis = axis_name(c.ablate.axis);
    s.get("axis", axis);
    c.ablate.axis = parse_axis(axis);
    c.ablate.values = default_axis_values(c.ablate.axis);
    if (const json* v = s.sub("values")) {
      if (!v->is_array()) throw ConfigError("config: 'ablate.values' must be an array");
      c.ablate.values.clear();
      for (const auto& x : *v) {
        if (!x.is_number()) throw ConfigError("config: 'ablate.values' must hold numbers");
        c.ablate.values.push_back(x.get<double>());
      }
    }
    s.get("step_fraction", c.ablate.step_fraction);
    s.get("eval_items", c.ablate.eval_items);
    s.finish();
  }
  top.finish();
  c.pretrain.arch.trunk.canvas = c.dataset.canvas;
  c.set_seed(seed);
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const TrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"timesteps", c.timesteps},
              {"beta_start", c.beta_start},
              {"beta_end", c.beta_end},
              {"lambda1", c.weights.lambda1},
              {"lambda2", c.weights.lambda2},
              {"lambda3", c.weights.lambda3},
              {"denoise_only", c.weights.denoise_only_mode},
              {"temperature", c.temperature},
              {"symmetric_clip", c.symmetric_clip},
              {"embed_dim", c.embed_dim},
              {"denoiser_hidden", c.denoiser_hidden},
              {"checkpoint_interval", c.checkpoint_interval}};
}

json to_json(const PipelineConfig& c) {
  return json{{"seed", c.seed},
              {"dataset", {{"count", c.dataset.count}, {"canvas", c.dataset.canvas}}},
              {"pretrain",
               {{"epochs", c.pretrain.epochs},
                {"batch_size", c.pretrain.batch_size},
                {"learning_rate", c.pretrain.learning_rate},
                {"feature_dim", c.pretrain.arch.feature_dim}}},
              {"train", to_json(c.train)},
              {"sample", {{"max_items", c.sample.max_items}, {"batch_size", c.sample.batch_size}}},
              {"ablate",
               {{"axis", axis_name(c.ablate.axis)},
                {"values", c.ablate.values},
                {"step_fraction", c.ablate.step_fraction},
                {"eval_items", c.ablate.eval_items}}}};
}

}  // namespace t2i
