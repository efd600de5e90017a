#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "t2i/encoders.hpp"
#include "t2i/training.hpp"

namespace t2i {

struct DatasetConfig {
  int count = 2000;
  int canvas = kDefaultCanvas;
};

struct SampleConfig {
  int max_items = 100;  // held-out scenes to sample; 0 = whole eval split
  int batch_size = 50;
};

enum class AblationAxis { kEmbedDim, kCaptionLen, kStructWeight };

struct AblationConfig {
  AblationAxis axis = AblationAxis::kStructWeight;
  std::vector<double> values{0.0, 0.25, 0.5, 1.0, 2.0};
  double step_fraction = 0.25;
  int eval_items = 50;

  void validate() const;
};

std::string axis_name(AblationAxis a);
AblationAxis parse_axis(const std::string& s);
std::vector<double> default_axis_values(AblationAxis a);

// Whole-pipeline configuration. A single seed drives every stage.
struct PipelineConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  PretrainConfig pretrain;
  TrainConfig train;
  SampleConfig sample;
  AblationConfig ablate;

  void set_seed(std::uint64_t s);
  void validate() const;
};

// Unknown or mistyped fields raise ConfigError.
PipelineConfig parse_config(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const PipelineConfig& c);

}  // namespace t2i
