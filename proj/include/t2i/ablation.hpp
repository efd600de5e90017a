#pragma once

#include <functional>
#include <string>
#include <vector>

#include "t2i/config.hpp"
#include "t2i/corpus.hpp"
#include "t2i/encoders.hpp"

namespace t2i {

struct AblationRow {
  double axis_value = 0.0;
  double clip_score = 0.0;
  double fid = 0.0;
  double ssim = 0.0;
  double final_l_total = 0.0;
  double final_l_struct = 0.0;
  std::string error;  // empty for a successful cell
};

struct AblationResult {
  AblationAxis axis = AblationAxis::kStructWeight;
  std::vector<AblationRow> rows;

  std::string csv() const;
};

// Mean of the last ceil(10%) entries.
double tail_mean(const std::vector<double>& v);

// Every cell trains from the same seed at ceil(step_fraction * train.steps)
// steps and is evaluated on the first ablate.eval_items held-out scenes.
AblationResult run_ablation(const Corpus& corpus, const PipelineConfig& cfg, const SemanticEncoderParams& semantic,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace t2i
