#include "t2i/ablation.hpp"

#include <cmath>
#include <cstdio>

#include "t2i/pipeline.hpp"

namespace t2i {

std::string AblationResult::csv() const {
  std::string out = "axis_value,clip_score,fid,ssim,final_l_total,final_l_struct,error\n";
  char buf[256];
  for (const auto& r : rows) {
    if (r.error.empty()) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,\n", r.axis_value, r.clip_score, r.fid, r.ssim,
                    r.final_l_total, r.final_l_struct);
      out += buf;
    } else {
      std::snprintf(buf, sizeof buf, "%.9g,,,,,,", r.axis_value);
      std::string msg = r.error;
      for (char& c : msg)
        if (c == '"' || c == '\n' || c == ',') c = ' ';
      out += buf + ("\"" + msg + "\"\n");
    }
  }
  return out;
}

double tail_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const std::size_t k = std::max<std::size_t>(1, (v.size() + 9) / 10);
  double acc = 0;
  for (std::size_t i = v.size() - k; i < v.size(); ++i) acc += v[i];
  return acc / static_cast<double>(k);
}

AblationResult run_ablation(const Corpus& corpus, const PipelineConfig& cfg, const SemanticEncoderParams& semantic,
                            const std::function<void(const std::string&)>& progress) {
  cfg.ablate.validate();
  AblationResult res;
  res.axis = cfg.ablate.axis;
  const int steps = static_cast<int>(std::ceil(cfg.ablate.step_fraction * cfg.train.steps));
  for (double v : cfg.ablate.values) {
    AblationRow row;
    row.axis_value = v;
    try {
      TrainConfig tc = cfg.train;
      tc.steps = steps;
      tc.checkpoint_interval = 0;
      Corpus cell_corpus;
      const Corpus* data = &corpus;
      switch (cfg.ablate.axis) {
        case AblationAxis::kEmbedDim:
          tc.embed_dim = static_cast<int>(v);
          break;
        case AblationAxis::kCaptionLen:
          cell_corpus = corpus;
          recaption(cell_corpus, static_cast<int>(v));
          data = &cell_corpus;
          break;
        case AblationAxis::kStructWeight:
          tc.weights.lambda2 = v;
          break;
      }
      std::vector<LossReport> log;
      const TrainState st = train(*data, tc, semantic, {}, &log);
      std::vector<double> tot, str;
      for (const auto& r : log) {
        tot.push_back(r.l_total);
        str.push_back(r.l_struct);
      }
      row.final_l_total = tail_mean(tot);
      row.final_l_struct = tail_mean(str);
      const auto items = held_out_items(*data, cfg.ablate.eval_items);
      const auto gen = generate_samples(*data, items, st, tc.schedule(), cfg.seed, {false, cfg.sample.batch_size});
      const MetricReport m = evaluate_samples(*data, items, gen, st);
      row.clip_score = m.clip_score;
      row.fid = m.fid;
      row.ssim = m.ssim;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s=%g done%s", axis_name(cfg.ablate.axis).c_str(), v,
                    row.error.empty() ? "" : " (error)");
      progress(buf);
    }
    res.rows.push_back(std::move(row));
  }
  return res;
}

}  // namespace t2i
