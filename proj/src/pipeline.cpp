#include "t2i/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

namespace t2i {

namespace {
constexpr std::uint64_t kSampleStream = 0x5A3B;
}

std::vector<std::size_t> held_out_items(const Corpus& corpus, int max_items) {
  std::vector<std::size_t> idx = corpus.indices(Split::kEval);
  if (max_items > 0 && idx.size() > static_cast<std::size_t>(max_items)) idx.resize(static_cast<std::size_t>(max_items));
  return idx;
}

std::uint64_t sample_seed_for(std::uint64_t seed, std::size_t ref_index) {
  return derive_seed(seed, kSampleStream, ref_index);
}

std::vector<ImageTensor> generate_samples(const Corpus& corpus, std::span<const std::size_t> items,
                                          const TrainState& state, const NoiseSchedule& sched, std::uint64_t seed,
                                          const SampleOptions& opts) {
  if (opts.batch_size < 1) throw std::invalid_argument("generate_samples: batch_size must be >= 1");
  std::vector<ImageTensor> out;
  out.reserve(items.size());
  for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(opts.batch_size)) {
    const std::size_t end = std::min(items.size(), start + static_cast<std::size_t>(opts.batch_size));
    std::vector<StructurePrior> priors;
    std::vector<Caption> caps;
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = start; k < end; ++k) {
      const CorpusItem& it = corpus.items.at(items[k]);
      priors.push_back(StructurePrior{opts.blank_prior ? ImageTensor(1, it.edge.height, it.edge.width) : it.edge});
      caps.push_back(it.caption);
      seeds.push_back(sample_seed_for(seed, items[k]));
    }
    const auto text = encode_texts(caps, state.text);
    for (auto& x : sample_batch(priors, text, state.denoiser, sched, seeds)) out.push_back(to_unit_range(x));
  }
  return out;
}

MetricReport evaluate_samples(const Corpus& corpus, std::span<const std::size_t> items,
                              std::span<const ImageTensor> generated, const TrainState& state) {
  if (items.size() != generated.size()) throw std::invalid_argument("evaluate_samples: count mismatch");
  std::vector<ImageTensor> refs;
  std::vector<Caption> caps;
  std::vector<std::string> names;
  for (std::size_t i : items) {
    refs.push_back(corpus.items.at(i).image);
    caps.push_back(corpus.items.at(i).caption);
    names.push_back(std::to_string(i));
  }
  const EvalModels models{&state.text, &state.image, &state.semantic};
  return evaluate_images(generated, refs, caps, models, names, items);
}

}  // namespace t2i
