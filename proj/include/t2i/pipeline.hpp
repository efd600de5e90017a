#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "t2i/corpus.hpp"
#include "t2i/diffusion.hpp"
#include "t2i/metrics.hpp"
#include "t2i/training.hpp"

namespace t2i {

// First `max_items` indices of the eval split (all when 0).
std::vector<std::size_t> held_out_items(const Corpus& corpus, int max_items);

std::uint64_t sample_seed_for(std::uint64_t seed, std::size_t ref_index);

struct SampleOptions {
  bool blank_prior = false;
  int batch_size = 50;
};

// One sample per corpus item, conditioned on its caption and edge prior (or an
// all-zero prior). Returned images are in [0,1]. Seeds depend only on
// (seed, item index), so both prior conditions share their noise.
std::vector<ImageTensor> generate_samples(const Corpus& corpus, std::span<const std::size_t> items,
                                          const TrainState& state, const NoiseSchedule& sched, std::uint64_t seed,
                                          const SampleOptions& opts = {});

// Metrics of generated images against the corpus items they were made for.
MetricReport evaluate_samples(const Corpus& corpus, std::span<const std::size_t> items,
                              std::span<const ImageTensor> generated, const TrainState& state);

}  // namespace t2i
