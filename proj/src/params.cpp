#include "t2i/params.hpp"

namespace t2i {

std::vector<float> glorot_uniform(std::size_t count, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> out(count);
  for (auto& v : out) v = static_cast<float>(rng.uniform(-a, a));
  return out;
}

}  // namespace t2i
