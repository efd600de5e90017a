#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "t2i/autograd.hpp"

namespace t2i {

struct GradcheckEntry {
  std::string component;
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar derivatives compared
  std::size_t parameters = 0;  // scalar parameters of the micro model involved
  bool passed = false;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;

  bool all_passed() const;
  const GradcheckEntry& entry(const std::string& component) const;
  std::string to_json() const;
  std::string to_text() const;
};

inline constexpr double kRelErrorFloor = 1e-6;

// |a - n| / max(|a|, |n|, kRelErrorFloor)
double relative_error(double analytic, double numeric);

struct GradInput {
  Shape shape;
  std::vector<double> value;
};

using ScalarGraph = std::function<ag::Var(ag::Tape<double>&, const std::vector<ag::Var>&)>;

// Compares d(graph)/d(inputs) with central differences, step 1e-5 max(1,|x|).
// Returns the maximum relative error and sets `checked`.
double check_gradients(const ScalarGraph& graph, const std::vector<GradInput>& inputs, std::size_t* checked = nullptr);

std::vector<std::string> gradcheck_components();

// Runs the named components (all when empty) on a miniature model.
GradcheckReport gradcheck(const std::vector<std::string>& components, double tolerance, std::uint64_t seed = 0);

}  // namespace t2i
