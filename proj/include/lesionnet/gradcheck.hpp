#pragma once

#include <cstddef>
#include <cstdint>

#include "lesionnet/layers.hpp"

namespace lesionnet {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Tensors larger than this are checked on a seeded random subsample.
  std::size_t max_elements_per_tensor = 512;
  std::uint64_t seed = 0;
  // Relative errors use max(|analytic|, |numeric|, floor) as denominator so
  // that gradients that are zero up to rounding do not dominate.
  double denominator_floor = 1e-4;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // elements next to a non-differentiable point
};

// Compares the layer's analytic gradients against central finite differences
// of the scalar probe loss sum(forward(x) * r), r uniform in [-1, 1], for the
// input and every parameter. Runs at 64-bit precision only.
GradCheckResult gradient_check(Layer<double>& layer, const Tensor<double>& input,
                               const GradCheckOptions& options = {});

inline GradCheckResult gradient_check(Layer<double>& layer, const Tensor<double>& input,
                                      double epsilon) {
  GradCheckOptions options;
  options.epsilon = epsilon;
  return gradient_check(layer, input, options);
}

// Relative error used throughout the checks.
double relative_error(double analytic, double numeric, double floor);

}  // namespace lesionnet
