#include "lesionnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lesionnet {
namespace {

double probe_loss(const Layer<double>& layer, const Tensor<double>& input,
                  const Tensor<double>& probe) {
  const Tensor<double> out = layer.forward(input);
  double loss = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) {
      fail(ErrorKind::kNumeric, "gradient_check: non-finite forward output");
    }
    loss += out[i] * probe[i];
  }
  return loss;
}

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t limit,
                                      std::mt19937_64& gen) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n > limit) {
    std::shuffle(idx.begin(), idx.end(), gen);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradient_check(Layer<double>& layer, const Tensor<double>& input,
                               const GradCheckOptions& options) {
  const double eps = options.epsilon;
  if (!(eps > 0.0 && eps <= 1e-2)) {
    fail(ErrorKind::kInvalidArgument, "gradient_check: epsilon must be in (0, 1e-2]");
  }
  for (double v : input.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "gradient_check: non-finite input");
  }

  std::mt19937_64 gen(options.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Tensor<double> probe(layer.output_shape(input.shape()));
  for (double& v : probe.data()) v = unit(gen);

  const LayerGradients<double> analytic = layer.backward(input, probe);
  GradCheckResult result;

  auto record = [&](double a, double n) {
    if (!std::isfinite(a) || !std::isfinite(n)) {
      fail(ErrorKind::kNumeric, "gradient_check: non-finite gradient");
    }
    result.max_relative_error =
        std::max(result.max_relative_error, relative_error(a, n, options.denominator_floor));
    ++result.checked;
  };

  Tensor<double> x = input;
  for (std::size_t i : pick_indices(x.size(), options.max_elements_per_tensor, gen)) {
    if (layer.kink_near(input, i, eps)) {
      ++result.skipped;
      continue;
    }
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = probe_loss(layer, x, probe);
    x[i] = saved - eps;
    const double down = probe_loss(layer, x, probe);
    x[i] = saved;
    record(analytic.input_grad[i], (up - down) / (2.0 * eps));
  }

  std::vector<Tensor<double>*> params = layer.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& param = *params[p];
    for (std::size_t i : pick_indices(param.size(), options.max_elements_per_tensor, gen)) {
      const double saved = param[i];
      param[i] = saved + eps;
      const double up = probe_loss(layer, input, probe);
      param[i] = saved - eps;
      const double down = probe_loss(layer, input, probe);
      param[i] = saved;
      record(analytic.param_grads.at(p)[i], (up - down) / (2.0 * eps));
    }
  }
  return result;
}

}  // namespace lesionnet
