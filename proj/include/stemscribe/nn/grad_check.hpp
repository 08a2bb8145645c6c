#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "stemscribe/nn/tensor.hpp"

namespace stemscribe::nn {

struct GradCheckOptions {
  double step = 1e-4;
  // Denominator floor so gradients that are zero up to rounding do not
  // produce meaningless relative errors.
  double floor = 1e-8;
  // 0 checks every element; otherwise at most this many evenly strided
  // elements per parameter.
  std::size_t max_per_param = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares analytic gradients against central differences.
// loss() returns the scalar loss and adds the analytic gradient into each
// parameter's grad without clearing it first.
template <typename LossFn>
GradCheckResult grad_check(const ParamList& params, LossFn&& loss,
                           const GradCheckOptions& opts = {}) {
  zero_grads(params);
  loss();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const std::size_t n = p.value.size();
    const std::size_t stride =
        opts.max_per_param == 0 ? 1 : std::max<std::size_t>(1, n / opts.max_per_param);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.step;
      const double up = loss();
      p.value[i] = saved - opts.step;
      const double down = loss();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = i;
      }
    }
  }
  zero_grads(params);
  return result;
}

}  // namespace stemscribe::nn
