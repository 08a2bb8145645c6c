#pragma once

#include <algorithm>
#include <cmath>

#include "stemscribe/nn/tensor.hpp"

namespace stemscribe::nn {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d value / d prediction
};

struct FocalLossParams {
  double alpha = 0.35;
  double gamma = 3.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw Error(ErrorCode::kInvalidArgument, "focal alpha must lie in (0, 1]");
    if (!(gamma >= 0.0))
      throw Error(ErrorCode::kInvalidArgument, "focal gamma must be >= 0");
  }
};

inline constexpr double kProbabilityClip = 1e-7;

// Mean over elements of -alpha * (1 - p_t)^gamma * log(p_t), where
// p_t = y*p + (1-y)*(1-p) and p is clipped to [eps, 1-eps].
// alpha = 1 is accepted so the gamma = 0 case reduces to plain cross-entropy.
inline LossResult focal_loss(const Tensor& y_pred, const Tensor& y_true,
                             const FocalLossParams& params) {
  params.validate();
  if (y_pred.shape != y_true.shape)
    throw Error(ErrorCode::kShapeMismatch,
                "focal loss: " + shape_string(y_pred.shape) + " vs " +
                    shape_string(y_true.shape));
  const double n = static_cast<double>(std::max<std::size_t>(1, y_pred.size()));
  LossResult out{0.0, Tensor(y_pred.shape)};
  for (std::size_t i = 0; i < y_pred.size(); ++i) {
    const double raw = y_pred[i];
    const double p = std::clamp(raw, kProbabilityClip, 1.0 - kProbabilityClip);
    const double y = y_true[i];
    const double pt = y * p + (1.0 - y) * (1.0 - p);
    const double one_minus = 1.0 - pt;
    const double mod = std::pow(one_minus, params.gamma);
    const double log_pt = std::log(pt);
    out.value += -params.alpha * mod * log_pt;

    // dL/dpt = alpha * (gamma (1-pt)^(gamma-1) log pt - (1-pt)^gamma / pt)
    double dpt = -params.alpha * mod / pt;
    if (params.gamma != 0.0 && one_minus > 0.0)
      dpt += params.alpha * params.gamma * std::pow(one_minus, params.gamma - 1.0) * log_pt;
    const double dp = dpt * (2.0 * y - 1.0);
    const bool clipped = raw < kProbabilityClip || raw > 1.0 - kProbabilityClip;
    out.grad[i] = clipped ? 0.0 : dp / n;
  }
  out.value /= n;
  return out;
}

// Mean binary cross-entropy with the same clipping as focal_loss.
inline double binary_cross_entropy(const Tensor& y_pred, const Tensor& y_true) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y_pred.size(); ++i) {
    const double p = std::clamp(y_pred[i], kProbabilityClip, 1.0 - kProbabilityClip);
    const double y = y_true[i];
    acc += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return acc / static_cast<double>(std::max<std::size_t>(1, y_pred.size()));
}

inline LossResult mean_squared_error(const Tensor& pred, const Tensor& target) {
  if (pred.shape != target.shape)
    throw Error(ErrorCode::kShapeMismatch, "mse shape mismatch");
  const double n = static_cast<double>(std::max<std::size_t>(1, pred.size()));
  LossResult out{0.0, Tensor(pred.shape)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

}  // namespace stemscribe::nn
