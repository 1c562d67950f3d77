#pragma once

#include <cmath>

#include "cfrl/numerics/tensor.hpp"

namespace cfrl::nn {

/// Scalar loss value with its gradient w.r.t. the prediction.
struct LossGrad {
  double value = 0.0;
  Tensor2 grad;
};

/// Mean over all entries of (pred - target)^2.
inline LossGrad mse(const Tensor2& pred, const Tensor2& target) {
  check_same_shape(pred, target, "mse");
  const Tensor2 diff = pred - target;
  const double n = static_cast<double>(diff.size());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

/// Mean Huber loss with threshold delta.
inline LossGrad huber(const Tensor2& pred, const Tensor2& target, double delta = 1.0) {
  check_same_shape(pred, target, "huber");
  const double n = static_cast<double>(pred.size());
  LossGrad out{0.0, Tensor2(pred.rows(), pred.cols())};
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    if (std::abs(d) <= delta) {
      out.value += 0.5 * d * d;
      out.grad.data()[i] = d / n;
    } else {
      out.value += delta * (std::abs(d) - 0.5 * delta);
      out.grad.data()[i] = delta * (d > 0 ? 1.0 : -1.0) / n;
    }
  }
  out.value /= n;
  return out;
}

/// log(1 + exp(x)), overflow-safe.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Mean binary cross-entropy on logits against a constant label (0 or 1).
inline LossGrad bce_with_logits(const Tensor2& logits, double label) {
  const double n = static_cast<double>(logits.size());
  LossGrad out{0.0, Tensor2(logits.rows(), logits.cols())};
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    out.value += label * softplus(-z) + (1.0 - label) * softplus(z);
    out.grad.data()[i] = (sigmoid(z) - label) / n;
  }
  out.value /= n;
  return out;
}

/// Mean of log(sigmoid(z)) and its gradient; used to log the minimax value.
inline LossGrad mean_log_sigmoid(const Tensor2& logits) {
  const double n = static_cast<double>(logits.size());
  LossGrad out{0.0, Tensor2(logits.rows(), logits.cols())};
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    out.value -= softplus(-z);
    out.grad.data()[i] = (1.0 - sigmoid(z)) / n;
  }
  out.value /= n;
  return out;
}

}  // namespace cfrl::nn
