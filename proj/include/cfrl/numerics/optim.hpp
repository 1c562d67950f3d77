#pragma once

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfrl/numerics/tensor.hpp"

namespace cfrl::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
};

inline void check_finite_grads(std::span<const ParamRef> params) {
  for (const auto& p : params) {
    if (!p.grad->allFinite()) throw NumericalError("non-finite gradient in parameter " + p.name);
  }
}

inline double global_grad_norm(std::span<const ParamRef> params) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad->squaredNorm();
  return std::sqrt(sq);
}

/// Adam with bias correction. Moment state is keyed by parameter name, so the
/// optimizer survives the owning model being moved or copied.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  void step(std::span<const ParamRef> params) {
    check_finite_grads(params);
    double scale = 1.0;
    if (config_.clip_norm > 0.0) {
      const double norm = global_grad_norm(params);
      if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
    }
    for (const auto& p : params) {
      auto [it, inserted] = state_.try_emplace(p.name);
      Moments& m = it->second;
      if (inserted) {
        m.first = Tensor2::Zero(p.value->rows(), p.value->cols());
        m.second = Tensor2::Zero(p.value->rows(), p.value->cols());
      }
      check_same_shape(m.first, *p.value, "Adam state");
      ++m.t;
      const auto g = p.grad->array() * scale;
      m.first.array() = config_.beta1 * m.first.array() + (1.0 - config_.beta1) * g;
      m.second.array() = config_.beta2 * m.second.array() + (1.0 - config_.beta2) * g.square();
      const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(m.t));
      const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(m.t));
      p.value->array() -=
          config_.lr * (m.first.array() / c1) / ((m.second.array() / c2).sqrt() + config_.eps);
    }
  }

 private:
  struct Moments {
    Tensor2 first, second;
    long t = 0;
  };
  AdamConfig config_;
  std::unordered_map<std::string, Moments> state_;
};

class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}

  void step(std::span<const ParamRef> params) const {
    check_finite_grads(params);
    for (const auto& p : params) *p.value -= lr_ * *p.grad;
  }

 private:
  double lr_;
};

inline void zero_grads(std::span<const ParamRef> params) {
  for (const auto& p : params) p.grad->setZero();
}

}  // namespace cfrl::nn
