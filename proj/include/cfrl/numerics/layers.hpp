#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "cfrl/numerics/tensor.hpp"

namespace cfrl::nn {

// Every layer follows the same protocol:
//   forward(x)   training pass, caches what backward needs
//   predict(x)   inference pass, no side effects
//   backward(dy) accumulates parameter gradients, returns dL/dx
// backward must follow the forward whose activations it differentiates.

class Dense {
 public:
  static constexpr std::string_view kKind = "dense";

  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out, Rng& rng, double gain = 2.0)
      : weight(randn(in, out, rng, std::sqrt(gain / static_cast<double>(in)))),
        bias(Tensor2::Zero(1, out)),
        grad_weight(Tensor2::Zero(in, out)),
        grad_bias(Tensor2::Zero(1, out)) {}

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }

  Tensor2 predict(const Tensor2& x) const {
    check_cols(x, in_dim(), "Dense");
    Tensor2 y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }

  Tensor2 forward(const Tensor2& x) {
    input_ = x;
    return predict(x);
  }

  Tensor2 backward(const Tensor2& dy) {
    check_cols(dy, out_dim(), "Dense::backward");
    grad_weight.noalias() += input_.transpose() * dy;
    grad_bias += dy.colwise().sum();
    return dy * weight.transpose();
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
    out.push_back({prefix + ".bias", &bias, &grad_bias});
  }

  void zero_grad() {
    grad_weight.setZero();
    grad_bias.setZero();
  }

  nlohmann::json to_json() const {
    return {{"kind", kKind}, {"weight", tensor_to_json(weight)}, {"bias", tensor_to_json(bias)}};
  }

  static Dense from_json(const nlohmann::json& j) {
    Dense d;
    d.weight = tensor_from_json(j.at("weight"));
    d.bias = tensor_from_json(j.at("bias"));
    d.grad_weight = Tensor2::Zero(d.weight.rows(), d.weight.cols());
    d.grad_bias = Tensor2::Zero(1, d.bias.cols());
    return d;
  }

  Tensor2 weight, bias, grad_weight, grad_bias;

 private:
  Tensor2 input_;
};

/// Dense layer whose effective weights exp(raw) are strictly positive, so the
/// map is strictly increasing in every input coordinate.
class MonotonicDense {
 public:
  static constexpr std::string_view kKind = "monotonic_dense";

  MonotonicDense() = default;
  MonotonicDense(Eigen::Index in, Eigen::Index out, Rng& rng, double raw_mean = 0.0,
                 double raw_std = 0.1, bool with_bias = true)
      : raw_weight(randn(in, out, rng, raw_std).array() + raw_mean),
        bias(Tensor2::Zero(1, with_bias ? out : 0)),
        grad_raw_weight(Tensor2::Zero(in, out)),
        grad_bias(Tensor2::Zero(1, with_bias ? out : 0)) {}

  Eigen::Index in_dim() const { return raw_weight.rows(); }
  Eigen::Index out_dim() const { return raw_weight.cols(); }
  bool has_bias() const { return bias.cols() > 0; }

  Tensor2 effective_weight() const { return raw_weight.array().exp().matrix(); }

  Tensor2 predict(const Tensor2& x) const {
    check_cols(x, in_dim(), "MonotonicDense");
    Tensor2 y = x * effective_weight();
    if (has_bias()) y.rowwise() += bias.row(0);
    return y;
  }

  Tensor2 forward(const Tensor2& x) {
    input_ = x;
    return predict(x);
  }

  Tensor2 backward(const Tensor2& dy) {
    check_cols(dy, out_dim(), "MonotonicDense::backward");
    const Tensor2 w = effective_weight();
    const Tensor2 grad_w = input_.transpose() * dy;
    grad_raw_weight.array() += grad_w.array() * w.array();
    if (has_bias()) grad_bias += dy.colwise().sum();
    return dy * w.transpose();
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".raw_weight", &raw_weight, &grad_raw_weight});
    if (has_bias()) out.push_back({prefix + ".bias", &bias, &grad_bias});
  }

  void zero_grad() {
    grad_raw_weight.setZero();
    grad_bias.setZero();
  }

  nlohmann::json to_json() const {
    return {{"kind", kKind},
            {"raw_weight", tensor_to_json(raw_weight)},
            {"bias", tensor_to_json(bias)}};
  }

  static MonotonicDense from_json(const nlohmann::json& j) {
    MonotonicDense d;
    d.raw_weight = tensor_from_json(j.at("raw_weight"));
    d.bias = tensor_from_json(j.at("bias"));
    d.grad_raw_weight = Tensor2::Zero(d.raw_weight.rows(), d.raw_weight.cols());
    d.grad_bias = Tensor2::Zero(1, d.bias.cols());
    return d;
  }

  Tensor2 raw_weight, bias, grad_raw_weight, grad_bias;

 private:
  Tensor2 input_;
};

/// Batch normalization over the batch axis with running statistics for inference.
class BatchNorm {
 public:
  static constexpr std::string_view kKind = "batch_norm";

  BatchNorm() = default;
  explicit BatchNorm(Eigen::Index dim, double momentum = 0.9, double eps = 1e-5)
      : gamma(Tensor2::Ones(1, dim)),
        beta(Tensor2::Zero(1, dim)),
        running_mean(Tensor2::Zero(1, dim)),
        running_var(Tensor2::Ones(1, dim)),
        grad_gamma(Tensor2::Zero(1, dim)),
        grad_beta(Tensor2::Zero(1, dim)),
        momentum(momentum),
        eps(eps) {}

  Eigen::Index dim() const { return gamma.cols(); }

  Tensor2 predict(const Tensor2& x) const {
    check_cols(x, dim(), "BatchNorm");
    const Eigen::RowVectorXd inv_std = (running_var.array() + eps).rsqrt().matrix();
    Tensor2 y = ((x.rowwise() - running_mean.row(0)).array().rowwise() *
                 (inv_std.array() * gamma.row(0).array()))
                    .matrix();
    y.rowwise() += beta.row(0);
    return y;
  }

  Tensor2 forward(const Tensor2& x) {
    check_cols(x, dim(), "BatchNorm");
    if (x.rows() < 2) throw PreconditionError("BatchNorm: training batch needs at least 2 rows");
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Tensor2 centered = x.rowwise() - mu;
    const Eigen::RowVectorXd var = centered.array().square().colwise().mean().matrix();
    inv_std_ = (var.array() + eps).rsqrt().matrix();
    xhat_ = (centered.array().rowwise() * inv_std_.array()).matrix();
    running_mean = momentum * running_mean + (1.0 - momentum) * Tensor2(mu);
    running_var = momentum * running_var + (1.0 - momentum) * Tensor2(var);
    Tensor2 y = (xhat_.array().rowwise() * gamma.row(0).array()).matrix();
    y.rowwise() += beta.row(0);
    return y;
  }

  Tensor2 backward(const Tensor2& dy) {
    check_same_shape(dy, xhat_, "BatchNorm::backward");
    const double n = static_cast<double>(dy.rows());
    grad_gamma += (dy.array() * xhat_.array()).colwise().sum().matrix();
    grad_beta += dy.colwise().sum();
    const Tensor2 dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * xhat_.array()).colwise().sum().matrix();
    Tensor2 dx = (n * dxhat.array()).matrix();
    dx.rowwise() -= sum_dxhat;
    dx.array() -= xhat_.array().rowwise() * sum_dxhat_xhat.array();
    dx.array().rowwise() *= (inv_std_.array() / n);
    return dx;
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma, &grad_gamma});
    out.push_back({prefix + ".beta", &beta, &grad_beta});
  }

  void zero_grad() {
    grad_gamma.setZero();
    grad_beta.setZero();
  }

  nlohmann::json to_json() const {
    return {{"kind", kKind},
            {"gamma", tensor_to_json(gamma)},
            {"beta", tensor_to_json(beta)},
            {"running_mean", tensor_to_json(running_mean)},
            {"running_var", tensor_to_json(running_var)},
            {"momentum", momentum},
            {"eps", eps}};
  }

  static BatchNorm from_json(const nlohmann::json& j) {
    BatchNorm b;
    b.gamma = tensor_from_json(j.at("gamma"));
    b.beta = tensor_from_json(j.at("beta"));
    b.running_mean = tensor_from_json(j.at("running_mean"));
    b.running_var = tensor_from_json(j.at("running_var"));
    b.momentum = j.at("momentum").get<double>();
    b.eps = j.at("eps").get<double>();
    b.grad_gamma = Tensor2::Zero(1, b.dim());
    b.grad_beta = Tensor2::Zero(1, b.dim());
    return b;
  }

  Tensor2 gamma, beta, running_mean, running_var, grad_gamma, grad_beta;
  double momentum = 0.9;
  double eps = 1e-5;

 private:
  Tensor2 xhat_;
  Eigen::RowVectorXd inv_std_;
};

enum class ActivationKind { Identity, Relu, LeakyRelu, Tanh, Sigmoid };

inline std::string_view activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::LeakyRelu: return "leaky_relu";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Sigmoid: return "sigmoid";
  }
  return "identity";
}

inline ActivationKind activation_from_name(std::string_view name) {
  for (auto k : {ActivationKind::Identity, ActivationKind::Relu, ActivationKind::LeakyRelu,
                 ActivationKind::Tanh, ActivationKind::Sigmoid}) {
    if (activation_name(k) == name) return k;
  }
  throw PreconditionError("unknown activation: " + std::string(name));
}

class Activation {
 public:
  static constexpr std::string_view kKind = "activation";
  static constexpr double kLeakySlope = 0.2;

  Activation() = default;
  explicit Activation(ActivationKind kind) : kind(kind) {}

  Tensor2 predict(const Tensor2& x) const {
    switch (kind) {
      case ActivationKind::Identity: return x;
      case ActivationKind::Relu: return x.cwiseMax(0.0);
      case ActivationKind::LeakyRelu:
        return x.unaryExpr([](double v) { return v > 0 ? v : kLeakySlope * v; });
      case ActivationKind::Tanh: return x.array().tanh().matrix();
      case ActivationKind::Sigmoid: return x.unaryExpr([](double v) { return sigmoid(v); });
    }
    return x;
  }

  Tensor2 forward(const Tensor2& x) {
    input_ = x;
    output_ = predict(x);
    return output_;
  }

  Tensor2 backward(const Tensor2& dy) {
    check_same_shape(dy, output_, "Activation::backward");
    switch (kind) {
      case ActivationKind::Identity: return dy;
      case ActivationKind::Relu: return (input_.array() > 0.0).select(dy.array(), 0.0).matrix();
      case ActivationKind::LeakyRelu:
        return (input_.array() > 0.0).select(dy.array(), kLeakySlope * dy.array()).matrix();
      case ActivationKind::Tanh: return (dy.array() * (1.0 - output_.array().square())).matrix();
      case ActivationKind::Sigmoid:
        return (dy.array() * output_.array() * (1.0 - output_.array())).matrix();
    }
    return dy;
  }

  void collect(std::vector<ParamRef>&, const std::string&) {}
  void zero_grad() {}

  nlohmann::json to_json() const { return {{"kind", kKind}, {"fn", activation_name(kind)}}; }

  static Activation from_json(const nlohmann::json& j) {
    return Activation(activation_from_name(j.at("fn").get<std::string>()));
  }

  ActivationKind kind = ActivationKind::Identity;

 private:
  Tensor2 input_, output_;
};

}  // namespace cfrl::nn
