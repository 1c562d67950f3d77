#pragma once

#include <string>
#include <variant>
#include <vector>

#include "cfrl/numerics/layers.hpp"

namespace cfrl::nn {

using Layer = std::variant<Dense, MonotonicDense, BatchNorm, Activation>;

/// Shape of a plain feed-forward stack: each hidden block is
/// Dense -> [BatchNorm] -> activation; the output block is Dense -> output activation.
struct MlpSpec {
  Eigen::Index input = 0;
  std::vector<Eigen::Index> hidden;
  Eigen::Index output = 0;
  ActivationKind hidden_activation = ActivationKind::Relu;
  ActivationKind output_activation = ActivationKind::Identity;
  bool batch_norm = false;
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(const MlpSpec& spec, Rng& rng) {
    if (spec.input <= 0 || spec.output <= 0) throw PreconditionError("Mlp: dimensions must be positive");
    Eigen::Index width = spec.input;
    for (Eigen::Index h : spec.hidden) {
      if (h <= 0) throw PreconditionError("Mlp: hidden widths must be positive");
      layers_.emplace_back(Dense(width, h, rng));
      if (spec.batch_norm) layers_.emplace_back(BatchNorm(h));
      layers_.emplace_back(Activation(spec.hidden_activation));
      width = h;
    }
    layers_.emplace_back(Dense(width, spec.output, rng, 1.0));
    if (spec.output_activation != ActivationKind::Identity) {
      layers_.emplace_back(Activation(spec.output_activation));
    }
  }

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Tensor2 forward(const Tensor2& x) {
    Tensor2 h = x;
    for (auto& layer : layers_) h = std::visit([&](auto& l) { return l.forward(h); }, layer);
    return h;
  }

  Tensor2 predict(const Tensor2& x) const {
    Tensor2 h = x;
    for (const auto& layer : layers_) h = std::visit([&](const auto& l) { return l.predict(h); }, layer);
    return h;
  }

  Tensor2 backward(const Tensor2& dy) {
    Tensor2 g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      g = std::visit([&](auto& l) { return l.backward(g); }, *it);
    }
    return g;
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::visit([&](auto& l) { l.collect(out, prefix + "." + std::to_string(i)); }, layers_[i]);
    }
  }

  std::vector<ParamRef> params(const std::string& prefix) {
    std::vector<ParamRef> out;
    collect(out, prefix);
    return out;
  }

  void zero_grad() {
    for (auto& layer : layers_) std::visit([](auto& l) { l.zero_grad(); }, layer);
  }

  Eigen::Index input_dim() const {
    for (const auto& layer : layers_) {
      if (auto* d = std::get_if<Dense>(&layer)) return d->in_dim();
      if (auto* m = std::get_if<MonotonicDense>(&layer)) return m->in_dim();
    }
    return 0;
  }

  Eigen::Index output_dim() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (auto* d = std::get_if<Dense>(&*it)) return d->out_dim();
      if (auto* m = std::get_if<MonotonicDense>(&*it)) return m->out_dim();
    }
    return 0;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& layer : layers_) arr.push_back(std::visit([](const auto& l) { return l.to_json(); }, layer));
    return {{"layers", arr}};
  }

  static Mlp from_json(const nlohmann::json& j) {
    std::vector<Layer> layers;
    for (const auto& lj : j.at("layers")) {
      const auto kind = lj.at("kind").get<std::string>();
      if (kind == Dense::kKind) layers.emplace_back(Dense::from_json(lj));
      else if (kind == MonotonicDense::kKind) layers.emplace_back(MonotonicDense::from_json(lj));
      else if (kind == BatchNorm::kKind) layers.emplace_back(BatchNorm::from_json(lj));
      else if (kind == Activation::kKind) layers.emplace_back(Activation::from_json(lj));
      else throw IoError("unknown layer kind in checkpoint: " + kind);
    }
    return Mlp(std::move(layers));
  }

 private:
  std::vector<Layer> layers_;
};

}  // namespace cfrl::nn
