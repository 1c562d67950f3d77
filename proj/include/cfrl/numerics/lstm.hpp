#pragma once

#include <span>
#include <string>
#include <vector>

#include "cfrl/numerics/layers.hpp"

namespace cfrl::nn {

/// Single-layer LSTM run over a whole sequence; the final hidden state is the
/// sequence embedding. Gate layout in the stacked weights is [input, forget, cell, output].
class LstmEncoder {
 public:
  static constexpr std::string_view kKind = "lstm";

  LstmEncoder() = default;
  LstmEncoder(Eigen::Index input, Eigen::Index hidden, Rng& rng)
      : w_input(randn(input, 4 * hidden, rng, 1.0 / std::sqrt(static_cast<double>(input)))),
        w_hidden(randn(hidden, 4 * hidden, rng, 1.0 / std::sqrt(static_cast<double>(hidden)))),
        bias(Tensor2::Zero(1, 4 * hidden)),
        grad_w_input(Tensor2::Zero(input, 4 * hidden)),
        grad_w_hidden(Tensor2::Zero(hidden, 4 * hidden)),
        grad_bias(Tensor2::Zero(1, 4 * hidden)) {
    bias.middleCols(hidden, hidden).setOnes();  // forget gate starts open
  }

  Eigen::Index input_dim() const { return w_input.rows(); }
  Eigen::Index hidden_dim() const { return w_hidden.rows(); }

  /// One cell application from explicit (h, c); returns (h', c').
  std::pair<Tensor2, Tensor2> cell(const Tensor2& x, const Tensor2& h, const Tensor2& c) const {
    Step s = step(x, h, c);
    return {s.h, s.c};
  }

  Tensor2 predict(std::span<const Tensor2> sequence) const {
    check_sequence(sequence);
    const Eigen::Index batch = sequence.front().rows();
    Tensor2 h = Tensor2::Zero(batch, hidden_dim());
    Tensor2 c = Tensor2::Zero(batch, hidden_dim());
    for (const auto& x : sequence) {
      Step s = step(x, h, c);
      h = std::move(s.h);
      c = std::move(s.c);
    }
    return h;
  }

  Tensor2 forward(std::span<const Tensor2> sequence) {
    check_sequence(sequence);
    const Eigen::Index batch = sequence.front().rows();
    steps_.clear();
    Tensor2 h = Tensor2::Zero(batch, hidden_dim());
    Tensor2 c = Tensor2::Zero(batch, hidden_dim());
    for (const auto& x : sequence) {
      steps_.push_back(step(x, h, c));
      h = steps_.back().h;
      c = steps_.back().c;
    }
    return h;
  }

  /// Backpropagation through time from the gradient on the final hidden state.
  std::vector<Tensor2> backward(const Tensor2& d_final) {
    if (steps_.empty()) throw PreconditionError("LstmEncoder::backward without forward");
    const Eigen::Index H = hidden_dim();
    std::vector<Tensor2> dx(steps_.size());
    Tensor2 dh = d_final;
    Tensor2 dc = Tensor2::Zero(dh.rows(), H);
    for (std::size_t k = steps_.size(); k-- > 0;) {
      const Step& s = steps_[k];
      const Tensor2 tc = s.c.array().tanh().matrix();
      Tensor2 dz(dh.rows(), 4 * H);
      const auto i = s.gates.middleCols(0, H).array();
      const auto f = s.gates.middleCols(H, H).array();
      const auto g = s.gates.middleCols(2 * H, H).array();
      const auto o = s.gates.middleCols(3 * H, H).array();
      const Tensor2 dct = (dc.array() + dh.array() * o * (1.0 - tc.array().square())).matrix();
      dz.middleCols(0, H) = (dct.array() * g * i * (1.0 - i)).matrix();
      dz.middleCols(H, H) = (dct.array() * s.c_prev.array() * f * (1.0 - f)).matrix();
      dz.middleCols(2 * H, H) = (dct.array() * i * (1.0 - g.square())).matrix();
      dz.middleCols(3 * H, H) = (dh.array() * tc.array() * o * (1.0 - o)).matrix();
      grad_w_input.noalias() += s.x.transpose() * dz;
      grad_w_hidden.noalias() += s.h_prev.transpose() * dz;
      grad_bias += dz.colwise().sum();
      dx[k] = dz * w_input.transpose();
      dh = dz * w_hidden.transpose();
      dc = (dct.array() * f).matrix();
    }
    return dx;
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".w_input", &w_input, &grad_w_input});
    out.push_back({prefix + ".w_hidden", &w_hidden, &grad_w_hidden});
    out.push_back({prefix + ".bias", &bias, &grad_bias});
  }

  void zero_grad() {
    grad_w_input.setZero();
    grad_w_hidden.setZero();
    grad_bias.setZero();
  }

  nlohmann::json to_json() const {
    return {{"kind", kKind},
            {"w_input", tensor_to_json(w_input)},
            {"w_hidden", tensor_to_json(w_hidden)},
            {"bias", tensor_to_json(bias)}};
  }

  static LstmEncoder from_json(const nlohmann::json& j) {
    LstmEncoder l;
    l.w_input = tensor_from_json(j.at("w_input"));
    l.w_hidden = tensor_from_json(j.at("w_hidden"));
    l.bias = tensor_from_json(j.at("bias"));
    l.grad_w_input = Tensor2::Zero(l.w_input.rows(), l.w_input.cols());
    l.grad_w_hidden = Tensor2::Zero(l.w_hidden.rows(), l.w_hidden.cols());
    l.grad_bias = Tensor2::Zero(1, l.bias.cols());
    return l;
  }

  Tensor2 w_input, w_hidden, bias, grad_w_input, grad_w_hidden, grad_bias;

 private:
  struct Step {
    Tensor2 x, h_prev, c_prev, gates, c, h;
  };

  void check_sequence(std::span<const Tensor2> sequence) const {
    if (sequence.empty()) throw PreconditionError("LSTM: empty sequence");
    for (const auto& x : sequence) {
      check_cols(x, input_dim(), "LSTM input");
      if (x.rows() != sequence.front().rows()) throw DimensionError("LSTM: ragged batch");
    }
  }

  Step step(const Tensor2& x, const Tensor2& h, const Tensor2& c) const {
    const Eigen::Index H = hidden_dim();
    Step s{x, h, c, {}, {}, {}};
    Tensor2 z = x * w_input + h * w_hidden;
    z.rowwise() += bias.row(0);
    s.gates.resize(z.rows(), z.cols());
    s.gates.middleCols(0, H) = z.middleCols(0, H).unaryExpr([](double v) { return sigmoid(v); });
    s.gates.middleCols(H, H) = z.middleCols(H, H).unaryExpr([](double v) { return sigmoid(v); });
    s.gates.middleCols(2 * H, H) = z.middleCols(2 * H, H).array().tanh().matrix();
    s.gates.middleCols(3 * H, H) = z.middleCols(3 * H, H).unaryExpr([](double v) { return sigmoid(v); });
    s.c = (s.gates.middleCols(H, H).array() * c.array() +
           s.gates.middleCols(0, H).array() * s.gates.middleCols(2 * H, H).array())
              .matrix();
    s.h = (s.gates.middleCols(3 * H, H).array() * s.c.array().tanh()).matrix();
    return s;
  }

  std::vector<Step> steps_;
};

}  // namespace cfrl::nn
