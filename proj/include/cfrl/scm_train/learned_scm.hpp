#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfrl/env/dataset.hpp"
#include "cfrl/numerics/checkpoint.hpp"
#include "cfrl/numerics/lstm.hpp"
#include "cfrl/scm_train/generator.hpp"

namespace cfrl::scm_train {

/// LSTM over a tau-step window of standardized (s, a) followed by a linear
/// read-out: the subject factor theta.
class ThetaNet {
 public:
  ThetaNet() = default;
  ThetaNet(Eigen::Index step_dim, Eigen::Index hidden, Eigen::Index theta_dim, int tau, Rng& rng)
      : lstm(step_dim, hidden, rng), head(hidden, theta_dim, rng, 1.0), tau(tau) {}

  Eigen::Index theta_dim() const { return head.out_dim(); }

  Tensor2 predict(std::span<const Tensor2> seq) const { return head.predict(lstm.predict(seq)); }
  Tensor2 forward(std::span<const Tensor2> seq) { return head.forward(lstm.forward(seq)); }
  void backward(const Tensor2& d_theta) { lstm.backward(head.backward(d_theta)); }

  void collect(std::vector<nn::ParamRef>& out, const std::string& prefix) {
    lstm.collect(out, prefix + ".lstm");
    head.collect(out, prefix + ".head");
  }

  void zero_grad() {
    lstm.zero_grad();
    head.zero_grad();
  }

  nlohmann::json to_json() const { return {{"lstm", lstm.to_json()}, {"head", head.to_json()}, {"tau", tau}}; }

  static ThetaNet from_json(const nlohmann::json& j) {
    ThetaNet t;
    t.lstm = nn::LstmEncoder::from_json(j.at("lstm"));
    t.head = nn::Dense::from_json(j.at("head"));
    t.tau = j.at("tau").get<int>();
    return t;
  }

  nn::LstmEncoder lstm;
  nn::Dense head;
  int tau = 5;
};

/// A trained structural model in raw state units:
///   s' = s + delta_std^{-1}( G([z(s), a, theta], u) ),  u ~ N(0, I)
/// plus the conditional encoder (s', s, a) -> (s_hat, a_hat, u_hat) and, for
/// the personalized variant, the window-to-theta network.
class LearnedScm {
 public:
  static constexpr const char* kKind = "scm";

  nn::Standardizer state_std;
  nn::Standardizer delta_std;
  Generator generator;
  nn::Mlp encoder;
  std::optional<ThetaNet> theta_net;

  Eigen::Index state_dim() const { return generator.state_dim(); }
  Eigen::Index theta_dim() const { return theta_net ? theta_net->theta_dim() : 0; }
  bool uses_theta() const { return theta_net.has_value(); }
  int tau() const { return theta_net ? theta_net->tau : 0; }

  Tensor2 generator_input(const Tensor2& s, const Tensor2& a, const Tensor2& theta) const {
    nn::check_cols(a, 1, "LearnedScm: action");
    if (theta.cols() != theta_dim()) {
      throw DimensionError("LearnedScm: theta has " + std::to_string(theta.cols()) + " columns, model expects " +
                           std::to_string(theta_dim()));
    }
    const Tensor2 sz = state_std.apply(s);
    return nn::hcat({&sz, &a, &theta});
  }

  struct Conditioned {
    Tensor2 s;
    Tensor2 c;
  };

  Conditioned condition(const Tensor2& s, const Tensor2& a, const Tensor2& theta) const {
    return {s, generator.condition(generator_input(s, a, theta))};
  }

  Tensor2 predict_given(const Conditioned& cond, const Tensor2& u) const {
    return cond.s + delta_std.invert(generator.predict_given(cond.c, u));
  }

  Tensor2 predict(const Tensor2& s, const Tensor2& a, const Tensor2& theta, const Tensor2& u) const {
    return predict_given(condition(s, a, theta), u);
  }

  Tensor2 encoder_input(const Tensor2& s, const Tensor2& a, const Tensor2& s_next) const {
    const Tensor2 nz = state_std.apply(s_next), sz = state_std.apply(s);
    return nn::hcat({&nz, &sz, &a});
  }

  /// Full encoder output: [s_hat (standardized), a_hat, u_hat].
  Tensor2 encode_all(const Tensor2& s, const Tensor2& a, const Tensor2& s_next) const {
    return encoder.predict(encoder_input(s, a, s_next));
  }

  Tensor2 encode(const Tensor2& s, const Tensor2& a, const Tensor2& /*theta*/, const Tensor2& s_next) const {
    return encode_all(s, a, s_next).rightCols(state_dim());
  }

  /// LSTM inputs for a batch of windows: one n x (d + 1) block per time step.
  std::vector<Tensor2> window_sequence(std::span<const env::Window> windows) const {
    require(uses_theta(), "window_sequence: model has no theta network");
    const auto n = static_cast<Eigen::Index>(windows.size());
    const Eigen::Index d = state_dim();
    std::vector<Tensor2> seq(static_cast<std::size_t>(tau()), Tensor2(n, d + 1));
    Tensor2 raw(n, d);
    for (int k = 0; k < tau(); ++k) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& w = windows[static_cast<std::size_t>(i)];
        if (static_cast<int>(w.steps.size()) != tau()) {
          throw PreconditionError("estimate_theta: window length " + std::to_string(w.steps.size()) +
                                  " differs from tau = " + std::to_string(tau()));
        }
        const auto& tr = w.steps[static_cast<std::size_t>(k)];
        if (static_cast<Eigen::Index>(tr.s.size()) != d) throw DimensionError("window state dimension mismatch");
        for (Eigen::Index j = 0; j < d; ++j) raw(i, j) = tr.s[static_cast<std::size_t>(j)];
        seq[static_cast<std::size_t>(k)](i, d) = tr.a;
      }
      seq[static_cast<std::size_t>(k)].leftCols(d) = state_std.apply(raw);
    }
    return seq;
  }

  Tensor2 estimate_theta(std::span<const env::Window> windows) const {
    if (windows.empty()) return Tensor2(0, theta_dim());
    const auto seq = window_sequence(windows);
    return theta_net->predict(seq);
  }

  nn::Vector estimate_theta(const env::Window& w) const {
    return estimate_theta(std::span<const env::Window>(&w, 1)).row(0).transpose();
  }

  nlohmann::json to_json() const {
    nlohmann::json body{{"state_std", state_std.to_json()},
                        {"delta_std", delta_std.to_json()},
                        {"generator", generator.to_json()},
                        {"encoder", encoder.to_json()}};
    if (theta_net) body["theta_net"] = theta_net->to_json();
    nlohmann::json arch{{"state_dim", state_dim()},
                        {"theta_dim", theta_dim()},
                        {"tau", tau()},
                        {"monotone_width", generator.head.width()}};
    return nn::make_checkpoint(kKind, arch, body);
  }

  static LearnedScm from_json(const nlohmann::json& j) {
    const nlohmann::json body = nn::open_checkpoint(j, kKind).at("body");
    LearnedScm m;
    m.state_std = nn::Standardizer::from_json(body.at("state_std"));
    m.delta_std = nn::Standardizer::from_json(body.at("delta_std"));
    m.generator = Generator::from_json(body.at("generator"));
    m.encoder = nn::Mlp::from_json(body.at("encoder"));
    if (body.contains("theta_net")) m.theta_net = ThetaNet::from_json(body.at("theta_net"));
    if (m.state_std.dim() != m.state_dim() || m.delta_std.dim() != m.state_dim()) {
      throw IoError("scm checkpoint: standardizer dimension mismatch");
    }
    return m;
  }
};

}  // namespace cfrl::scm_train
