#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cfrl/numerics/mlp.hpp"

namespace cfrl::scm_train {

using nn::Tensor2;

/// Per-dimension noise path. Given conditioning c (n x d(m+1)) and noise u (n x d):
///   y_j = sum_k exp(v_jk) tanh(exp(w_jk) u_j + c_{j,k}) + c_{j,m} + exp(skip_j) u_j
/// Every coefficient on u_j is positive, so y_j is strictly increasing in u_j
/// and unbounded in both directions, whatever the conditioning.
class MonotoneNoiseHead {
 public:
  static constexpr std::string_view kKind = "monotone_noise_head";

  MonotoneNoiseHead() = default;
  MonotoneNoiseHead(Eigen::Index dim, Eigen::Index width, Rng& rng)
      : raw_scale(Tensor2::Constant(dim, width, -1.0) + nn::randn(dim, width, rng, 0.1)),
        raw_out(Tensor2::Constant(dim, width, -2.0) + nn::randn(dim, width, rng, 0.1)),
        raw_skip(Tensor2::Zero(1, dim)),
        grad_scale(Tensor2::Zero(dim, width)),
        grad_out(Tensor2::Zero(dim, width)),
        grad_skip(Tensor2::Zero(1, dim)) {}

  Eigen::Index dim() const { return raw_scale.rows(); }
  Eigen::Index width() const { return raw_scale.cols(); }
  Eigen::Index conditioning_dim() const { return dim() * (width() + 1); }

  Tensor2 predict(const Tensor2& c, const Tensor2& u) const { return evaluate(c, u, nullptr); }

  Tensor2 forward(const Tensor2& c, const Tensor2& u) {
    u_ = u;
    return evaluate(c, u, &tanh_);
  }

  /// Accumulates parameter gradients; returns dL/dc. dL/du is not needed by
  /// any trainer since u is always sampled.
  Tensor2 backward(const Tensor2& dy) {
    const Eigen::Index n = dy.rows(), d = dim(), m = width();
    nn::check_cols(dy, d, "MonotoneNoiseHead::backward");
    Tensor2 dc(n, conditioning_dim());
    for (Eigen::Index j = 0; j < d; ++j) {
      const double skip = std::exp(raw_skip(0, j));
      for (Eigen::Index i = 0; i < n; ++i) {
        const double g = dy(i, j);
        grad_skip(0, j) += g * skip * u_(i, j);
        dc(i, j * (m + 1) + m) = g;
      }
      for (Eigen::Index k = 0; k < m; ++k) {
        const double scale = std::exp(raw_scale(j, k));
        const double out = std::exp(raw_out(j, k));
        double gs = 0.0, go = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double h = tanh_(i, j * m + k);
          const double g = dy(i, j);
          go += g * out * h;
          const double dpre = g * out * (1.0 - h * h);
          gs += dpre * scale * u_(i, j);
          dc(i, j * (m + 1) + k) = dpre;
        }
        grad_scale(j, k) += gs;
        grad_out(j, k) += go;
      }
    }
    return dc;
  }

  void collect(std::vector<nn::ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".raw_scale", &raw_scale, &grad_scale});
    out.push_back({prefix + ".raw_out", &raw_out, &grad_out});
    out.push_back({prefix + ".raw_skip", &raw_skip, &grad_skip});
  }

  void zero_grad() {
    grad_scale.setZero();
    grad_out.setZero();
    grad_skip.setZero();
  }

  nlohmann::json to_json() const {
    return {{"kind", kKind},
            {"raw_scale", nn::tensor_to_json(raw_scale)},
            {"raw_out", nn::tensor_to_json(raw_out)},
            {"raw_skip", nn::tensor_to_json(raw_skip)}};
  }

  static MonotoneNoiseHead from_json(const nlohmann::json& j) {
    MonotoneNoiseHead h;
    h.raw_scale = nn::tensor_from_json(j.at("raw_scale"));
    h.raw_out = nn::tensor_from_json(j.at("raw_out"));
    h.raw_skip = nn::tensor_from_json(j.at("raw_skip"));
    if (h.raw_out.rows() != h.raw_scale.rows() || h.raw_out.cols() != h.raw_scale.cols() ||
        h.raw_skip.cols() != h.raw_scale.rows()) {
      throw IoError("monotone noise head: inconsistent parameter shapes");
    }
    h.zero_grad_shapes();
    return h;
  }

  Tensor2 raw_scale, raw_out, raw_skip;
  Tensor2 grad_scale, grad_out, grad_skip;

 private:
  void zero_grad_shapes() {
    grad_scale = Tensor2::Zero(raw_scale.rows(), raw_scale.cols());
    grad_out = Tensor2::Zero(raw_out.rows(), raw_out.cols());
    grad_skip = Tensor2::Zero(1, raw_skip.cols());
  }

  Tensor2 evaluate(const Tensor2& c, const Tensor2& u, Tensor2* tanh_cache) const {
    const Eigen::Index n = u.rows(), d = dim(), m = width();
    nn::check_cols(c, conditioning_dim(), "MonotoneNoiseHead: conditioning");
    nn::check_cols(u, d, "MonotoneNoiseHead: noise");
    if (c.rows() != n) throw DimensionError("MonotoneNoiseHead: conditioning and noise rows differ");
    if (tanh_cache) tanh_cache->resize(n, d * m);
    Tensor2 y(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double skip = std::exp(raw_skip(0, j));
      for (Eigen::Index i = 0; i < n; ++i) y(i, j) = c(i, j * (m + 1) + m) + skip * u(i, j);
      for (Eigen::Index k = 0; k < m; ++k) {
        const double scale = std::exp(raw_scale(j, k));
        const double out = std::exp(raw_out(j, k));
        for (Eigen::Index i = 0; i < n; ++i) {
          const double h = std::tanh(scale * u(i, j) + c(i, j * (m + 1) + k));
          if (tanh_cache) (*tanh_cache)(i, j * m + k) = h;
          y(i, j) += out * h;
        }
      }
    }
    return y;
  }

  Tensor2 u_, tanh_;
};

/// G(x, u): a trunk MLP maps the conditioning inputs x = (s, a, [theta]) to the
/// per-dimension offsets consumed by the monotone noise head.
class Generator {
 public:
  static constexpr std::string_view kKind = "generator";

  Generator() = default;
  Generator(Eigen::Index input_dim, Eigen::Index state_dim, const std::vector<Eigen::Index>& hidden,
            Eigen::Index monotone_width, bool batch_norm, Rng& rng)
      : head(state_dim, monotone_width, rng),
        trunk(nn::MlpSpec{input_dim, hidden, head.conditioning_dim(), nn::ActivationKind::Relu,
                          nn::ActivationKind::Identity, batch_norm},
              rng) {}

  Eigen::Index input_dim() const { return trunk.input_dim(); }
  Eigen::Index state_dim() const { return head.dim(); }

  Tensor2 condition(const Tensor2& x) const { return trunk.predict(x); }
  Tensor2 predict_given(const Tensor2& c, const Tensor2& u) const { return head.predict(c, u); }
  Tensor2 predict(const Tensor2& x, const Tensor2& u) const { return head.predict(trunk.predict(x), u); }

  Tensor2 forward(const Tensor2& x, const Tensor2& u) { return head.forward(trunk.forward(x), u); }

  /// Returns dL/dx.
  Tensor2 backward(const Tensor2& dy) { return trunk.backward(head.backward(dy)); }

  void collect(std::vector<nn::ParamRef>& out, const std::string& prefix) {
    trunk.collect(out, prefix + ".trunk");
    head.collect(out, prefix + ".head");
  }

  void zero_grad() {
    trunk.zero_grad();
    head.zero_grad();
  }

  nlohmann::json to_json() const { return {{"kind", kKind}, {"trunk", trunk.to_json()}, {"head", head.to_json()}}; }

  static Generator from_json(const nlohmann::json& j) {
    Generator g;
    g.trunk = nn::Mlp::from_json(j.at("trunk"));
    g.head = MonotoneNoiseHead::from_json(j.at("head"));
    if (g.trunk.output_dim() != g.head.conditioning_dim()) throw IoError("generator: trunk/head mismatch");
    return g;
  }

  MonotoneNoiseHead head;
  nn::Mlp trunk;
};

/// Fraction of randomized paired-noise probes for which every output
/// coordinate strictly increases with its own noise.
inline double monotonicity_pass_rate(const Generator& g, const Tensor2& x, int probes, Rng& rng) {
  require(x.rows() > 0, "monotonicity probe: needs conditioning rows");
  const Eigen::Index d = g.state_dim();
  Tensor2 xs(probes, x.cols()), lo(probes, d), hi(probes, d);
  for (int p = 0; p < probes; ++p) {
    xs.row(p) = x.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(x.rows()))));
    for (Eigen::Index j = 0; j < d; ++j) {
      double a = 3.0 * standard_normal(rng), b = 3.0 * standard_normal(rng);
      while (a == b) b = 3.0 * standard_normal(rng);
      lo(p, j) = std::min(a, b);
      hi(p, j) = std::max(a, b);
    }
  }
  const Tensor2 c = g.condition(xs);
  const Tensor2 y_lo = g.predict_given(c, lo), y_hi = g.predict_given(c, hi);
  int pass = 0;
  for (int p = 0; p < probes; ++p) pass += (y_hi.row(p).array() > y_lo.row(p).array()).all() ? 1 : 0;
  return static_cast<double>(pass) / probes;
}

}  // namespace cfrl::scm_train
