#pragma once

#include <cmath>

#include <boost/math/special_functions/erf.hpp>

#include "cfrl/scm/model.hpp"

namespace cfrl::scm {

/// Closed-form ground-truth SCMs with a per-dimension noise path, used as
/// oracles. Coordinate j reads only s(:, j), the scalar action and u(:, j).
template <class Derived>
struct ElementwiseScm {
  Eigen::Index dim = 1;

  Eigen::Index state_dim() const { return dim; }

  Tensor2 predict(const Tensor2& s, const Tensor2& a, const Tensor2& /*theta*/, const Tensor2& u) const {
    nn::check_cols(s, dim, "synthetic scm: s");
    nn::check_cols(u, dim, "synthetic scm: u");
    nn::check_cols(a, 1, "synthetic scm: a");
    Tensor2 out(s.rows(), dim);
    const auto& self = static_cast<const Derived&>(*this);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) out(i, j) = self.f(s(i, j), a(i, 0), u(i, j), j);
    }
    return out;
  }
};

/// s' = s + c_j a + sigma u.
struct AdditiveScm : ElementwiseScm<AdditiveScm> {
  double sigma = 1.0;

  double f(double s, double a, double u, Eigen::Index j) const {
    return s + (1.0 + 0.5 * static_cast<double>(j)) * a + sigma * u;
  }
};

/// s' = (1 + s^2 + a) exp(sigma u); increasing in u for a > -1.
struct MultiplicativeScm : ElementwiseScm<MultiplicativeScm> {
  double sigma = 0.5;

  double f(double s, double a, double u, Eigen::Index /*j*/) const {
    return (1.0 + s * s + a) * std::exp(sigma * u);
  }
};

/// s' = sin(s) + a^2 + sigma (1 + a)(u + 0.3 u^3): action and noise interact.
struct NonlinearScm : ElementwiseScm<NonlinearScm> {
  double sigma = 0.5;

  double f(double s, double a, double u, Eigen::Index /*j*/) const {
    return std::sin(s) + a * a + sigma * (1.0 + a) * (u + 0.3 * u * u * u);
  }
};

/// Standard normal quantile of the logistic CDF at v, accurate in both tails.
inline double logistic_to_normal(double v) {
  // Phi^{-1}(L(v)) = -sqrt(2) erfc^{-1}(2 L(v)); use the smaller tail for precision.
  const double lower = v <= 0 ? 1.0 / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
  const double z = -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * lower);
  return v <= 0 ? z : -z;
}

/// Observationally equivalent twin of `Base`: logistic noise v and a
/// decreasing map v -> u = -Phi^{-1}(L(v)), so u is again standard normal.
template <class Base>
struct LogisticReparam {
  Base base;

  Eigen::Index state_dim() const { return base.state_dim(); }

  Tensor2 predict(const Tensor2& s, const Tensor2& a, const Tensor2& theta, const Tensor2& v) const {
    Tensor2 u = v;
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = -logistic_to_normal(v.data()[i]);
    return base.predict(s, a, theta, u);
  }

  Tensor2 sample_noise(Eigen::Index n, Rng& rng) const {
    Tensor2 v(n, state_dim());
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double p = unif(rng);
      while (p <= 0.0) p = unif(rng);
      v.data()[i] = std::log(p / (1.0 - p));
    }
    return v;
  }
};

}  // namespace cfrl::scm
