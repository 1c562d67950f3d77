#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cfrl/scm/model.hpp"

namespace cfrl::scm {

enum class AbductionMethod { Bisection, Encoder };

inline std::string to_string(AbductionMethod m) { return m == AbductionMethod::Bisection ? "bisection" : "encoder"; }

inline AbductionMethod abduction_method_from_string(const std::string& s) {
  if (s == "bisection") return AbductionMethod::Bisection;
  if (s == "encoder") return AbductionMethod::Encoder;
  throw PreconditionError("unknown abduction method: " + s);
}

/// Bisection always runs to the floating-point resolution of u; `tolerance`
/// only decides whether a coordinate that is flat in u still matches.
struct BisectionOptions {
  double tolerance = 1e-8;
  int max_iterations = 200;
  double initial_bracket = 8.0;  // prior standard deviations
  int max_expansions = 12;  // doublings of the bracket
};

struct AbductionResult {
  Tensor2 u;
  Tensor2 residual;  // f(s, a, theta, u) - s'
  std::vector<char> ok;  // per row
  std::size_t n_failed = 0;

  double max_abs_residual() const {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < residual.rows(); ++i) {
      if (ok[static_cast<std::size_t>(i)]) worst = std::max(worst, residual.row(i).cwiseAbs().maxCoeff());
    }
    return worst;
  }
};

namespace detail {

template <StructuralModel M>
auto noise_path(const M& model, const EvidenceBatch& ev) {
  if constexpr (Conditionable<M>) {
    auto cond = model.condition(ev.s, ev.a, theta_or_empty(ev.theta, ev.size()));
    return [&model, cond = std::move(cond)](const Tensor2& u) -> Tensor2 { return model.predict_given(cond, u); };
  } else {
    return [&model, &ev](const Tensor2& u) -> Tensor2 {
      return model.predict(ev.s, ev.a, theta_or_empty(ev.theta, ev.size()), u);
    };
  }
}

}  // namespace detail

/// Per-dimension bisection on the monotone noise path. Every entry is solved
/// simultaneously since coordinate j only sees u(:, j). Rows whose evidence
/// cannot be bracketed are flagged rather than thrown.
template <StructuralModel M>
AbductionResult abduct_bisection(const M& model, const EvidenceBatch& ev, const BisectionOptions& opt = {}) {
  const Eigen::Index d = static_cast<Eigen::Index>(model.state_dim());
  ev.validate(d);
  const Eigen::Index n = ev.size();
  const auto f = detail::noise_path(model, ev);
  const Tensor2& target = ev.s_next;

  Tensor2 lo = Tensor2::Constant(n, d, -opt.initial_bracket);
  Tensor2 hi = Tensor2::Constant(n, d, opt.initial_bracket);
  Tensor2 f_lo = f(lo), f_hi = f(hi);

  // +1 where f increases in u, -1 where it decreases, 0 where flat (or broken).
  Tensor2 dir(n, d);
  for (Eigen::Index i = 0; i < dir.size(); ++i) {
    const double diff = f_hi.data()[i] - f_lo.data()[i];
    dir.data()[i] = std::isfinite(diff) ? (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) : 0.0;
  }
  auto g = [&](const Tensor2& fu, Eigen::Index i) { return dir.data()[i] * (fu.data()[i] - target.data()[i]); };

  for (int expand = 0; expand < opt.max_expansions; ++expand) {
    bool changed = false;
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (dir.data()[i] == 0.0) continue;
      if (g(f_lo, i) > 0) {
        hi.data()[i] = lo.data()[i];
        lo.data()[i] *= 2.0;
        changed = true;
      } else if (g(f_hi, i) < 0) {
        lo.data()[i] = hi.data()[i];
        hi.data()[i] *= 2.0;
        changed = true;
      }
    }
    if (!changed) break;
    f_lo = f(lo);
    f_hi = f(hi);
  }

  std::vector<char> live(static_cast<std::size_t>(n * d), 1);
  AbductionResult out;
  out.ok.assign(static_cast<std::size_t>(n), 1);
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    const auto row = static_cast<std::size_t>(i / d);
    if (dir.data()[i] == 0.0) {
      // Flat coordinate: any u explains the evidence if it matches at all.
      live[static_cast<std::size_t>(i)] = 0;
      const double r = f_lo.data()[i] - target.data()[i];
      if (std::isfinite(r) && std::abs(r) <= opt.tolerance) {
        lo.data()[i] = hi.data()[i] = 0.0;
      } else {
        out.ok[row] = 0;
      }
    } else if (!(g(f_lo, i) <= 0 && g(f_hi, i) >= 0) || !std::isfinite(f_lo.data()[i]) ||
               !std::isfinite(f_hi.data()[i])) {
      live[static_cast<std::size_t>(i)] = 0;
      out.ok[row] = 0;
    }
  }

  Tensor2 mid(n, d);
  for (int it = 0; it < opt.max_iterations; ++it) {
    bool any = false;
    for (Eigen::Index i = 0; i < mid.size(); ++i) mid.data()[i] = 0.5 * (lo.data()[i] + hi.data()[i]);
    const Tensor2 f_mid = f(mid);
    for (Eigen::Index i = 0; i < mid.size(); ++i) {
      if (!live[static_cast<std::size_t>(i)]) continue;
      const double gm = g(f_mid, i);
      if (gm == 0.0 || mid.data()[i] == lo.data()[i] || mid.data()[i] == hi.data()[i]) {
        lo.data()[i] = hi.data()[i] = mid.data()[i];
        live[static_cast<std::size_t>(i)] = 0;
        continue;
      }
      (gm < 0 ? lo : hi).data()[i] = mid.data()[i];
      any = true;
    }
    if (!any) break;
  }

  out.u.resize(n, d);
  for (Eigen::Index i = 0; i < mid.size(); ++i) out.u.data()[i] = 0.5 * (lo.data()[i] + hi.data()[i]);
  out.residual = f(out.u) - target;
  for (Eigen::Index r = 0; r < n; ++r) {
    if (!out.residual.row(r).allFinite()) out.ok[static_cast<std::size_t>(r)] = 0;
    if (!out.ok[static_cast<std::size_t>(r)]) {
      out.u.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
      ++out.n_failed;
    }
  }
  return out;
}

/// Amortized abduction through the model's encoder; no support check beyond finiteness.
template <HasEncoder M>
AbductionResult abduct_encoder(const M& model, const EvidenceBatch& ev) {
  ev.validate(static_cast<Eigen::Index>(model.state_dim()));
  const Tensor2 theta = theta_or_empty(ev.theta, ev.size());
  AbductionResult out;
  out.u = model.encode(ev.s, ev.a, theta, ev.s_next);
  out.residual = model.predict(ev.s, ev.a, theta, out.u) - ev.s_next;
  out.ok.assign(static_cast<std::size_t>(ev.size()), 1);
  for (Eigen::Index r = 0; r < ev.size(); ++r) {
    if (!out.u.row(r).allFinite() || !out.residual.row(r).allFinite()) {
      out.ok[static_cast<std::size_t>(r)] = 0;
      ++out.n_failed;
    }
  }
  return out;
}

template <StructuralModel M>
AbductionResult abduct(const M& model, const EvidenceBatch& ev, AbductionMethod method = AbductionMethod::Bisection,
                       const BisectionOptions& opt = {}) {
  if (method == AbductionMethod::Encoder) {
    if constexpr (HasEncoder<M>) {
      return abduct_encoder(model, ev);
    } else {
      throw PreconditionError("model has no encoder; use bisection abduction");
    }
  }
  return abduct_bisection(model, ev, opt);
}

/// Single-evidence abduction; throws SupportError when no noise value explains it.
template <StructuralModel M>
Vector abduct(const M& model, const Evidence& e, AbductionMethod method = AbductionMethod::Bisection,
              const BisectionOptions& opt = {}) {
  const auto res = abduct(model, EvidenceBatch::single(e), method, opt);
  if (res.n_failed) throw SupportError("evidence outside model support");
  return res.u.row(0).transpose();
}

struct CounterfactualBatch {
  Tensor2 s_cf;
  AbductionResult abduction;
};

/// Abduction, action and prediction for a batch: same noise, replaced action.
template <StructuralModel M>
CounterfactualBatch counterfactual(const M& model, const EvidenceBatch& ev, const Tensor2& cf_action,
                                   AbductionMethod method = AbductionMethod::Bisection,
                                   const BisectionOptions& opt = {}) {
  nn::check_cols(cf_action, 1, "counterfactual: cf_action");
  if (cf_action.rows() != ev.size()) throw DimensionError("counterfactual: one cf action per evidence row");
  CounterfactualBatch out;
  out.abduction = abduct(model, ev, method, opt);
  Tensor2 u = out.abduction.u;
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    if (!out.abduction.ok[static_cast<std::size_t>(r)]) u.row(r).setZero();
  }
  out.s_cf = model.predict(ev.s, cf_action, theta_or_empty(ev.theta, ev.size()), u);
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    if (!out.abduction.ok[static_cast<std::size_t>(r)]) {
      out.s_cf.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

template <StructuralModel M>
Vector counterfactual(const M& model, const CounterfactualQuery& q,
                      AbductionMethod method = AbductionMethod::Bisection, const BisectionOptions& opt = {}) {
  const auto batch = EvidenceBatch::single(q.evidence);
  const auto res = counterfactual(model, batch, Tensor2::Constant(1, 1, q.cf_action), method, opt);
  if (res.abduction.n_failed) throw SupportError("evidence outside model support");
  return res.s_cf.row(0).transpose();
}

/// Draws n next states from P(S' | s, a): returns an n x d matrix.
using ConditionalSampler = std::function<Tensor2(const Vector& s, double a, Eigen::Index n, Rng& rng)>;

/// Sampler for a structural model with fixed theta: u from the model's prior.
template <StructuralModel M>
ConditionalSampler model_sampler(const M& model, Vector theta = {}) {
  return [&model, theta = std::move(theta)](const Vector& s, double a, Eigen::Index n, Rng& rng) {
    const Tensor2 u = sample_noise(model, n, rng);
    const Tensor2 S = Tensor2::Ones(n, 1) * nn::row_of(s);
    const Tensor2 A = Tensor2::Constant(n, 1, a);
    const Tensor2 T = theta.size() ? Tensor2(Tensor2::Ones(n, 1) * nn::row_of(theta)) : Tensor2(n, 0);
    return Tensor2(model.predict(S, A, T, u));
  };
}

struct QuantileCounterfactual {
  Vector value;  // alpha-quantile under the alternative action
  Vector lower;  // Monte-Carlo band from order-statistic spread
  Vector upper;
  Vector alpha;  // empirical CDF level of the evidence under the factual action
};

/// Model-free counterfactual: per dimension, the evidence's CDF level under a
/// is carried over to the conditional distribution under a'.
inline QuantileCounterfactual quantile_counterfactual(const ConditionalSampler& sampler, const Evidence& e,
                                                      double cf_action, Eigen::Index n_samples, Rng& rng,
                                                      double band_z = 4.0) {
  if (n_samples < 100) throw PreconditionError("quantile_counterfactual: need at least 100 samples");
  const Eigen::Index d = e.s_next.size();
  const Tensor2 factual = sampler(e.s, e.a, n_samples, rng);
  const Tensor2 alternative = sampler(e.s, cf_action, n_samples, rng);
  nn::check_cols(factual, d, "quantile_counterfactual: factual samples");
  nn::check_cols(alternative, d, "quantile_counterfactual: alternative samples");

  QuantileCounterfactual out{Vector(d), Vector(d), Vector(d), Vector(d)};
  const double n = static_cast<double>(n_samples);
  std::vector<double> col(static_cast<std::size_t>(n_samples));
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index below = 0;
    for (Eigen::Index i = 0; i < n_samples; ++i) below += factual(i, j) <= e.s_next(j) ? 1 : 0;
    const double alpha = static_cast<double>(below) / n;
    for (Eigen::Index i = 0; i < n_samples; ++i) col[static_cast<std::size_t>(i)] = alternative(i, j);
    std::sort(col.begin(), col.end());
    auto at_rank = [&](double rank) {
      const auto k = static_cast<Eigen::Index>(std::clamp(std::ceil(rank) - 1.0, 0.0, n - 1.0));
      return col[static_cast<std::size_t>(k)];
    };
    // Both alpha and the quantile are estimated from n draws, so the rank
    // uncertainty is that of two independent binomial counts.
    const double rank_sd = std::sqrt(2.0 * n * std::max(alpha * (1.0 - alpha), 1.0 / n)) + 1.0;
    out.alpha(j) = alpha;
    out.value(j) = at_rank(alpha * n);
    out.lower(j) = at_rank(alpha * n - band_z * rank_sd);
    out.upper(j) = at_rank(alpha * n + band_z * rank_sd);
  }
  return out;
}

/// Action support [low, high]; levels > 1 selects the evenly spaced discrete set.
struct ActionSupport {
  double low = 0.0;
  double high = 1.0;
  int levels = 11;

  bool contains(double a) const {
    if (a < low - 1e-12 || a > high + 1e-12) return false;
    if (levels <= 1) return true;
    const double scaled = (a - low) / (high - low) * (levels - 1);
    return std::abs(scaled - std::round(scaled)) < 1e-9;
  }

  double level(int index) const { return low + (high - low) * index / static_cast<double>(levels - 1); }
};

/// Uniform draws over the support; the factual action may reappear.
inline std::vector<double> sample_alternative_actions(const ActionSupport& support, int k, Rng& rng) {
  require(k >= 1, "sample_alternative_actions: k must be at least 1");
  require(support.high > support.low, "sample_alternative_actions: empty support");
  std::vector<double> out(static_cast<std::size_t>(k));
  for (auto& a : out) {
    if (support.levels > 1) {
      a = support.level(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(support.levels))));
    } else {
      std::uniform_real_distribution<double> dist(support.low, support.high);
      a = dist(rng);
    }
  }
  return out;
}

}  // namespace cfrl::scm
