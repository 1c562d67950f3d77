#pragma once

#include <concepts>

#include "cfrl/env/dataset.hpp"
#include "cfrl/numerics/tensor.hpp"

namespace cfrl::scm {

using nn::Tensor2;
using nn::Vector;

/// A structural model s' = f(s, a, theta, u), evaluated row-wise on batches.
/// Output coordinate j must depend on the noise only through u(:, j) and be
/// strictly monotone in it (either direction). `theta` may have zero columns.
template <class M>
concept StructuralModel = requires(const M& m, const Tensor2& x) {
  { m.state_dim() } -> std::convertible_to<Eigen::Index>;
  { m.predict(x, x, x, x) } -> std::convertible_to<Tensor2>;
};

/// Models that can precompute everything not depending on u, so repeated
/// evaluation for a fixed (s, a, theta) batch only redoes the noise path.
template <class M>
concept Conditionable = StructuralModel<M> && requires(const M& m, const Tensor2& x) {
  m.predict_given(m.condition(x, x, x), x);
};

/// Models with an amortized inverse (s, a, theta, s') -> u.
template <class M>
concept HasEncoder = StructuralModel<M> && requires(const M& m, const Tensor2& x) {
  { m.encode(x, x, x, x) } -> std::convertible_to<Tensor2>;
};

/// Models whose noise prior is not the standard normal.
template <class M>
concept HasNoisePrior = requires(const M& m, Eigen::Index n, Rng& rng) {
  { m.sample_noise(n, rng) } -> std::convertible_to<Tensor2>;
};

template <StructuralModel M>
Tensor2 sample_noise(const M& model, Eigen::Index n, Rng& rng) {
  if constexpr (HasNoisePrior<M>) {
    return model.sample_noise(n, rng);
  } else {
    return nn::randn(n, static_cast<Eigen::Index>(model.state_dim()), rng);
  }
}

/// One observed transition used as counterfactual evidence.
struct Evidence {
  Vector s;
  double a = 0.0;
  Vector s_next;
  Vector theta;  // empty unless the model is subject-conditioned
};

struct CounterfactualQuery {
  Evidence evidence;
  double cf_action = 0.0;
};

/// Row-stacked form of many evidences sharing one model.
struct EvidenceBatch {
  Tensor2 s;
  Tensor2 a;  // n x 1
  Tensor2 theta;  // n x d_theta, possibly n x 0
  Tensor2 s_next;

  Eigen::Index size() const { return s.rows(); }

  void validate(Eigen::Index state_dim) const {
    nn::check_cols(s, state_dim, "EvidenceBatch.s");
    nn::check_cols(s_next, state_dim, "EvidenceBatch.s_next");
    nn::check_cols(a, 1, "EvidenceBatch.a");
    if (a.rows() != s.rows() || s_next.rows() != s.rows() || (theta.cols() > 0 && theta.rows() != s.rows())) {
      throw DimensionError("EvidenceBatch: row counts differ");
    }
  }

  static EvidenceBatch single(const Evidence& e) {
    EvidenceBatch b;
    b.s = nn::row_of(e.s);
    b.a = Tensor2::Constant(1, 1, e.a);
    b.theta = e.theta.size() ? nn::row_of(e.theta) : Tensor2(1, 0);
    b.s_next = nn::row_of(e.s_next);
    return b;
  }
};

/// Theta block with the right row count even when the model is unconditioned.
inline Tensor2 theta_or_empty(const Tensor2& theta, Eigen::Index rows) {
  return theta.cols() == 0 ? Tensor2(rows, 0) : theta;
}

/// Evidence rows for observed transitions; theta carries the recorded force
/// noise when present so the ground-truth model can replay it.
inline EvidenceBatch evidence_of(const env::Dataset& data, bool with_force_noise) {
  EvidenceBatch b;
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index d = n ? static_cast<Eigen::Index>(data.front().s.size()) : 0;
  b.s.resize(n, d);
  b.s_next.resize(n, d);
  b.a.resize(n, 1);
  b.theta.resize(n, with_force_noise ? 1 : 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = data[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(tr.s.size()) != d || static_cast<Eigen::Index>(tr.s_next.size()) != d) {
      throw DimensionError("evidence_of: inconsistent state dimension");
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      b.s(i, j) = tr.s[static_cast<std::size_t>(j)];
      b.s_next(i, j) = tr.s_next[static_cast<std::size_t>(j)];
    }
    b.a(i, 0) = tr.a;
    if (with_force_noise) {
      require(!tr.noise.empty(), "evidence_of: record " + std::to_string(tr.record_id) + " has no noise realization");
      b.theta(i, 0) = tr.noise[0];
    }
  }
  return b;
}

}  // namespace cfrl::scm
