#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/core/error.hpp"
#include "cfrl/core/random.hpp"
#include "cfrl/numerics/tensor.hpp"

namespace cfrl::policy {

using nn::Tensor2;

/// Finite MDP with kernel P[a](s, s') and reward R(s, a).
struct FiniteMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Tensor2> P;  // one n_states x n_states row-stochastic matrix per action
  Tensor2 R;  // n_states x n_actions
  double gamma = 0.9;

  void validate() const {
    require(n_states >= 1 && n_actions >= 1, "FiniteMdp: need at least one state and one action");
    require(gamma >= 0.0 && gamma < 1.0, "FiniteMdp: discount must lie in [0, 1)");
    require(static_cast<int>(P.size()) == n_actions, "FiniteMdp: one transition matrix per action");
    nn::check_cols(R, n_actions, "FiniteMdp: R");
    require(R.rows() == n_states && R.allFinite(), "FiniteMdp: R must be finite, n_states x n_actions");
    for (const auto& p : P) {
      require(p.rows() == n_states && p.cols() == n_states, "FiniteMdp: P[a] must be n_states x n_states");
      require((p.array() >= 0.0).all(), "FiniteMdp: negative transition probability");
      for (Eigen::Index s = 0; s < n_states; ++s) {
        require(std::abs(p.row(s).sum() - 1.0) <= 1e-12, "FiniteMdp: transition row does not sum to 1");
      }
    }
  }

  /// Inverse-CDF next state: the SCM s' = F^{-1}(u | s, a) with u ~ U(0, 1).
  /// The same u under another action is that action's counterfactual.
  int next_state(int s, int a, double u) const {
    const auto& row = P[static_cast<std::size_t>(a)];
    double acc = 0.0;
    for (int j = 0; j < n_states; ++j) {
      acc += row(s, j);
      if (u < acc) return j;
    }
    for (int j = n_states - 1; j >= 0; --j)
      if (row(s, j) > 0.0) return j;
    return n_states - 1;
  }
};

/// Rows drawn from a flat Dirichlet, rewards uniform on [0, 1].
inline FiniteMdp random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  FiniteMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  std::exponential_distribution<double> expo(1.0);
  for (int a = 0; a < n_actions; ++a) {
    Tensor2 p(n_states, n_states);
    for (int s = 0; s < n_states; ++s) {
      for (int j = 0; j < n_states; ++j) p(s, j) = expo(rng);
      p.row(s) /= p.row(s).sum();
    }
    m.P.push_back(std::move(p));
  }
  m.R.resize(n_states, n_actions);
  for (Eigen::Index i = 0; i < m.R.size(); ++i) m.R.data()[i] = uniform01(rng);
  m.validate();
  return m;
}

/// Bellman optimality operator applied once.
inline Tensor2 bellman(const FiniteMdp& m, const Tensor2& Q) {
  const Eigen::VectorXd v = Q.rowwise().maxCoeff();
  Tensor2 out(m.n_states, m.n_actions);
  for (int a = 0; a < m.n_actions; ++a) out.col(a) = m.R.col(a) + m.gamma * (m.P[static_cast<std::size_t>(a)] * v);
  return out;
}

/// Q* by value iteration; the returned table has Bellman residual <= tol.
inline Tensor2 value_iteration(const FiniteMdp& m, double tol = 1e-10, int max_iterations = 100000) {
  m.validate();
  require(tol > 0.0, "value_iteration: tol must be positive");
  Tensor2 Q = Tensor2::Zero(m.n_states, m.n_actions);
  for (int it = 0; it < max_iterations; ++it) {
    Tensor2 next = bellman(m, Q);
    const double res = (next - Q).cwiseAbs().maxCoeff();
    Q = std::move(next);
    if (res * m.gamma <= tol * (1.0 - m.gamma) || res == 0.0) return Q;
  }
  throw NumericalError("value_iteration: no convergence in " + std::to_string(max_iterations) + " sweeps");
}

inline double bellman_residual(const FiniteMdp& m, const Tensor2& Q) { return (bellman(m, Q) - Q).cwiseAbs().maxCoeff(); }

/// Step sizes alpha_n = c / ceil(n / period)^p, n = visits of the (s, a) pair.
/// Only 0.5 < p <= 1 meets sum alpha = inf and sum alpha^2 < inf.
struct StepSchedule {
  double c = 1.0;
  double power = 0.7;
  int period = 1;

  void validate() const {
    require(c > 0.0, "StepSchedule: c must be positive");
    require(period >= 1, "StepSchedule: period must be at least 1");
    if (!(power > 0.5 && power <= 1.0)) {
      throw PreconditionError("StepSchedule: power " + std::to_string(power) +
                              " violates the step-size conditions (need 0.5 < p <= 1)");
    }
  }

  double operator()(long long n) const {
    const double k = std::ceil(static_cast<double>(n) / static_cast<double>(period));
    return std::min(1.0, c / std::pow(std::max(k, 1.0), power));
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StepSchedule, c, power, period)

struct QTable {
  Tensor2 values;
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> visits;

  QTable() = default;
  QTable(int n_states, int n_actions)
      : values(Tensor2::Zero(n_states, n_actions)), visits(decltype(visits)::Zero(n_states, n_actions)) {}

  void update(int s, int a, double target, const StepSchedule& schedule) {
    const long long n = ++visits(s, a);
    values(s, a) += schedule(n) * (target - values(s, a));
  }

  double max_at(int s) const { return values.row(s).maxCoeff(); }
};

/// One transition of a tabular stream.
struct TabularStep {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  bool done = false;
};

/// Q-learning over any transition stream; `next` fills in a step and returns
/// false once the stream is exhausted.
inline QTable tabular_q_learning(int n_states, int n_actions, double gamma, const StepSchedule& schedule,
                                 long long max_updates, const std::function<bool(TabularStep&)>& next) {
  schedule.validate();
  require(gamma >= 0.0 && gamma < 1.0, "tabular_q_learning: discount must lie in [0, 1)");
  QTable q(n_states, n_actions);
  TabularStep st;
  for (long long t = 0; t < max_updates && next(st); ++t) {
    const double boot = st.done ? 0.0 : gamma * q.max_at(st.s_next);
    q.update(st.s, st.a, st.r + boot, schedule);
    if (!q.values.row(st.s).allFinite()) throw NumericalError("tabular_q_learning: non-finite Q value");
  }
  return q;
}

/// Exhaustively augmented stream for a finite MDP: from the current state one
/// noise value u is drawn, the factual action is sampled uniformly, and every
/// action's outcome under the same u is emitted (the factual one plus its
/// counterfactuals). The walk then follows the factual branch, restarting
/// uniformly with probability `restart`.
inline std::function<bool(TabularStep&)> exhaustive_counterfactual_stream(const FiniteMdp& mdp, std::uint64_t seed,
                                                                          double restart = 0.05) {
  mdp.validate();
  struct State {
    Rng rng;
    int s = 0;
    int factual = 0;
    int next_action = 0;
    double u = 0.0;
    bool started = false;
  };
  auto st = std::make_shared<State>();
  st->rng.seed(seed);
  st->s = static_cast<int>(uniform_index(st->rng, static_cast<std::size_t>(mdp.n_states)));
  return [&mdp, st, restart](TabularStep& out) {
    if (!st->started || st->next_action == mdp.n_actions) {
      if (st->started) {
        st->s = mdp.next_state(st->s, st->factual, st->u);
        if (uniform01(st->rng) < restart) {
          st->s = static_cast<int>(uniform_index(st->rng, static_cast<std::size_t>(mdp.n_states)));
        }
      }
      st->started = true;
      st->u = uniform01(st->rng);
      st->factual = static_cast<int>(uniform_index(st->rng, static_cast<std::size_t>(mdp.n_actions)));
      st->next_action = 0;
    }
    const int a = st->next_action++;
    out = {st->s, a, mdp.R(st->s, a), mdp.next_state(st->s, a, st->u), false};
    return true;
  };
}

}  // namespace cfrl::policy
