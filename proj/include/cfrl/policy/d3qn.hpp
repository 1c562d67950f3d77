#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/env/dataset.hpp"
#include "cfrl/numerics/checkpoint.hpp"
#include "cfrl/numerics/losses.hpp"
#include "cfrl/numerics/mlp.hpp"
#include "cfrl/numerics/optim.hpp"

namespace cfrl::policy {

using nn::Tensor2;
using nn::Vector;

/// Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a'), row-wise.
inline Tensor2 dueling_aggregate(const Tensor2& v, const Tensor2& adv) {
  nn::check_cols(v, 1, "dueling_aggregate: value");
  if (v.rows() != adv.rows()) throw DimensionError("dueling_aggregate: row counts differ");
  const Eigen::VectorXd mean = adv.rowwise().mean();
  return (adv.colwise() - mean).colwise() + v.col(0);
}

/// Shared trunk feeding a scalar value stream and a per-action advantage stream.
class DuelingNet {
 public:
  static constexpr const char* kKind = "d3qn";

  DuelingNet() = default;
  DuelingNet(Eigen::Index state_dim, Eigen::Index n_actions, const std::vector<Eigen::Index>& hidden, Rng& rng) {
    require(!hidden.empty(), "DuelingNet: need at least one hidden layer");
    require(n_actions >= 1, "DuelingNet: need at least one action");
    nn::MlpSpec spec;
    spec.input = state_dim;
    spec.hidden.assign(hidden.begin(), hidden.end() - 1);
    spec.output = hidden.back();
    spec.output_activation = nn::ActivationKind::Relu;
    trunk = nn::Mlp(spec, rng);
    value = nn::Dense(hidden.back(), 1, rng, 1.0);
    advantage = nn::Dense(hidden.back(), n_actions, rng, 1.0);
    input_std = nn::Standardizer::identity(state_dim);
  }

  nn::Standardizer input_std;
  nn::Mlp trunk;
  nn::Dense value;
  nn::Dense advantage;

  Eigen::Index state_dim() const { return input_std.dim(); }
  Eigen::Index n_actions() const { return advantage.out_dim(); }

  struct Streams {
    Tensor2 v;
    Tensor2 adv;
    Tensor2 q;
  };

  Streams streams(const Tensor2& s) const {
    const Tensor2 h = trunk.predict(input_std.apply(s));
    Streams out{value.predict(h), advantage.predict(h), {}};
    out.q = dueling_aggregate(out.v, out.adv);
    return out;
  }

  Tensor2 predict(const Tensor2& s) const { return streams(s).q; }

  Tensor2 forward(const Tensor2& s) {
    const Tensor2 h = trunk.forward(input_std.apply(s));
    return dueling_aggregate(value.forward(h), advantage.forward(h));
  }

  /// dQ -> parameter gradients; returns d(loss)/d(standardized input).
  Tensor2 backward(const Tensor2& dq) {
    const Tensor2 dv = dq.rowwise().sum();
    const Eigen::VectorXd mean = dq.rowwise().mean();
    const Tensor2 dadv = dq.colwise() - mean;
    const Tensor2 dh = value.backward(dv) + advantage.backward(dadv);
    return trunk.backward(dh);
  }

  int greedy(const Vector& s) const {
    Eigen::Index best = 0;
    predict(nn::row_of(s)).row(0).maxCoeff(&best);
    return static_cast<int>(best);
  }

  void collect(std::vector<nn::ParamRef>& out, const std::string& prefix) {
    trunk.collect(out, prefix + ".trunk");
    value.collect(out, prefix + ".value");
    advantage.collect(out, prefix + ".advantage");
  }

  std::vector<nn::ParamRef> params() {
    std::vector<nn::ParamRef> out;
    collect(out, "q");
    return out;
  }

  void zero_grad() {
    trunk.zero_grad();
    value.zero_grad();
    advantage.zero_grad();
  }

  nlohmann::json to_json() const {
    nlohmann::json body{{"input_std", input_std.to_json()},
                        {"trunk", trunk.to_json()},
                        {"value", value.to_json()},
                        {"advantage", advantage.to_json()}};
    return nn::make_checkpoint(kKind, {{"state_dim", state_dim()}, {"n_actions", n_actions()}}, body);
  }

  static DuelingNet from_json(const nlohmann::json& j) {
    const nlohmann::json body = nn::open_checkpoint(j, kKind).at("body");
    DuelingNet n;
    n.input_std = nn::Standardizer::from_json(body.at("input_std"));
    n.trunk = nn::Mlp::from_json(body.at("trunk"));
    n.value = nn::Dense::from_json(body.at("value"));
    n.advantage = nn::Dense::from_json(body.at("advantage"));
    return n;
  }
};

struct D3qnConfig {
  std::vector<Eigen::Index> hidden{512, 512, 512, 512};
  double gamma = 0.99;
  double lr = 1e-4;
  int batch_size = 128;
  int updates = 10000;
  int target_sync = 1000;
  double huber_delta = 1.0;
  double clip_norm = 10.0;
  int log_every = 500;
  int action_levels = 11;

  void validate() const {
    require(!hidden.empty(), "D3qnConfig: hidden must be non-empty");
    require(gamma >= 0.0 && gamma < 1.0, "D3qnConfig: gamma must lie in [0, 1)");
    require(lr > 0.0 && batch_size >= 1 && updates >= 0 && target_sync >= 1 && log_every >= 1,
            "D3qnConfig: lr, batch_size, target_sync and log_every must be positive");
    require(action_levels >= 2, "D3qnConfig: need at least 2 action levels");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(D3qnConfig, hidden, gamma, lr, batch_size, updates, target_sync,
                                                huber_delta, clip_norm, log_every, action_levels)

/// Transitions as arrays; actions are level indices.
struct ReplayArrays {
  Tensor2 s;
  std::vector<int> a;
  Eigen::VectorXd r;
  Tensor2 s_next;
  Eigen::VectorXd done;  // 1 for terminal

  Eigen::Index size() const { return s.rows(); }

  static ReplayArrays from(const env::Dataset& data, int action_levels) {
    require(!data.empty(), "train_d3qn: dataset is empty");
    const auto n = static_cast<Eigen::Index>(data.size());
    const auto d = static_cast<Eigen::Index>(data.front().s.size());
    ReplayArrays out;
    out.s.resize(n, d);
    out.s_next.resize(n, d);
    out.r.resize(n);
    out.done.resize(n);
    out.a.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& tr = data[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(tr.s.size()) != d || static_cast<Eigen::Index>(tr.s_next.size()) != d) {
        throw DimensionError("train_d3qn: inconsistent state dimension");
      }
      for (Eigen::Index j = 0; j < d; ++j) {
        out.s(i, j) = tr.s[static_cast<std::size_t>(j)];
        out.s_next(i, j) = tr.s_next[static_cast<std::size_t>(j)];
      }
      out.a[static_cast<std::size_t>(i)] = env::action_index(tr.a, action_levels);
      out.r(i) = tr.r;
      out.done(i) = tr.done ? 1.0 : 0.0;
    }
    if (!out.s.allFinite() || !out.s_next.allFinite() || !out.r.allFinite()) {
      throw NumericalError("train_d3qn: dataset holds non-finite values");
    }
    return out;
  }

  ReplayArrays rows(const std::vector<Eigen::Index>& idx) const {
    ReplayArrays b;
    const auto m = static_cast<Eigen::Index>(idx.size());
    b.s.resize(m, s.cols());
    b.s_next.resize(m, s.cols());
    b.r.resize(m);
    b.done.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const Eigen::Index i = idx[static_cast<std::size_t>(k)];
      b.s.row(k) = s.row(i);
      b.s_next.row(k) = s_next.row(i);
      b.a.push_back(a[static_cast<std::size_t>(i)]);
      b.r(k) = r(i);
      b.done(k) = done(i);
    }
    return b;
  }
};

/// Double-DQN targets r + gamma (1 - done) Q_target(s', argmax_a Q_main(s', a)).
/// `chosen`, when given, receives the argmax actions picked by the main network.
inline Eigen::VectorXd double_dqn_targets(const DuelingNet& main, const DuelingNet& target, const ReplayArrays& b,
                                          double gamma, std::vector<int>* chosen = nullptr) {
  const Tensor2 q_main = main.predict(b.s_next);
  const Tensor2 q_target = target.predict(b.s_next);
  Eigen::VectorXd y(b.size());
  if (chosen) chosen->assign(static_cast<std::size_t>(b.size()), 0);
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    Eigen::Index best = 0;
    q_main.row(i).maxCoeff(&best);
    if (chosen) (*chosen)[static_cast<std::size_t>(i)] = static_cast<int>(best);
    y(i) = b.r(i) + gamma * (1.0 - b.done(i)) * q_target(i, best);
  }
  return y;
}

struct D3qnLogEntry {
  int update = 0;
  double loss = 0.0;
  double mean_q = 0.0;
};

struct D3qnReport {
  std::vector<D3qnLogEntry> log;
  int updates_done = 0;
  int target_syncs = 0;
  bool diverged = false;
  std::string message;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json l = nlohmann::json::array();
    for (const auto& e : log) l.push_back({{"update", e.update}, {"loss", e.loss}, {"mean_q", e.mean_q}});
    return {{"log", l},           {"updates_done", updates_done}, {"target_syncs", target_syncs},
            {"diverged", diverged}, {"message", message},           {"seconds", seconds}};
  }
};

struct D3qnResult {
  DuelingNet net;
  D3qnReport report;
};

/// One gradient step on a minibatch; returns the Huber loss.
inline double d3qn_step(DuelingNet& main, const DuelingNet& target, const ReplayArrays& b, const D3qnConfig& cfg,
                        nn::Adam& opt) {
  const Eigen::VectorXd y = double_dqn_targets(main, target, b, cfg.gamma);
  main.zero_grad();
  const Tensor2 q = main.forward(b.s);
  Tensor2 taken(b.size(), 1), goal(b.size(), 1);
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    taken(i, 0) = q(i, b.a[static_cast<std::size_t>(i)]);
    goal(i, 0) = y(i);
  }
  const auto loss = nn::huber(taken, goal, cfg.huber_delta);
  if (!std::isfinite(loss.value)) throw NumericalError("d3qn: non-finite loss");
  Tensor2 dq = Tensor2::Zero(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < b.size(); ++i) dq(i, b.a[static_cast<std::size_t>(i)]) = loss.grad(i, 0);
  main.backward(dq);
  opt.step(main.params());
  return loss.value;
}

/// Batch off-policy D3QN: uniform minibatches from the dataset, hard target
/// sync every `target_sync` updates. A non-finite loss or gradient restores
/// the weights saved at the last log interval and stops training.
inline D3qnResult train_d3qn(const env::Dataset& data, const D3qnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ReplayArrays all = ReplayArrays::from(data, cfg.action_levels);
  Rng rng(seed);
  D3qnResult res;
  res.net = DuelingNet(all.s.cols(), cfg.action_levels, cfg.hidden, rng);
  res.net.input_std = nn::Standardizer::fit(all.s);
  DuelingNet target = res.net;
  DuelingNet snapshot = res.net;
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.clip_norm = cfg.clip_norm;
  nn::Adam opt(ac);

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(cfg.batch_size));
  double running = 0.0;
  int since_log = 0;
  for (int u = 1; u <= cfg.updates; ++u) {
    for (auto& i : idx) i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(all.size())));
    const ReplayArrays b = all.rows(idx);
    try {
      running += d3qn_step(res.net, target, b, cfg, opt);
      ++since_log;
    } catch (const NumericalError& e) {
      res.net = snapshot;
      res.report.diverged = true;
      res.report.message = std::string(e.what()) + " at update " + std::to_string(u) + "; restored last snapshot";
      break;
    }
    res.report.updates_done = u;
    if (u % cfg.target_sync == 0) {
      target = res.net;
      ++res.report.target_syncs;
    }
    if (u % cfg.log_every == 0 || u == cfg.updates) {
      const double mq = res.net.predict(b.s).mean();
      res.report.log.push_back({u, running / std::max(since_log, 1), mq});
      running = 0.0;
      since_log = 0;
      snapshot = res.net;
    }
  }
  res.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Mean Q(s, a) of the network over the dataset's own state-action pairs
/// (the value of the behaviour policy as the network sees it).
inline double mean_q_on(const DuelingNet& net, const env::Dataset& data, int action_levels) {
  const ReplayArrays arr = ReplayArrays::from(data, action_levels);
  const Tensor2 q = net.predict(arr.s);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < arr.size(); ++i) sum += q(i, arr.a[static_cast<std::size_t>(i)]);
  return sum / static_cast<double>(arr.size());
}

struct EvalOptions {
  int n_trials = 10;
  int horizon = 200;
  std::uint64_t seed = 0;
};

struct Evaluation {
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mean_q = std::numeric_limits<double>::quiet_NaN();  // over visited (s, a), NaN without a Q function
  std::vector<double> rewards;

  nlohmann::json to_json() const {
    return {{"mean_reward", mean_reward}, {"std_reward", std_reward},
            {"mean_q", std::isfinite(mean_q) ? nlohmann::json(mean_q) : nlohmann::json(nullptr)},
            {"rewards", rewards}};
  }
};

/// Picks an action level index for a state; `q_out` receives Q(s, chosen) when known.
using ActionChooser = std::function<int(const env::CartState& s, Rng& rng, double* q_out)>;

inline ActionChooser greedy_chooser(const DuelingNet& net) {
  return [&net](const env::CartState& s, Rng&, double* q_out) {
    const auto arr = s.to_array();
    const Tensor2 q = net.predict(Tensor2(Eigen::Map<const Eigen::RowVectorXd>(arr.data(), 4)));
    Eigen::Index best = 0;
    const double v = q.row(0).maxCoeff(&best);
    if (q_out) *q_out = v;
    return static_cast<int>(best);
  };
}

inline ActionChooser random_chooser(int action_levels) {
  return [action_levels](const env::CartState&, Rng& rng, double*) {
    return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(action_levels)));
  };
}

/// Simulator rollouts: each trial has its own seed derived from opt.seed, so
/// results do not depend on evaluation order.
inline Evaluation evaluate_policy(const ActionChooser& choose, const env::EnvConfig& cfg, const EvalOptions& opt = {}) {
  cfg.validate();
  require(opt.n_trials >= 1 && opt.horizon >= 1, "evaluate_policy: n_trials and horizon must be positive");
  Evaluation ev;
  double q_sum = 0.0;
  long long q_count = 0;
  for (int trial = 0; trial < opt.n_trials; ++trial) {
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(trial)));
    env::CartState s = env::initial_state(rng);
    double total = 0.0;
    for (int t = 0; t < opt.horizon; ++t) {
      double q = std::numeric_limits<double>::quiet_NaN();
      const int a = choose(s, rng, &q);
      if (std::isfinite(q)) {
        q_sum += q;
        ++q_count;
      }
      const auto res = env::step(s, env::action_level(a, cfg.action_levels), cfg, rng);
      total += res.reward;
      if (res.done) break;
      s = res.next;
    }
    ev.rewards.push_back(total);
  }
  const Eigen::Map<const Eigen::VectorXd> r(ev.rewards.data(), static_cast<Eigen::Index>(ev.rewards.size()));
  ev.mean_reward = r.mean();
  ev.std_reward = std::sqrt((r.array() - ev.mean_reward).square().mean());
  if (q_count) ev.mean_q = q_sum / static_cast<double>(q_count);
  return ev;
}

}  // namespace cfrl::policy
