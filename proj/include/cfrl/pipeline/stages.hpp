#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/augment/augment.hpp"
#include "cfrl/baselines/dynamics.hpp"
#include "cfrl/cluster/kmeans.hpp"
#include "cfrl/pipeline/config.hpp"
#include "cfrl/policy/d3qn.hpp"
#include "cfrl/policy/tabular.hpp"
#include "cfrl/scm/synthetic.hpp"
#include "cfrl/scm_train/bicogan.hpp"

namespace cfrl::pipeline {

// Sub-stream ids under a training seed.
inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kAugmentStream = 2;
inline constexpr std::uint64_t kPolicyStream = 3;
inline constexpr std::uint64_t kClusterStream = 4;

// ---------------------------------------------------------------------------
// Data

inline env::Dataset simulate(const ExperimentConfig& cfg) {
  if (cfg.benchmark == Benchmark::SD) {
    const int n = *std::max_element(cfg.n_trials.begin(), cfg.n_trials.end());
    return env::generate_trials(cfg.env, n, env::uniform_random_policy(cfg.env.action_levels), cfg.data_seed);
  }
  if (cfg.benchmark == Benchmark::HD) {
    return env::generate_hybrid(cfg.env, cfg.gravities, cfg.trials_per_gravity, cfg.data_seed);
  }
  require(cfg.benchmark == Benchmark::SyntheticScm, "simulate: finite-mdp has no transition dataset");
  const auto& sc = cfg.synthetic;
  require(sc.dim >= 1 && sc.n_records >= 1, "synthetic: dim and n_records must be positive");
  Rng rng(cfg.data_seed);
  const Tensor2 s = nn::randn(sc.n_records, sc.dim, rng);
  const Tensor2 u = nn::randn(sc.n_records, sc.dim, rng);
  Tensor2 a(sc.n_records, 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    a(i, 0) = env::action_level(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.env.action_levels))),
                                cfg.env.action_levels);
  }
  Tensor2 next;
  if (sc.family == "additive") {
    next = scm::AdditiveScm{{sc.dim}}.predict(s, a, Tensor2(), u);
  } else if (sc.family == "multiplicative") {
    next = scm::MultiplicativeScm{{sc.dim}}.predict(s, a, Tensor2(), u);
  } else if (sc.family == "nonlinear") {
    next = scm::NonlinearScm{{sc.dim}}.predict(s, a, Tensor2(), u);
  } else {
    throw PreconditionError("synthetic: unknown family '" + sc.family + "'");
  }
  env::Dataset data;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    env::Transition tr;
    tr.record_id = i;
    tr.trial_id = static_cast<int>(i);
    tr.subject_id = static_cast<int>(i);
    tr.s.assign(s.row(i).data(), s.row(i).data() + s.cols());
    tr.a = a(i, 0);
    tr.s_next.assign(next.row(i).data(), next.row(i).data() + next.cols());
    tr.noise.assign(u.row(i).data(), u.row(i).data() + u.cols());
    data.push_back(std::move(tr));
  }
  return data;
}

/// Structural checks on a dataset read from disk.
inline void check_dataset(const env::Dataset& data, const std::string& where) {
  if (data.empty()) throw IoError(where + ": dataset is empty");
  const std::size_t d = data.front().s.size();
  std::set<std::int64_t> ids;
  for (const auto& tr : data) {
    if (tr.s.size() != d || tr.s_next.size() != d) {
      throw IoError(where + ": record " + std::to_string(tr.record_id) + " has inconsistent state dimension");
    }
    if (!ids.insert(tr.record_id).second) {
      throw IoError(where + ": duplicate record id " + std::to_string(tr.record_id));
    }
    for (double v : tr.s) if (!std::isfinite(v)) throw IoError(where + ": non-finite state in record " + std::to_string(tr.record_id));
    for (double v : tr.s_next) if (!std::isfinite(v)) throw IoError(where + ": non-finite next state in record " + std::to_string(tr.record_id));
    if (!std::isfinite(tr.a) || !std::isfinite(tr.r)) {
      throw IoError(where + ": non-finite action or reward in record " + std::to_string(tr.record_id));
    }
  }
}

/// The records a cell trains on: the first n trials on SD, everything otherwise.
inline env::Dataset cell_data(const ExperimentConfig& cfg, const env::Dataset& data, int n_trial) {
  if (cfg.benchmark != Benchmark::SD) return data;
  auto out = env::first_trials(data, n_trial);
  std::set<int> trials;
  for (const auto& tr : out) trials.insert(tr.trial_id);
  if (static_cast<int>(trials.size()) < n_trial) {
    throw PreconditionError("dataset has " + std::to_string(trials.size()) + " trials, n_trial = " +
                            std::to_string(n_trial) + " requested");
  }
  return out;
}

inline std::vector<policy::FiniteMdp> random_mdps(const FiniteMdpSuite& suite, std::uint64_t seed) {
  require(suite.n_mdps >= 1 && suite.max_states >= 2 && suite.max_actions >= 2,
          "finite_mdp: need n_mdps >= 1, max_states >= 2, max_actions >= 2");
  std::vector<policy::FiniteMdp> out;
  for (int i = 0; i < suite.n_mdps; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int ns = 2 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(suite.max_states - 1)));
    const int na = 2 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(suite.max_actions - 1)));
    out.push_back(policy::random_mdp(ns, na, suite.gamma, rng));
  }
  return out;
}

inline nlohmann::json mdp_to_json(const policy::FiniteMdp& m) {
  nlohmann::json p = nlohmann::json::array();
  for (const auto& pa : m.P) p.push_back(nn::tensor_to_json(pa));
  return {{"n_states", m.n_states}, {"n_actions", m.n_actions}, {"gamma", m.gamma}, {"P", p},
          {"R", nn::tensor_to_json(m.R)}};
}

inline policy::FiniteMdp mdp_from_json(const nlohmann::json& j) {
  policy::FiniteMdp m;
  try {
    m.n_states = j.at("n_states").get<int>();
    m.n_actions = j.at("n_actions").get<int>();
    m.gamma = j.at("gamma").get<double>();
    for (const auto& pa : j.at("P")) m.P.push_back(nn::tensor_from_json(pa));
    m.R = nn::tensor_from_json(j.at("R"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed MDP: ") + e.what());
  }
  m.validate();
  return m;
}

inline augment::RewardFn reward_for(const ExperimentConfig& cfg) {
  if (cfg.benchmark == Benchmark::SyntheticScm) {
    return [](const std::vector<double>&, double, const std::vector<double>&) { return std::pair{0.0, false}; };
  }
  return augment::cartpole_reward(cfg.env);
}

// ---------------------------------------------------------------------------
// Train

/// Whatever the train stage produced for one (seed, n_trial) cell.
struct TrainedCell {
  std::optional<scm_train::LearnedScm> scm;
  std::optional<baselines::DynamicsModel> dynamics;
  std::optional<cluster::ClusterModel> clusters;
  nlohmann::json report = nlohmann::json::object();
};

/// Subject-level theta: mean of the embeddings of a subject's windows.
inline cluster::SubjectPoints subject_thetas(const scm_train::LearnedScm& model, const env::Dataset& data) {
  const auto windows = env::window(data, model.tau());
  require(!windows.empty(), "subject_thetas: no trajectory has at least tau steps");
  std::vector<int> who;
  for (const auto& w : windows) who.push_back(w.subject_id);
  return cluster::subject_means(model.estimate_theta(windows), who);
}

inline TrainedCell train_cell(const ExperimentConfig& cfg, const env::Dataset& data, std::uint64_t seed) {
  TrainedCell out;
  const std::uint64_t s = derive_seed(seed, kTrainStream);
  switch (cfg.method) {
    case Method::CtrlG: {
      auto res = scm_train::train_ctrl_g(data, cfg.gan_config(), s);
      out.report = res.report;
      out.scm = std::move(res.model);
      break;
    }
    case Method::CtrlP: {
      auto res = scm_train::train_ctrl_p(data, cfg.gan_config(), s);
      out.report = res.report;
      const auto pts = subject_thetas(res.model, data);
      out.clusters = cluster::fit_kmeans(pts.points, pts.ids, cfg.k, derive_seed(seed, kClusterStream));
      if (cfg.benchmark == Benchmark::HD) {
        std::vector<int> pred, truth;
        for (int id : pts.ids) {
          pred.push_back(out.clusters->cluster_of(id));
          truth.push_back(env::group_of_subject(id));
        }
        out.report["cluster_agreement"] = cluster::matched_agreement(pred, truth);
      }
      out.report["cluster_objective"] = out.clusters->objective;
      out.scm = std::move(res.model);
      break;
    }
    case Method::BaseD:
    case Method::BaseS:
    case Method::BaseM: {
      auto res = baselines::train_baseline(baseline_variant(cfg.method), data, cfg.baseline, s);
      out.report = res.report.to_json();
      out.dynamics = std::move(res.model);
      break;
    }
    case Method::RawD3qn:
      out.report = {{"message", "raw_d3qn learns from the observed data only; no dynamics model"}};
      break;
  }
  out.report["method"] = to_string(cfg.method);
  return out;
}

// ---------------------------------------------------------------------------
// Augment

/// Cluster serving each group (gravity): the most common cluster among the
/// group's clustered subjects, ties to the lower index. A group without
/// clustered subjects falls back to the largest cluster.
inline std::vector<int> cluster_for_groups(const cluster::ClusterModel& clusters, int n_groups) {
  std::vector<std::vector<int>> counts(static_cast<std::size_t>(n_groups), std::vector<int>(clusters.k, 0));
  std::vector<int> sizes(static_cast<std::size_t>(clusters.k), 0);
  for (const auto& [subject, c] : clusters.assignment) {
    ++sizes[static_cast<std::size_t>(c)];
    const int g = env::group_of_subject(subject);
    if (g >= 0 && g < n_groups) ++counts[static_cast<std::size_t>(g)][static_cast<std::size_t>(c)];
  }
  const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<int> out;
  for (const auto& row : counts) {
    const auto best = std::max_element(row.begin(), row.end());
    out.push_back(*best > 0 ? static_cast<int>(best - row.begin()) : largest);
  }
  return out;
}

/// Augmented datasets for one cell: one for every method except ctrl_p, which
/// yields one per cluster. Subjects too short to embed have no cluster; their
/// observed records join every group unaugmented.
inline std::vector<augment::AugmentedDataset> augment_cell(const ExperimentConfig& cfg, const env::Dataset& data,
                                                           const TrainedCell& trained, const std::string& model_hash,
                                                           std::uint64_t seed) {
  const std::uint64_t s = derive_seed(seed, kAugmentStream);
  const auto reward = reward_for(cfg);
  auto opt = cfg.augment_options(model_hash);
  switch (cfg.method) {
    case Method::CtrlG:
      require(trained.scm.has_value(), "augment: ctrl_g needs a trained SCM");
      return {augment::augment_general(data, *trained.scm, reward, opt, s)};
    case Method::CtrlP: {
      require(trained.scm.has_value() && trained.clusters.has_value(), "augment: ctrl_p needs an SCM and clusters");
      env::Dataset clustered, loose;
      for (const auto& tr : data) (trained.clusters->assignment.count(tr.subject_id) ? clustered : loose).push_back(tr);
      auto groups = augment::augment_groups(clustered, *trained.scm, *trained.clusters, reward, opt, s);
      if (!loose.empty()) {
        for (auto& g : groups) {
          g.records.insert(g.records.end(), loose.begin(), loose.end());
          g.n_observed += loose.size();
          g.warnings.push_back(std::to_string(loose.size()) +
                               " record(s) of subjects shorter than tau added without augmentation");
        }
      }
      return groups;
    }
    case Method::BaseD:
    case Method::BaseS:
    case Method::BaseM:
      require(trained.dynamics.has_value(), "augment: baseline needs a trained dynamics model");
      return {baselines::augment_baseline(data, *trained.dynamics, reward, opt, s)};
    case Method::RawD3qn: {
      augment::AugmentedDataset passthrough;
      passthrough.records = data;
      passthrough.n_observed = data.size();
      passthrough.source_model_hash = model_hash;
      return {passthrough};
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Policy

struct MetricRow {
  std::string method;
  std::string benchmark;
  int n_trial = 0;
  std::uint64_t seed = 0;
  double cumulative_reward = 0.0;
  double mean_q = 0.0;
};

inline constexpr const char* kMetricsHeader = "method,benchmark,n_trial,seed,cumulative_reward,mean_q";

inline std::string gravity_label(double g) {
  std::ostringstream os;
  os << "HD:g=" << g;
  return os.str();
}

struct PolicyCell {
  std::vector<policy::D3qnResult> policies;  // one per augmented dataset
  std::vector<MetricRow> rows;
  nlohmann::json evaluations = nlohmann::json::array();
};

/// D3QN on every augmented dataset of the cell, then simulator evaluation:
/// SD rows use the single policy; HD has one row per gravity, served by the
/// policy of that gravity's cluster (ctrl_p) or the single policy.
inline PolicyCell policy_cell(const ExperimentConfig& cfg, const std::vector<env::Dataset>& datasets,
                              const std::optional<cluster::ClusterModel>& clusters, int n_trial, std::uint64_t seed) {
  require(cfg.benchmark == Benchmark::SD || cfg.benchmark == Benchmark::HD,
          "policy: control benchmarks are SD and HD; finite-mdp uses the tabular suite");
  require(!datasets.empty(), "policy: no dataset");
  PolicyCell out;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    check_dataset(datasets[i], "policy");
    out.policies.push_back(
        policy::train_d3qn(datasets[i], cfg.d3qn, derive_seed(derive_seed(seed, kPolicyStream), i)));
  }
  auto emit = [&](const policy::DuelingNet& net, const env::EnvConfig& env_cfg, const std::string& label) {
    const auto ev = policy::evaluate_policy(policy::greedy_chooser(net), env_cfg, cfg.eval_options());
    out.rows.push_back({to_string(cfg.method), label, n_trial, seed, ev.mean_reward, ev.mean_q});
    auto j = ev.to_json();
    j["benchmark"] = label;
    out.evaluations.push_back(j);
  };
  if (cfg.benchmark == Benchmark::SD) {
    std::size_t pick = 0;
    if (clusters) pick = static_cast<std::size_t>(cluster_for_groups(*clusters, 1).front());
    emit(out.policies[pick].net, cfg.env, "SD");
    return out;
  }
  std::vector<int> serve(cfg.gravities.size(), 0);
  if (clusters) serve = cluster_for_groups(*clusters, static_cast<int>(cfg.gravities.size()));
  for (std::size_t g = 0; g < cfg.gravities.size(); ++g) {
    env::EnvConfig e = cfg.env;
    e.gravity = cfg.gravities[g];
    emit(out.policies[static_cast<std::size_t>(serve[g])].net, e, gravity_label(e.gravity));
  }
  return out;
}

struct TabularOutcome {
  int n_states = 0;
  int n_actions = 0;
  double sup_error = 0.0;
  bool passed = false;
};

/// Q-learning on exhaustively augmented streams against value iteration.
inline std::vector<TabularOutcome> tabular_suite(const std::vector<policy::FiniteMdp>& mdps, const FiniteMdpSuite& suite,
                                                 std::uint64_t seed) {
  std::vector<TabularOutcome> out;
  for (std::size_t i = 0; i < mdps.size(); ++i) {
    const auto& m = mdps[i];
    const Tensor2 q_star = policy::value_iteration(m);
    const auto q = policy::tabular_q_learning(m.n_states, m.n_actions, m.gamma, suite.schedule, suite.updates,
                                              policy::exhaustive_counterfactual_stream(m, derive_seed(seed, i),
                                                                                       suite.restart));
    const double err = (q.values - q_star).cwiseAbs().maxCoeff();
    out.push_back({m.n_states, m.n_actions, err, err < suite.tolerance});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string method;
  std::string benchmark;
  int n_trial = 0;
  int n_seeds = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double q_mean = 0.0;
  double q_std = 0.0;
};

/// Mean and population std across seeds, one row per (method, benchmark, n_trial).
inline std::vector<ReportRow> aggregate(const std::vector<MetricRow>& rows) {
  std::map<std::tuple<std::string, std::string, int>, std::vector<const MetricRow*>> groups;
  for (const auto& r : rows) groups[{r.method, r.benchmark, r.n_trial}].push_back(&r);
  std::vector<ReportRow> out;
  for (const auto& [key, members] : groups) {
    ReportRow rr{std::get<0>(key), std::get<1>(key), std::get<2>(key), static_cast<int>(members.size())};
    auto stats = [&](auto field, double& mean, double& sd) {
      double s = 0.0, s2 = 0.0;
      for (const auto* m : members) s += field(*m);
      mean = s / static_cast<double>(members.size());
      for (const auto* m : members) s2 += (field(*m) - mean) * (field(*m) - mean);
      sd = std::sqrt(s2 / static_cast<double>(members.size()));
    };
    stats([](const MetricRow& m) { return m.cumulative_reward; }, rr.reward_mean, rr.reward_std);
    stats([](const MetricRow& m) { return m.mean_q; }, rr.q_mean, rr.q_std);
    out.push_back(rr);
  }
  return out;
}

}  // namespace cfrl::pipeline
