#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cfrl/cluster/kmeans.hpp"
#include "cfrl/env/dataset.hpp"
#include "cfrl/scm/inference.hpp"

namespace cfrl::augment {

using env::Dataset;
using env::Transition;
using nn::Tensor2;
using nn::Vector;

/// Reward and termination of (s, a', s'). Counterfactual records cannot reuse
/// the parent's reward, so the task's reward function is evaluated again.
using RewardFn = std::function<std::pair<double, bool>(const std::vector<double>& s, double a,
                                                       const std::vector<double>& s_next)>;

/// +1 per step, done once the pole or cart leaves its bounds.
inline RewardFn cartpole_reward(const env::EnvConfig& cfg) {
  return [cfg](const std::vector<double>&, double, const std::vector<double>& s_next) {
    return std::pair{1.0, env::is_terminal(env::CartState::from_vector(s_next), cfg)};
  };
}

enum class ActionSampling {
  Uniform,  // k_cf draws with replacement over the support; the factual action may reappear
  Exhaustive,  // every level except the factual one, k_cf ignored
};

inline std::string to_string(ActionSampling s) { return s == ActionSampling::Uniform ? "uniform" : "exhaustive"; }

inline ActionSampling action_sampling_from_string(const std::string& s) {
  if (s == "uniform") return ActionSampling::Uniform;
  if (s == "exhaustive") return ActionSampling::Exhaustive;
  throw PreconditionError("unknown action sampling: " + s);
}

struct AugmentOptions {
  int k_cf = 10;
  ActionSampling sampling = ActionSampling::Uniform;
  scm::ActionSupport support{};
  scm::AbductionMethod abduction = scm::AbductionMethod::Bisection;
  double cf_keep_fraction = 1.0;  // share of generated records kept when mixing with real data
  std::string model_hash;

  void validate() const {
    require(k_cf >= 0, "augment: k_cf must be non-negative");
    require(cf_keep_fraction >= 0.0 && cf_keep_fraction <= 1.0, "augment: cf_keep_fraction must lie in [0, 1]");
    require(support.levels >= 2, "augment: action support needs at least 2 levels");
  }
};

struct AugmentedDataset {
  Dataset records;  // observed records first, then counterfactuals in parent order
  std::string source_model_hash;
  int k_cf = 0;
  std::size_t n_observed = 0;
  std::size_t n_counterfactual = 0;
  std::size_t n_skipped = 0;  // failed abductions plus non-finite predictions
  std::vector<std::string> warnings;

  Dataset observed() const {
    Dataset out;
    for (const auto& tr : records)
      if (tr.provenance == env::Provenance::Observed) out.push_back(tr);
    return out;
  }

  nlohmann::json meta() const {
    return {{"source_model_hash", source_model_hash}, {"k_cf", k_cf},
            {"n_observed", n_observed},               {"n_counterfactual", n_counterfactual},
            {"n_skipped", n_skipped},                 {"warnings", warnings}};
  }
};

/// Theta to condition on for an observed record; an empty vector means none.
using ThetaFn = std::function<Vector(const Transition&)>;

namespace detail {

inline std::vector<double> alternatives(double factual, const AugmentOptions& opt, Rng& rng) {
  if (opt.sampling == ActionSampling::Exhaustive) {
    std::vector<double> out;
    for (int i = 0; i < opt.support.levels; ++i) {
      const double a = opt.support.level(i);
      if (std::abs(a - factual) > 1e-9) out.push_back(a);
    }
    return out;
  }
  if (opt.k_cf == 0) return {};
  return scm::sample_alternative_actions(opt.support, opt.k_cf, rng);
}

inline std::int64_t next_record_id(const Dataset& data) {
  std::int64_t id = -1;
  for (const auto& tr : data) id = std::max(id, tr.record_id);
  return id + 1;
}

/// Core loop shared by the population and group variants: one batched
/// abduction, then one prediction per counterfactual action slot.
template <scm::StructuralModel M>
AugmentedDataset augment_records(const Dataset& observed, const M& model, const ThetaFn& theta_of,
                                 const RewardFn& reward, const AugmentOptions& opt, std::uint64_t seed,
                                 std::int64_t& next_id) {
  opt.validate();
  require(static_cast<bool>(reward), "augment: reward function required");
  AugmentedDataset out;
  out.source_model_hash = opt.model_hash;
  out.k_cf = opt.sampling == ActionSampling::Exhaustive ? opt.support.levels - 1 : opt.k_cf;
  for (const auto& tr : observed) {
    if (tr.provenance != env::Provenance::Observed) {
      throw PreconditionError("augment: input record " + std::to_string(tr.record_id) + " is not observed");
    }
  }
  out.records = observed;
  out.n_observed = observed.size();
  if (observed.empty() || out.k_cf == 0) return out;

  auto ev = scm::evidence_of(observed, false);
  const auto n = ev.size();
  if (theta_of) {
    const Vector t0 = theta_of(observed.front());
    ev.theta.resize(n, t0.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector t = theta_of(observed[static_cast<std::size_t>(i)]);
      if (t.size() != t0.size()) throw DimensionError("augment: theta dimension varies across records");
      ev.theta.row(i) = t.transpose();
    }
  }
  const auto ab = scm::abduct(model, ev, opt.abduction);

  // Per-record streams keyed by record id, so output does not depend on input order.
  std::vector<std::vector<double>> actions(static_cast<std::size_t>(n));
  std::vector<std::vector<char>> keep(static_cast<std::size_t>(n));
  std::size_t slots = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = observed[static_cast<std::size_t>(i)];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(tr.record_id)));
    auto& acts = actions[static_cast<std::size_t>(i)];
    acts = alternatives(tr.a, opt, rng);
    for (std::size_t k = 0; k < acts.size(); ++k) {
      keep[static_cast<std::size_t>(i)].push_back(opt.cf_keep_fraction >= 1.0 || uniform01(rng) < opt.cf_keep_fraction);
    }
    slots = std::max(slots, acts.size());
  }

  Tensor2 u = ab.u;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!ab.ok[static_cast<std::size_t>(i)]) u.row(i).setZero();
  }
  const Tensor2 theta = scm::theta_or_empty(ev.theta, n);
  std::vector<Tensor2> pred(slots);
  for (std::size_t k = 0; k < slots; ++k) {
    Tensor2 a_cf = ev.a;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& acts = actions[static_cast<std::size_t>(i)];
      if (k < acts.size()) a_cf(i, 0) = acts[k];
    }
    pred[k] = model.predict(ev.s, a_cf, theta, u);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& parent = observed[static_cast<std::size_t>(i)];
    if (!ab.ok[static_cast<std::size_t>(i)]) {
      ++out.n_skipped;
      continue;
    }
    const auto& acts = actions[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < acts.size(); ++k) {
      if (!keep[static_cast<std::size_t>(i)][k]) continue;
      const auto row = pred[k].row(i);
      if (!row.allFinite()) {
        ++out.n_skipped;
        continue;
      }
      Transition cf;
      cf.record_id = next_id++;
      cf.parent_id = parent.record_id;
      cf.subject_id = parent.subject_id;
      cf.trial_id = parent.trial_id;
      cf.t = parent.t;
      cf.s = parent.s;
      cf.a = acts[k];
      cf.s_next.assign(row.data(), row.data() + row.size());
      std::tie(cf.r, cf.done) = reward(cf.s, cf.a, cf.s_next);
      cf.provenance = env::Provenance::Counterfactual;
      out.records.push_back(std::move(cf));
      ++out.n_counterfactual;
    }
  }
  if (out.n_skipped) {
    out.warnings.push_back(std::to_string(out.n_skipped) + " record(s) skipped: evidence outside model support");
  }
  return out;
}

}  // namespace detail

/// Population augmentation: every observed transition is abducted under the
/// model and re-predicted under alternative actions with the same noise.
template <scm::StructuralModel M>
AugmentedDataset augment_general(const Dataset& data, const M& model, const RewardFn& reward,
                                 const AugmentOptions& opt, std::uint64_t seed, const ThetaFn& theta_of = {}) {
  std::int64_t next_id = detail::next_record_id(data);
  return detail::augment_records(data, model, theta_of, reward, opt, seed, next_id);
}

/// Group augmentation: data is pooled per cluster and every member is
/// conditioned on the cluster centroid. Returns one dataset per cluster;
/// counterfactual record ids are unique across all of them.
template <scm::StructuralModel M>
std::vector<AugmentedDataset> augment_groups(const Dataset& data, const M& model,
                                             const cluster::ClusterModel& clusters, const RewardFn& reward,
                                             const AugmentOptions& opt, std::uint64_t seed) {
  std::vector<Dataset> pooled(static_cast<std::size_t>(clusters.k));
  for (const auto& tr : data) pooled[static_cast<std::size_t>(clusters.cluster_of(tr.subject_id))].push_back(tr);

  std::int64_t next_id = detail::next_record_id(data);
  std::vector<AugmentedDataset> out;
  for (int c = 0; c < clusters.k; ++c) {
    const Vector centroid = clusters.centroids.row(c).transpose();
    auto part = detail::augment_records(
        pooled[static_cast<std::size_t>(c)], model, [&](const Transition&) { return centroid; }, reward, opt,
        derive_seed(seed, static_cast<std::uint64_t>(c)), next_id);
    if (pooled[static_cast<std::size_t>(c)].empty()) {
      part.warnings.push_back("group " + std::to_string(c) + " has no records");
    }
    out.push_back(std::move(part));
  }
  return out;
}

}  // namespace cfrl::augment
