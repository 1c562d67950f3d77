#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/core/hash.hpp"
#include "cfrl/env/cartpole.hpp"

namespace cfrl::env {

enum class Provenance { Observed, Counterfactual };

inline std::string to_string(Provenance p) { return p == Provenance::Observed ? "observed" : "counterfactual"; }

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "observed") return Provenance::Observed;
  if (s == "counterfactual") return Provenance::Counterfactual;
  throw IoError("unknown provenance: " + s);
}

/// One step <s_t, a_t, s_{t+1}, r_t>. `parent_id` links a counterfactual record
/// to the observed record it was derived from. `noise` optionally carries the
/// simulator's noise realization [force, state...] for replay checks.
struct Transition {
  std::int64_t record_id = -1;
  std::int64_t parent_id = -1;
  int subject_id = 0;
  int trial_id = 0;
  int t = 0;
  std::vector<double> s;
  double a = 0.0;
  std::vector<double> s_next;
  double r = 0.0;
  bool done = false;
  Provenance provenance = Provenance::Observed;
  std::vector<double> noise;

  friend bool operator==(const Transition&, const Transition&) = default;
};

using Dataset = std::vector<Transition>;

/// Subject ids encode their environment group: id = group * kSubjectStride + index.
inline constexpr int kSubjectStride = 10000;
inline int group_of_subject(int subject_id) { return subject_id / kSubjectStride; }
inline int make_subject_id(int group, int index) { return group * kSubjectStride + index; }

inline std::vector<double> to_vector(const CartState& s) {
  const auto a = s.to_array();
  return {a.begin(), a.end()};
}

inline nlohmann::json transition_to_json(const Transition& tr) {
  nlohmann::json j{{"record_id", tr.record_id}, {"parent_id", tr.parent_id}, {"subject_id", tr.subject_id},
                   {"trial_id", tr.trial_id},   {"t", tr.t},                 {"s", tr.s},
                   {"a", tr.a},                 {"s_next", tr.s_next},       {"r", tr.r},
                   {"done", tr.done},           {"provenance", to_string(tr.provenance)}};
  if (!tr.noise.empty()) j["noise"] = tr.noise;
  return j;
}

inline Transition transition_from_json(const nlohmann::json& j) {
  Transition tr;
  tr.record_id = j.at("record_id").get<std::int64_t>();
  tr.parent_id = j.value("parent_id", std::int64_t{-1});
  tr.subject_id = j.at("subject_id").get<int>();
  tr.trial_id = j.at("trial_id").get<int>();
  tr.t = j.at("t").get<int>();
  tr.s = j.at("s").get<std::vector<double>>();
  tr.a = j.at("a").get<double>();
  tr.s_next = j.at("s_next").get<std::vector<double>>();
  tr.r = j.at("r").get<double>();
  tr.done = j.at("done").get<bool>();
  tr.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  if (j.contains("noise")) tr.noise = j.at("noise").get<std::vector<double>>();
  if (tr.s.size() != tr.s_next.size()) throw IoError("transition with mismatched state dimensions");
  return tr;
}

inline std::string to_jsonl(const Dataset& data) {
  std::string out;
  for (const auto& tr : data) {
    out += transition_to_json(tr).dump();
    out += '\n';
  }
  return out;
}

inline void write_jsonl(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << to_jsonl(data);
}

inline Dataset read_jsonl(const std::string& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      data.push_back(transition_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": corrupt dataset record: " + e.what());
    }
  }
  return data;
}

/// Generates `n_trials` trials of up to cfg.max_steps steps. Each trial draws
/// from its own seed derived from `seed`, so trials are independent of order.
inline Dataset generate_trials(const EnvConfig& cfg, int n_trials, const Policy& policy, std::uint64_t seed,
                               int group = 0, int first_trial_id = 0) {
  cfg.validate();
  require(n_trials >= 1, "generate_trials: n_trials must be at least 1");
  Dataset data;
  for (int trial = 0; trial < n_trials; ++trial) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(trial)));
    CartState s = initial_state(rng);
    for (int t = 0; t < cfg.max_steps; ++t) {
      const double a = policy(s, rng);
      const StepResult res = step(s, a, cfg, rng);
      Transition tr;
      tr.subject_id = make_subject_id(group, trial);
      tr.trial_id = first_trial_id + trial;
      tr.t = t;
      tr.s = to_vector(s);
      tr.a = a;
      tr.s_next = to_vector(res.next);
      tr.r = res.reward;
      tr.done = res.done;
      tr.noise.push_back(res.noise.force);
      tr.noise.insert(tr.noise.end(), res.noise.state.begin(), res.noise.state.end());
      data.push_back(std::move(tr));
      if (res.done) break;
      s = res.next;
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) data[i].record_id = static_cast<std::int64_t>(i);
  return data;
}

/// Random-action trials for several gravities; group index = position in `gravities`.
inline Dataset generate_hybrid(EnvConfig cfg, const std::vector<double>& gravities, int trials_per_gravity,
                               std::uint64_t seed) {
  Dataset all;
  for (std::size_t g = 0; g < gravities.size(); ++g) {
    cfg.gravity = gravities[g];
    auto part = generate_trials(cfg, trials_per_gravity, uniform_random_policy(cfg.action_levels),
                                derive_seed(seed, 1000 + g), static_cast<int>(g),
                                static_cast<int>(g) * trials_per_gravity);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  for (std::size_t i = 0; i < all.size(); ++i) all[i].record_id = static_cast<std::int64_t>(i);
  return all;
}

/// Records of the first `n_trials` trials (by trial id order of appearance).
inline Dataset first_trials(const Dataset& data, int n_trials) {
  Dataset out;
  std::vector<int> seen;
  for (const auto& tr : data) {
    if (std::find(seen.begin(), seen.end(), tr.trial_id) == seen.end()) {
      if (static_cast<int>(seen.size()) == n_trials) continue;
      seen.push_back(tr.trial_id);
    }
    if (std::find(seen.begin(), seen.end(), tr.trial_id) != seen.end()) out.push_back(tr);
  }
  return out;
}

/// Trial ids held out for evaluation: floor(fraction * #trials) of the observed
/// trials, drawn without replacement.
inline std::set<int> holdout_trials(const Dataset& data, double fraction, Rng& rng) {
  std::vector<int> trials;
  for (const auto& tr : data) {
    if (tr.provenance == Provenance::Observed) trials.push_back(tr.trial_id);
  }
  std::sort(trials.begin(), trials.end());
  trials.erase(std::unique(trials.begin(), trials.end()), trials.end());
  std::shuffle(trials.begin(), trials.end(), rng);
  const auto n_hold = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(trials.size())));
  return {trials.begin(), trials.begin() + static_cast<std::ptrdiff_t>(std::min(n_hold, trials.size()))};
}

/// A window of tau consecutive transitions of one subject, oldest first.
struct Window {
  int subject_id = 0;
  std::vector<Transition> steps;
};

/// Sliding windows of size tau along each observed trajectory; a trajectory of
/// length L yields max(0, L - tau + 1) windows. Windows never cross trials.
inline std::vector<Window> window(const Dataset& data, int tau) {
  require(tau >= 1, "window: tau must be at least 1");
  std::map<std::pair<int, int>, std::vector<const Transition*>> by_trajectory;
  for (const auto& tr : data) {
    if (tr.provenance == Provenance::Observed) by_trajectory[{tr.subject_id, tr.trial_id}].push_back(&tr);
  }
  std::vector<Window> out;
  for (auto& [key, seq] : by_trajectory) {
    const int subject = key.first;
    std::stable_sort(seq.begin(), seq.end(), [](const Transition* a, const Transition* b) { return a->t < b->t; });
    const int len = static_cast<int>(seq.size());
    for (int start = 0; start + tau <= len; ++start) {
      Window w{subject, {}};
      for (int k = 0; k < tau; ++k) w.steps.push_back(*seq[static_cast<std::size_t>(start + k)]);
      out.push_back(std::move(w));
    }
  }
  return out;
}

/// Sidecar metadata written next to every generated dataset file.
struct DatasetMeta {
  std::string benchmark;
  EnvConfig config;
  std::uint64_t seed = 0;
  std::map<std::string, double> gravity_map;  // group index -> gravity
  std::size_t n_records = 0;
  std::string data_hash;

  std::string config_hash() const { return content_hash(nlohmann::json(config).dump()); }

  nlohmann::json to_json() const {
    return {{"benchmark", benchmark}, {"config", config},         {"config_hash", config_hash()},
            {"seed", seed},           {"gravity_map", gravity_map}, {"n_records", n_records},
            {"data_hash", data_hash}};
  }

  static DatasetMeta from_json(const nlohmann::json& j) {
    DatasetMeta m;
    m.benchmark = j.at("benchmark").get<std::string>();
    m.config = j.at("config").get<EnvConfig>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.gravity_map = j.at("gravity_map").get<std::map<std::string, double>>();
    m.n_records = j.at("n_records").get<std::size_t>();
    m.data_hash = j.value("data_hash", "");
    return m;
  }
};

}  // namespace cfrl::env
