#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/augment/augment.hpp"
#include "cfrl/baselines/dynamics.hpp"
#include "cfrl/core/hash.hpp"
#include "cfrl/numerics/checkpoint.hpp"
#include "cfrl/policy/d3qn.hpp"
#include "cfrl/policy/tabular.hpp"
#include "cfrl/scm_train/bicogan.hpp"

namespace cfrl::pipeline {

using nn::Tensor2;

enum class Benchmark { SD, HD, SyntheticScm, FiniteMdp };
enum class Method { CtrlG, CtrlP, BaseD, BaseS, BaseM, RawD3qn };

inline std::string to_string(Benchmark b) {
  switch (b) {
    case Benchmark::SD: return "SD";
    case Benchmark::HD: return "HD";
    case Benchmark::SyntheticScm: return "synthetic-scm";
    case Benchmark::FiniteMdp: return "finite-mdp";
  }
  return "?";
}

inline Benchmark benchmark_from_string(const std::string& s) {
  for (Benchmark b : {Benchmark::SD, Benchmark::HD, Benchmark::SyntheticScm, Benchmark::FiniteMdp}) {
    if (to_string(b) == s) return b;
  }
  throw PreconditionError("unknown benchmark '" + s + "' (expected SD, HD, synthetic-scm or finite-mdp)");
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::CtrlG: return "ctrl_g";
    case Method::CtrlP: return "ctrl_p";
    case Method::BaseD: return "base_d";
    case Method::BaseS: return "base_s";
    case Method::BaseM: return "base_m";
    case Method::RawD3qn: return "raw_d3qn";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::CtrlG, Method::CtrlP, Method::BaseD, Method::BaseS, Method::BaseM, Method::RawD3qn}) {
    if (to_string(m) == s) return m;
  }
  throw PreconditionError("unknown method '" + s + "' (expected ctrl_g, ctrl_p, base_d, base_s, base_m or raw_d3qn)");
}

inline bool is_baseline(Method m) { return m == Method::BaseD || m == Method::BaseS || m == Method::BaseM; }

inline baselines::Variant baseline_variant(Method m) {
  if (m == Method::BaseD) return baselines::Variant::D;
  if (m == Method::BaseS) return baselines::Variant::S;
  if (m == Method::BaseM) return baselines::Variant::M;
  throw PreconditionError(to_string(m) + " is not a baseline");
}

struct FiniteMdpSuite {
  int n_mdps = 20;
  int max_states = 10;
  int max_actions = 4;
  double gamma = 0.9;
  policy::StepSchedule schedule{};
  long long updates = 5000000;
  double restart = 0.05;
  double tolerance = 0.01;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FiniteMdpSuite, n_mdps, max_states, max_actions, gamma, schedule,
                                                updates, restart, tolerance)

struct SyntheticData {
  std::string family = "additive";  // additive | multiplicative | nonlinear
  int dim = 2;
  int n_records = 4000;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticData, family, dim, n_records)

struct AugmentSettings {
  std::string sampling = "uniform";
  std::string abduction = "bisection";
  double cf_keep_fraction = 1.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentSettings, sampling, abduction, cf_keep_fraction)

struct EvalSettings {
  int n_trials = 10;
  int horizon = 200;
  std::uint64_t seed = 12345;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalSettings, n_trials, horizon, seed)

/// One experiment: a benchmark, a method and every hyperparameter. Missing
/// keys keep their defaults; unknown top-level keys are rejected.
struct ExperimentConfig {
  Benchmark benchmark = Benchmark::SD;
  Method method = Method::CtrlG;
  std::vector<int> n_trials{50, 100, 150, 200, 250};  // SD subsets
  int trials_per_gravity = 50;  // HD
  std::vector<double> gravities{env::kHybridGravities.begin(), env::kHybridGravities.end()};
  int tau = 5;
  int k = 5;
  int k_cf = 10;
  double lambda = 1.0;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::uint64_t data_seed = 2024;
  std::string data_path;  // optional external JSONL dataset instead of simulation
  env::EnvConfig env{};
  scm_train::GanConfig gan{};
  baselines::BaselineConfig baseline{};
  policy::D3qnConfig d3qn{};
  AugmentSettings augment{};
  EvalSettings eval{};
  FiniteMdpSuite finite_mdp{};
  SyntheticData synthetic{};

  void validate() const {
    require(!seeds.empty(), "config: seed list must not be empty");
    require(!n_trials.empty(), "config: n_trials must not be empty");
    for (int n : n_trials) require(n >= 1, "config: every n_trials entry must be positive");
    require(trials_per_gravity >= 1, "config: trials_per_gravity must be positive");
    require(!gravities.empty(), "config: gravities must not be empty");
    require(k >= 1, "config: k must be at least 1");
    require(k_cf >= 0, "config: k_cf must be non-negative");
    require(d3qn.action_levels == env.action_levels, "config: d3qn.action_levels must equal env.action_levels");
    if (!data_path.empty() && !std::filesystem::exists(data_path)) {
      throw IoError("config: data_path '" + data_path + "' does not exist");
    }
    env.validate();
    gan_config().validate();
    augment::action_sampling_from_string(augment.sampling);
    scm::abduction_method_from_string(augment.abduction);
  }

  /// GAN settings with the shared tau and lambda applied.
  scm_train::GanConfig gan_config() const {
    auto g = gan;
    g.tau = tau;
    g.lambda = lambda;
    return g;
  }

  augment::AugmentOptions augment_options(const std::string& model_hash) const {
    augment::AugmentOptions o;
    o.k_cf = k_cf;
    o.sampling = augment::action_sampling_from_string(augment.sampling);
    o.abduction = scm::abduction_method_from_string(augment.abduction);
    o.cf_keep_fraction = augment.cf_keep_fraction;
    o.support.levels = env.action_levels;
    o.model_hash = model_hash;
    return o;
  }

  policy::EvalOptions eval_options() const { return {eval.n_trials, eval.horizon, eval.seed}; }

  /// Dataset sizes the stages loop over: the SD subsets, or the single HD size.
  std::vector<int> cells() const {
    if (benchmark == Benchmark::HD) return {trials_per_gravity};
    if (benchmark == Benchmark::SD) return n_trials;
    return {0};
  }

  nlohmann::json to_json() const {
    return {{"benchmark", to_string(benchmark)},
            {"method", to_string(method)},
            {"n_trials", n_trials},
            {"trials_per_gravity", trials_per_gravity},
            {"gravities", gravities},
            {"tau", tau},
            {"k", k},
            {"k_cf", k_cf},
            {"lambda", lambda},
            {"seeds", seeds},
            {"data_seed", data_seed},
            {"data_path", data_path},
            {"env", env},
            {"gan", gan},
            {"baseline", baseline},
            {"d3qn", d3qn},
            {"augment", augment},
            {"eval", eval},
            {"finite_mdp", finite_mdp},
            {"synthetic", synthetic}};
  }

  std::string hash() const { return content_hash(to_json().dump()); }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    require(j.is_object(), "config: top level must be an object");
    const ExperimentConfig defaults;
    const nlohmann::json known = defaults.to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw PreconditionError("config: unknown key '" + key + "'");
    }
    nlohmann::json merged = known;
    merged.merge_patch(j);
    ExperimentConfig c;
    try {
      c.benchmark = benchmark_from_string(merged.at("benchmark").get<std::string>());
      c.method = method_from_string(merged.at("method").get<std::string>());
      c.n_trials = merged.at("n_trials").get<std::vector<int>>();
      c.trials_per_gravity = merged.at("trials_per_gravity").get<int>();
      c.gravities = merged.at("gravities").get<std::vector<double>>();
      c.tau = merged.at("tau").get<int>();
      c.k = merged.at("k").get<int>();
      c.k_cf = merged.at("k_cf").get<int>();
      c.lambda = merged.at("lambda").get<double>();
      c.seeds = merged.at("seeds").get<std::vector<std::uint64_t>>();
      c.data_seed = merged.at("data_seed").get<std::uint64_t>();
      c.data_path = merged.at("data_path").get<std::string>();
      c.env = merged.at("env").get<env::EnvConfig>();
      c.gan = merged.at("gan").get<scm_train::GanConfig>();
      c.baseline = merged.at("baseline").get<baselines::BaselineConfig>();
      c.d3qn = merged.at("d3qn").get<policy::D3qnConfig>();
      c.augment = merged.at("augment").get<AugmentSettings>();
      c.eval = merged.at("eval").get<EvalSettings>();
      c.finite_mdp = merged.at("finite_mdp").get<FiniteMdpSuite>();
      c.synthetic = merged.at("synthetic").get<SyntheticData>();
    } catch (const nlohmann::json::exception& e) {
      throw PreconditionError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    const auto j = nn::read_json_file(path);
    if (j.is_object() && j.empty()) throw PreconditionError("config: " + path + " is empty");
    return from_json(j);
  }
};

}  // namespace cfrl::pipeline
