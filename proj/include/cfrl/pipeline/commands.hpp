#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cfrl/pipeline/config.hpp"
#include "cfrl/pipeline/manifest.hpp"
#include "cfrl/pipeline/stages.hpp"

namespace cfrl::pipeline {

namespace fs = std::filesystem;

/// Stages in pipeline order; rerunning one invalidates everything after it.
inline const std::vector<std::string> kStages{"gen-data", "train", "augment", "policy"};

struct RunContext {
  ExperimentConfig cfg;
  fs::path out_dir;
  std::ostream* log = &std::cerr;
};

namespace detail {

inline std::string cell_key(std::uint64_t seed, int n_trial) {
  return "seed" + std::to_string(seed) + "/n" + std::to_string(n_trial);
}

inline std::string artifact(const std::string& what, const std::string& cell, int part = -1) {
  return what + "@" + cell + (part >= 0 ? "#" + std::to_string(part) : "");
}

inline std::string suffix(int part, int parts) { return parts > 1 ? "_c" + std::to_string(part) : ""; }

inline void clear_from(RunManifest& m, const std::string& stage) {
  const auto it = std::find(kStages.begin(), kStages.end(), stage);
  for (auto s = it; s != kStages.end(); ++s) m.clear_stage(*s);
}

/// Loads the manifest of a run that `stage` continues; gen-data starts fresh.
inline RunManifest open_run(const RunContext& ctx, const std::string& stage) {
  fs::create_directories(ctx.out_dir);
  RunManifest m = RunManifest::load_or_empty(ctx.out_dir);
  if (stage != "gen-data" && m.artifacts.empty()) {
    throw IoError("missing manifest in " + ctx.out_dir.string() + "; run `gen-data` first");
  }
  if (!m.config_hash.empty() && m.config_hash != ctx.cfg.hash()) {
    *ctx.log << "warning: config differs from the one that started this run (" << m.config_hash << ")\n";
  }
  clear_from(m, stage);
  return m;
}

inline void close_run(const RunContext& ctx, RunManifest& m, const std::string& stage,
                      std::chrono::steady_clock::time_point t0) {
  m.timing[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.save(ctx.out_dir);
}

inline env::Dataset load_data(const RunContext& ctx, const RunManifest& m, const std::string& name,
                              const std::string& producer) {
  const fs::path p = m.require_artifact(ctx.out_dir, name, producer);
  env::Dataset data;
  try {
    data = env::read_jsonl(p.string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt dataset " + p.string() + ": " + e.what());
  }
  check_dataset(data, p.string());
  return data;
}

inline TrainedCell load_trained(const RunContext& ctx, const RunManifest& m, const std::string& cell) {
  TrainedCell t;
  if (ctx.cfg.method == Method::RawD3qn) return t;
  const auto j = nn::read_json_file(m.require_artifact(ctx.out_dir, artifact("model", cell), "train").string());
  if (ctx.cfg.method == Method::CtrlG || ctx.cfg.method == Method::CtrlP) {
    t.scm = scm_train::LearnedScm::from_json(j);
  } else {
    t.dynamics = baselines::DynamicsModel::from_json(j);
    if (t.dynamics->variant() != baseline_variant(ctx.cfg.method)) {
      throw IoError("model for " + cell + " is " + baselines::to_string(t.dynamics->variant()) + ", config says " +
                    to_string(ctx.cfg.method));
    }
  }
  if (ctx.cfg.method == Method::CtrlP) {
    t.clusters = cluster::ClusterModel::from_json(
        nn::read_json_file(m.require_artifact(ctx.out_dir, artifact("clusters", cell), "train").string()));
  }
  return t;
}

inline void write_metrics(const fs::path& file, const std::vector<MetricRow>& rows) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << kMetricsHeader << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    out << r.method << ',' << r.benchmark << ',' << r.n_trial << ',' << r.seed << ',' << r.cumulative_reward << ','
        << r.mean_q << '\n';
  }
}

inline std::vector<MetricRow> read_metrics(const fs::path& file) {
  std::istringstream in(read_file(file.string()));
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw IoError("metrics file " + file.string() + ": bad header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw IoError("metrics file " + file.string() + ": malformed row '" + line + "'");
    try {
      rows.push_back({f[0], f[1], std::stoi(f[2]), std::stoull(f[3]), std::stod(f[4]), std::stod(f[5])});
    } catch (const std::exception&) {
      throw IoError("metrics file " + file.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

}  // namespace detail

/// Simulates (or imports) the dataset, or draws the random MDPs.
inline void cmd_gen_data(const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m = detail::open_run(ctx, "gen-data");
  m.artifacts.clear();
  m.config_hash = ctx.cfg.hash();
  nn::write_json_file((ctx.out_dir / "config.json").string(), ctx.cfg.to_json());
  m.add(ctx.out_dir, "config", ctx.out_dir / "config.json", "gen-data", "config");
  fs::create_directories(ctx.out_dir / "data");

  if (ctx.cfg.benchmark == Benchmark::FiniteMdp) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& mdp : random_mdps(ctx.cfg.finite_mdp, ctx.cfg.data_seed)) arr.push_back(mdp_to_json(mdp));
    nn::write_json_file((ctx.out_dir / "data/mdps.json").string(), arr);
    m.add(ctx.out_dir, "mdps", ctx.out_dir / "data/mdps.json", "gen-data", "dataset");
    *ctx.log << "gen-data: " << arr.size() << " random MDPs\n";
  } else {
    env::Dataset data;
    if (!ctx.cfg.data_path.empty()) {
      try {
        data = env::read_jsonl(ctx.cfg.data_path);
      } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt dataset " + ctx.cfg.data_path + ": " + e.what());
      }
      check_dataset(data, ctx.cfg.data_path);
    } else {
      data = simulate(ctx.cfg);
    }
    env::write_jsonl((ctx.out_dir / "data/dataset.jsonl").string(), data);
    env::DatasetMeta meta;
    meta.benchmark = to_string(ctx.cfg.benchmark);
    meta.config = ctx.cfg.env;
    meta.seed = ctx.cfg.data_seed;
    if (ctx.cfg.benchmark == Benchmark::HD) {
      for (std::size_t g = 0; g < ctx.cfg.gravities.size(); ++g) meta.gravity_map[std::to_string(g)] = ctx.cfg.gravities[g];
    } else {
      meta.gravity_map["0"] = ctx.cfg.env.gravity;
    }
    meta.n_records = data.size();
    meta.data_hash = file_hash((ctx.out_dir / "data/dataset.jsonl").string());
    nn::write_json_file((ctx.out_dir / "data/dataset.meta.json").string(), meta.to_json());
    m.add(ctx.out_dir, "data", ctx.out_dir / "data/dataset.jsonl", "gen-data", "dataset");
    m.add(ctx.out_dir, "data_meta", ctx.out_dir / "data/dataset.meta.json", "gen-data", "dataset");
    *ctx.log << "gen-data: " << data.size() << " transitions\n";
  }
  detail::close_run(ctx, m, "gen-data", t0);
}

/// Trains the method's model (SCM, clusters or baseline) for every seed and cell.
inline void cmd_train(const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = ctx.cfg;
  if (cfg.benchmark == Benchmark::FiniteMdp) {
    throw PreconditionError("train: finite-mdp has no model to train; run `policy` after `gen-data`");
  }
  RunManifest m = detail::open_run(ctx, "train");
  const auto data = detail::load_data(ctx, m, "data", "gen-data");
  for (auto seed : cfg.seeds) {
    for (int n : cfg.cells()) {
      const auto cell = detail::cell_key(seed, n);
      const fs::path dir = ctx.out_dir / cell;
      fs::create_directories(dir);
      *ctx.log << "train: " << to_string(cfg.method) << " " << cell << "\n";
      const auto trained = train_cell(cfg, cell_data(cfg, data, n), seed);
      nn::write_json_file((dir / "train_report.json").string(), trained.report);
      m.add(ctx.out_dir, detail::artifact("train_report", cell), dir / "train_report.json", "train", "report");
      if (trained.scm) nn::write_json_file((dir / "model.json").string(), trained.scm->to_json());
      if (trained.dynamics) nn::write_json_file((dir / "model.json").string(), trained.dynamics->to_json());
      if (trained.scm || trained.dynamics) {
        m.add(ctx.out_dir, detail::artifact("model", cell), dir / "model.json", "train", "model");
      }
      if (trained.clusters) {
        nn::write_json_file((dir / "clusters.json").string(), trained.clusters->to_json());
        m.add(ctx.out_dir, detail::artifact("clusters", cell), dir / "clusters.json", "train", "clusters");
      }
    }
  }
  detail::close_run(ctx, m, "train", t0);
}

/// Counterfactual (or baseline, or pass-through) augmentation of every cell.
inline void cmd_augment(const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = ctx.cfg;
  if (cfg.benchmark == Benchmark::FiniteMdp) {
    throw PreconditionError("augment: finite-mdp streams are augmented inside `policy`");
  }
  RunManifest m = detail::open_run(ctx, "augment");
  const auto data = detail::load_data(ctx, m, "data", "gen-data");
  for (auto seed : cfg.seeds) {
    for (int n : cfg.cells()) {
      const auto cell = detail::cell_key(seed, n);
      const fs::path dir = ctx.out_dir / cell;
      fs::create_directories(dir);
      // Algorithm order: every method but raw_d3qn needs its trained model.
      std::string model_hash = "none";
      if (cfg.method != Method::RawD3qn) {
        const auto name = detail::artifact("model", cell);
        m.require_artifact(ctx.out_dir, name, "train");
        model_hash = m.artifacts.at(name).hash;
      }
      const auto trained = detail::load_trained(ctx, m, cell);
      *ctx.log << "augment: " << to_string(cfg.method) << " " << cell << "\n";
      const auto parts = augment_cell(cfg, cell_data(cfg, data, n), trained, model_hash, seed);
      const int k = static_cast<int>(parts.size());
      for (int i = 0; i < k; ++i) {
        const auto& part = parts[static_cast<std::size_t>(i)];
        const std::string stem = "augmented" + detail::suffix(i, k);
        env::write_jsonl((dir / (stem + ".jsonl")).string(), part.records);
        auto meta = part.meta();
        meta["method"] = to_string(cfg.method);
        if (k > 1) meta["cluster"] = i;
        nn::write_json_file((dir / (stem + ".meta.json")).string(), meta);
        m.add(ctx.out_dir, detail::artifact("augmented", cell, i), dir / (stem + ".jsonl"), "augment", "dataset");
        m.add(ctx.out_dir, detail::artifact("augmented_meta", cell, i), dir / (stem + ".meta.json"), "augment",
              "report");
        for (const auto& w : part.warnings) *ctx.log << "augment: warning: " << cell << ": " << w << "\n";
      }
    }
  }
  detail::close_run(ctx, m, "augment", t0);
}

/// D3QN on the augmented datasets plus evaluation, or the tabular suite.
inline void cmd_policy(const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = ctx.cfg;
  RunManifest m = detail::open_run(ctx, "policy");

  if (cfg.benchmark == Benchmark::FiniteMdp) {
    std::vector<policy::FiniteMdp> mdps;
    for (const auto& j : nn::read_json_file(m.require_artifact(ctx.out_dir, "mdps", "gen-data").string())) {
      mdps.push_back(mdp_from_json(j));
    }
    for (auto seed : cfg.seeds) {
      const fs::path dir = ctx.out_dir / ("seed" + std::to_string(seed));
      fs::create_directories(dir);
      const auto res = tabular_suite(mdps, cfg.finite_mdp, seed);
      std::ofstream out(dir / "finite_mdp.csv");
      out.precision(10);
      out << "mdp,n_states,n_actions,seed,sup_error,passed\n";
      int passed = 0;
      for (std::size_t i = 0; i < res.size(); ++i) {
        out << i << ',' << res[i].n_states << ',' << res[i].n_actions << ',' << seed << ',' << res[i].sup_error << ','
            << (res[i].passed ? 1 : 0) << '\n';
        passed += res[i].passed ? 1 : 0;
      }
      out.close();
      m.add(ctx.out_dir, "tabular@seed" + std::to_string(seed), dir / "finite_mdp.csv", "policy", "table");
      *ctx.log << "policy: seed " << seed << ": " << passed << "/" << res.size() << " MDPs within "
               << cfg.finite_mdp.tolerance << "\n";
    }
    detail::close_run(ctx, m, "policy", t0);
    return;
  }
  if (cfg.benchmark == Benchmark::SyntheticScm) {
    throw PreconditionError("policy: synthetic-scm is an inference benchmark without a control task");
  }

  for (auto seed : cfg.seeds) {
    for (int n : cfg.cells()) {
      const auto cell = detail::cell_key(seed, n);
      const fs::path dir = ctx.out_dir / cell;
      std::vector<env::Dataset> datasets;
      for (int i = 0;; ++i) {
        const auto name = detail::artifact("augmented", cell, i);
        if (!m.artifacts.count(name)) break;
        datasets.push_back(detail::load_data(ctx, m, name, "augment"));
      }
      if (datasets.empty()) {
        m.require_artifact(ctx.out_dir, detail::artifact("augmented", cell, 0), "augment");
      }
      std::optional<cluster::ClusterModel> clusters;
      if (cfg.method == Method::CtrlP) {
        clusters = cluster::ClusterModel::from_json(nn::read_json_file(
            m.require_artifact(ctx.out_dir, detail::artifact("clusters", cell), "train").string()));
      }
      *ctx.log << "policy: " << to_string(cfg.method) << " " << cell << " (" << datasets.size() << " dataset(s))\n";
      const auto res = policy_cell(cfg, datasets, clusters, n, seed);
      const int k = static_cast<int>(res.policies.size());
      nlohmann::json reports = nlohmann::json::array();
      for (int i = 0; i < k; ++i) {
        const std::string file = "policy" + detail::suffix(i, k) + ".json";
        nn::write_json_file((dir / file).string(), res.policies[static_cast<std::size_t>(i)].net.to_json());
        m.add(ctx.out_dir, detail::artifact("policy", cell, i), dir / file, "policy", "policy");
        reports.push_back(res.policies[static_cast<std::size_t>(i)].report.to_json());
      }
      nn::write_json_file((dir / "policy_report.json").string(),
                          {{"training", reports}, {"evaluation", res.evaluations}});
      m.add(ctx.out_dir, detail::artifact("policy_report", cell), dir / "policy_report.json", "policy", "report");
      detail::write_metrics(dir / "metrics.csv", res.rows);
      m.add(ctx.out_dir, detail::artifact("metrics", cell), dir / "metrics.csv", "policy", "metrics");
    }
  }
  detail::close_run(ctx, m, "policy", t0);
}

/// Aggregates the metrics of one or more runs into report.csv / report.json.
inline std::vector<ReportRow> cmd_report(const std::vector<fs::path>& runs, const fs::path& out_dir,
                                         std::ostream& log = std::cerr) {
  require(!runs.empty(), "report: no run given");
  std::vector<MetricRow> rows;
  for (const auto& run : runs) {
    if (!fs::exists(run)) throw IoError("report: no run at " + run.string());
    const fs::path dir = fs::is_directory(run) ? run : run.parent_path();
    const RunManifest m = RunManifest::load(RunManifest::path_in(dir));
    const auto names = m.names_of_kind("metrics");
    if (names.empty()) throw IoError("report: run " + dir.string() + " has no metrics; run `policy` first");
    for (const auto& name : names) {
      const auto part = detail::read_metrics(m.require_artifact(dir, name, "policy"));
      rows.insert(rows.end(), part.begin(), part.end());
    }
  }
  const auto table = aggregate(rows);
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "report.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "report.csv").string());
  csv.precision(10);
  csv << "method,benchmark,n_trial,n_seeds,reward_mean,reward_std,mean_q_mean,mean_q_std\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : table) {
    csv << r.method << ',' << r.benchmark << ',' << r.n_trial << ',' << r.n_seeds << ',' << r.reward_mean << ','
        << r.reward_std << ',' << r.q_mean << ',' << r.q_std << '\n';
    j.push_back({{"method", r.method},
                 {"benchmark", r.benchmark},
                 {"n_trial", r.n_trial},
                 {"n_seeds", r.n_seeds},
                 {"cumulative_reward", {{"mean", r.reward_mean}, {"std", r.reward_std}}},
                 {"mean_q", {{"mean", r.q_mean}, {"std", r.q_std}}}});
    log << r.method << "  " << r.benchmark << "  n=" << r.n_trial << "  reward " << r.reward_mean << " +- "
        << r.reward_std << "  (" << r.n_seeds << " seed(s))\n";
  }
  nn::write_json_file((out_dir / "report.json").string(), j);
  return table;
}

}  // namespace cfrl::pipeline
