#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfrl/pipeline/commands.hpp"

using namespace cfrl;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual data augmentation for batch reinforcement learning"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::uint64_t> seed;
  std::string out_dir = "runs/default";
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    if (needs_config) opt->required();
    sub->add_option("--seed", seed, "training seed(s); replaces the config's seed list");
    sub->add_option("--out-dir", out_dir, "run directory (holds manifest.json)");
  };

  auto* gen = app.add_subcommand("gen-data", "simulate or import the transition dataset");
  auto* train = app.add_subcommand("train", "train the SCM, clusters or baseline dynamics model");
  auto* aug = app.add_subcommand("augment", "write augmented datasets from the trained model");
  auto* pol = app.add_subcommand("policy", "learn and evaluate policies on the augmented data");
  auto* rep = app.add_subcommand("report", "aggregate metrics across seeds into report.csv/json");
  for (auto* sub : {gen, train, aug, pol}) add_common(sub, true);
  add_common(rep, false);
  std::vector<std::string> runs;
  rep->add_option("runs", runs, "run directories or manifest files (default: --out-dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rep->parsed()) {
      std::vector<fs::path> paths(runs.begin(), runs.end());
      if (paths.empty()) paths.emplace_back(out_dir);
      pipeline::cmd_report(paths, out_dir, std::cout);
      return 0;
    }
    pipeline::RunContext ctx{pipeline::ExperimentConfig::load(config_path), out_dir};
    if (!seed.empty()) ctx.cfg.seeds = seed;
    if (gen->parsed()) pipeline::cmd_gen_data(ctx);
    if (train->parsed()) pipeline::cmd_train(ctx);
    if (aug->parsed()) pipeline::cmd_augment(ctx);
    if (pol->parsed()) pipeline::cmd_policy(ctx);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
