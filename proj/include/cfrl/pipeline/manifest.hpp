#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/core/error.hpp"
#include "cfrl/core/hash.hpp"
#include "cfrl/numerics/checkpoint.hpp"

namespace cfrl::pipeline {

namespace fs = std::filesystem;

struct Artifact {
  std::string path;  // relative to the run directory
  std::string hash;
  std::string stage;
  std::string kind;  // dataset | model | clusters | report | metrics | policy | table
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Artifact, path, hash, stage, kind)

/// Record of everything produced in one run directory. Every command reads it,
/// checks the artifacts it depends on and adds what it wrote.
class RunManifest {
 public:
  static constexpr const char* kFile = "manifest.json";

  std::string config_hash;
  std::map<std::string, Artifact> artifacts;  // logical name -> artifact
  std::map<std::string, double> timing;  // stage -> seconds

  static fs::path path_in(const fs::path& dir) { return dir / kFile; }

  static RunManifest load_or_empty(const fs::path& dir) {
    return fs::exists(path_in(dir)) ? load(path_in(dir)) : RunManifest{};
  }

  static RunManifest load(const fs::path& file) {
    if (!fs::exists(file)) throw IoError("missing manifest: " + file.string());
    const auto j = nn::read_json_file(file.string());
    RunManifest m;
    try {
      m.config_hash = j.at("config_hash").get<std::string>();
      m.artifacts = j.at("artifacts").get<std::map<std::string, Artifact>>();
      m.timing = j.at("timing").get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest " + file.string() + ": " + e.what());
    }
    return m;
  }

  void save(const fs::path& dir) const {
    nn::write_json_file(path_in(dir).string(),
                        {{"config_hash", config_hash}, {"artifacts", artifacts}, {"timing", timing}});
  }

  /// Hashes `file` (a path inside `dir`) and records it under `name`.
  void add(const fs::path& dir, const std::string& name, const fs::path& file, const std::string& stage,
           const std::string& kind) {
    const fs::path rel = fs::relative(fs::weakly_canonical(file), fs::weakly_canonical(dir));
    artifacts[name] = {rel.generic_string(), file_hash(file.string()), stage, kind};
  }

  /// Absolute path of a required artifact. Fails with the artifact's name and
  /// the command that produces it when it is unlisted, deleted or modified.
  fs::path require_artifact(const fs::path& dir, const std::string& name, const std::string& producer) const {
    const auto it = artifacts.find(name);
    if (it == artifacts.end()) {
      throw IoError("missing artifact '" + name + "': not in " + path_in(dir).string() + "; run `" + producer +
                    "` first");
    }
    const fs::path p = dir / it->second.path;
    if (!fs::exists(p)) {
      throw IoError("missing artifact '" + name + "': file " + p.string() + " listed in the manifest was deleted; rerun `" +
                    producer + "`");
    }
    if (file_hash(p.string()) != it->second.hash) {
      throw IoError("artifact '" + name + "' at " + p.string() + " does not match its manifest hash; rerun `" + producer +
                    "`");
    }
    return p;
  }

  std::vector<std::string> names_of_kind(const std::string& kind) const {
    std::vector<std::string> out;
    for (const auto& [name, a] : artifacts)
      if (a.kind == kind) out.push_back(name);
    return out;
  }

  /// Drops every artifact produced by `stage` (a rerun replaces them).
  void clear_stage(const std::string& stage) {
    std::erase_if(artifacts, [&](const auto& kv) { return kv.second.stage == stage; });
  }
};

}  // namespace cfrl::pipeline
