#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "cfrl/core/error.hpp"
#include "cfrl/core/hash.hpp"

namespace cfrl::nn {

inline constexpr const char* kCheckpointFormat = "cfrl-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Wraps a model body in the versioned checkpoint envelope.
inline nlohmann::json make_checkpoint(const std::string& kind, nlohmann::json architecture,
                                      nlohmann::json body) {
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"kind", kind},
          {"architecture", std::move(architecture)},
          {"body", std::move(body)}};
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump() << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

/// Validates the envelope and returns it; throws IoError on kind/version mismatch.
inline nlohmann::json open_checkpoint(const nlohmann::json& j, const std::string& expected_kind) {
  if (j.value("format", "") != kCheckpointFormat) throw IoError("not a cfrl checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
  if (!expected_kind.empty() && j.value("kind", "") != expected_kind) {
    throw IoError("checkpoint kind '" + j.value("kind", "") + "' where '" + expected_kind + "' expected");
  }
  return j;
}

}  // namespace cfrl::nn
