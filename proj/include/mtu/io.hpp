#pragma once

// Versioned JSON for datasets, checkpoints and reports; CSV helpers; SHA-256
// content digests.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtu/eval.hpp"
#include "mtu/subspace.hpp"
#include "mtu/tasks.hpp"
#include "mtu/theory.hpp"
#include "mtu/unlearn.hpp"

namespace mtu {

inline constexpr int kSchemaVersion = 1;

using json = nlohmann::json;

inline std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// Typed field access that reports the full field path on failure.
template <typename T>
T require_field(const json& j, const std::string& key, const std::string& path) {
  const std::string where = join_path(path, key);
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where, "required field is missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where, std::string("wrong type: ") + e.what());
  }
}

template <typename T>
T optional_field(const json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return require_field<T>(j, key, path);
}

json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const json& j, const std::string& path);

json gen_config_to_json(const GenConfig& c);
GenConfig gen_config_from_json(const json& j, const std::string& path);

json dataset_to_json(const MultiTaskDataset& ds);
MultiTaskDataset dataset_from_json(const json& j, const std::string& path);

struct Checkpoint {
  std::string model_id;
  MultiTaskModel model;
  SubspaceSet<double> subspaces;
  std::string dataset_digest;
  json config;
};

json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const json& j);

json report_to_json(const EvalReport& r);
json trace_to_json(const UnlearnTrace& t);
json suite_to_json(const SuiteResult& s);

void write_trace_csv(std::ostream& os, const UnlearnTrace& t);

/// Serialized JSON text used for every artifact (stable key order, two-space
/// indent, trailing newline).
std::string dump(const json& j);

void write_text(const std::filesystem::path& p, const std::string& text);
std::string read_text(const std::filesystem::path& p);
json read_json(const std::filesystem::path& p);

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& p);

}  // namespace mtu
