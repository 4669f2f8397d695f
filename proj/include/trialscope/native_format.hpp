#pragma once

// Reader and writer for the native run directory:
//
//   manifest.json  written once: meta, objectives, budgets, configuration space
//   configs.jsonl  one {"id", "values"} object per line, ids in line order
//   trials.jsonl   one trial object per line, in submission order
//
// Both .jsonl files are append-only. A final line without a terminating newline
// that fails to parse is treated as an in-progress append: it is dropped and a
// warning is recorded. Any other malformed line is a ParseError naming the line.

#include <filesystem>
#include <string>
#include <vector>

#include "trialscope/run_model.hpp"

namespace trialscope::native {

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kConfigsFile = "configs.jsonl";
inline constexpr const char* kTrialsFile = "trials.jsonl";
inline constexpr int kVersion = 1;

/// True if `dir` holds the native marker files.
bool looks_native(const std::filesystem::path& dir);

/// Parses a native run. `id`, `content_hash` and `modified_at` are left for
/// the caller (ingest) to fill.
Run load(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

nlohmann::json hyperparameter_to_json(const Hyperparameter& hp);
Hyperparameter hyperparameter_from_json(const nlohmann::json& j);
nlohmann::json space_to_json(const ConfigurationSpace& space);
ConfigurationSpace space_from_json(const nlohmann::json& j);

/// The configs.jsonl object for one configuration.
nlohmann::json config_record(std::size_t id, const Configuration& config);
nlohmann::json trial_record(const Trial& trial);

std::string manifest_text(const Run& run);
std::string configs_text(const Run& run);
std::string trials_text(const Run& run);

/// manifest, configs and trials text concatenated; equal runs serialize equally.
std::string canonical_serialization(const Run& run);

/// Writes the three files into `dir`, creating it if needed.
void write(const Run& run, const std::filesystem::path& dir);

}  // namespace trialscope::native
