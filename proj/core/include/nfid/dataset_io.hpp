#pragma once

// Dataset directories and run manifests.
//
//   <dir>/records/<name>.csv   one dq record per scenario
//   <dir>/manifest.json        seeds, partitions, setpoints, file hashes
//
// Every produced file is listed in the manifest with its SHA-256 digest;
// reading verifies them, so a missing or altered file fails loudly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nfid/scenarios.hpp"

namespace nfid::io {

struct Artifact {
  std::string path;  // relative to the manifest's directory, '/' separated
  std::string sha256;
};

struct RunManifest {
  std::string kind;          // "dataset", "identify", "evaluate", ...
  std::string tool_version;
  std::string config;        // canonical configuration snapshot
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> parameters;  // free-form run settings
  std::vector<Artifact> inputs;
  std::vector<Artifact> outputs;  // filled by write_run_manifest
  std::optional<std::string> created;  // from SOURCE_DATE_EPOCH only
};

/// Seconds since the epoch from SOURCE_DATE_EPOCH, if set (keeps runs
/// reproducible: no wall-clock time is ever recorded).
std::optional<std::string> reproducible_timestamp();

/// Hashes every file below `dir` (except manifest.json) into
/// manifest.outputs and writes <dir>/manifest.json.
void write_run_manifest(const std::filesystem::path& dir, RunManifest manifest);
RunManifest read_run_manifest(const std::filesystem::path& dir);

/// Throws InputError naming the first missing or modified artifact.
void verify_run_manifest(const std::filesystem::path& dir);

Artifact hash_artifact(const std::filesystem::path& file, const std::filesystem::path& base);

struct DatasetMeta {
  std::string tool_version;
  std::string config;
  std::map<std::string, std::string> plant;  // description of the generating plant
};

void write_dataset(const std::filesystem::path& dir, const scenarios::Dataset& dataset,
                   const DatasetMeta& meta = {});

/// Loads every record (parse errors name file and line), then verifies the
/// manifest hashes.
scenarios::Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace nfid::io
