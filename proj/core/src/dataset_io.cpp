#include "nfid/dataset_io.hpp"

#include <algorithm>
#include <cstdlib>
#include <json.hpp>

#include "nfid/csv.hpp"
#include "nfid/error.hpp"
#include "nfid/hash.hpp"
#include "nfid/model_json.hpp"

namespace nfid::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::string> reproducible_timestamp() {
  const char* s = std::getenv("SOURCE_DATE_EPOCH");
  if (!s || !*s) return std::nullopt;
  return std::string(s);
}

Artifact hash_artifact(const fs::path& file, const fs::path& base) {
  return {fs::relative(file, base).generic_string(), sha256_file(file)};
}

namespace {

json artifacts_json(const std::vector<Artifact>& list) {
  json a = json::array();
  for (const auto& x : list) a.push_back({{"path", x.path}, {"sha256", x.sha256}});
  return a;
}

std::vector<Artifact> artifacts_from(const json& j) {
  std::vector<Artifact> out;
  for (const auto& x : j) out.push_back({x.at("path").get<std::string>(), x.at("sha256").get<std::string>()});
  return out;
}

std::vector<Artifact> hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().parent_path() == dir && entry.path().filename() == "manifest.json") continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    return fs::relative(a, dir).generic_string() < fs::relative(b, dir).generic_string();
  });
  std::vector<Artifact> out;
  for (const auto& f : files) out.push_back(hash_artifact(f, dir));
  return out;
}

json manifest_json(const RunManifest& m) {
  json j;
  j["format"] = "nfid-manifest/1";
  j["kind"] = m.kind;
  j["tool_version"] = m.tool_version;
  j["config"] = m.config;
  j["seeds"] = json(m.seeds);
  j["parameters"] = json(m.parameters);
  j["inputs"] = artifacts_json(m.inputs);
  j["outputs"] = artifacts_json(m.outputs);
  if (m.created) j["created"] = *m.created;
  return j;
}

RunManifest manifest_from(const json& j) {
  RunManifest m;
  m.kind = j.at("kind").get<std::string>();
  m.tool_version = j.value("tool_version", "");
  m.config = j.value("config", "");
  if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
  if (j.contains("parameters")) m.parameters = j.at("parameters").get<std::map<std::string, std::string>>();
  m.inputs = artifacts_from(j.at("inputs"));
  m.outputs = artifacts_from(j.at("outputs"));
  if (j.contains("created")) m.created = j.at("created").get<std::string>();
  return m;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": malformed JSON: " + e.what());
  }
}

}  // namespace

void write_run_manifest(const fs::path& dir, RunManifest manifest) {
  manifest.outputs = hash_tree(dir);
  if (!manifest.created) manifest.created = reproducible_timestamp();
  write_file(dir / "manifest.json", manifest_json(manifest).dump(2) + "\n");
}

RunManifest read_run_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw InputError(dir.string() + ": no manifest.json");
  try {
    return manifest_from(read_json(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": malformed manifest: " + e.what());
  }
}

void verify_run_manifest(const fs::path& dir) {
  const auto m = read_run_manifest(dir);
  for (const auto& a : m.outputs) {
    const fs::path file = dir / a.path;
    if (!fs::exists(file)) throw InputError(dir.string() + ": listed artifact missing: " + a.path);
    if (sha256_file(file) != a.sha256) {
      throw InputError(dir.string() + ": artifact modified since the manifest was written: " + a.path);
    }
  }
}

namespace {

json record_json(const scenarios::Record& r) {
  return {{"name", r.name},
          {"class", scenarios::to_string(r.cls)},
          {"partition", scenarios::to_string(r.partition)},
          {"seed", r.seed},
          {"file", "records/" + r.name + ".csv"},
          {"samples", r.series.size()}};
}

}  // namespace

void write_dataset(const fs::path& dir, const scenarios::Dataset& dataset, const DatasetMeta& meta) {
  dataset.validate();
  fs::create_directories(dir / "records");
  auto write_all = [&](const std::vector<scenarios::Record>& list) {
    for (const auto& r : list) csv::write_dq(dir / "records" / (r.name + ".csv"), r.series);
  };
  write_all(dataset.records);
  write_all(dataset.ood);

  std::map<std::string, std::size_t> counts{{"train", 0}, {"validation", 0}, {"test", 0}, {"ood", 0}};
  json records = json::array();
  for (const auto& r : dataset.records) {
    records.push_back(record_json(r));
    counts[scenarios::to_string(r.partition)] += 1;
  }
  for (const auto& r : dataset.ood) {
    records.push_back(record_json(r));
    counts["ood"] += 1;
  }

  RunManifest m;
  m.kind = "dataset";
  m.tool_version = meta.tool_version;
  m.config = meta.config;
  m.seeds["root"] = dataset.seed;
  for (const auto& r : dataset.records) m.seeds["scenario/" + r.name] = r.seed;
  for (const auto& r : dataset.ood) m.seeds["scenario/" + r.name] = r.seed;
  m.parameters = meta.plant;
  m.outputs = hash_tree(dir);
  m.created = reproducible_timestamp();

  json j = manifest_json(m);
  j["dataset"] = {
      {"dt", dataset.dt},
      {"setpoints", {{"P", dataset.setpoints.P}, {"Q", dataset.setpoints.Q}, {"v", dataset.setpoints.v}}},
      {"line_admittance", {{"re", dataset.line_admittance.real()}, {"im", dataset.line_admittance.imag()}}},
      {"split", counts},
      {"records", records}};
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

scenarios::Dataset read_dataset(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw InputError(dir.string() + ": no manifest.json");
  const json j = read_json(path);
  scenarios::Dataset ds;
  try {
    if (j.at("kind").get<std::string>() != "dataset") {
      throw InputError(path.string() + ": not a dataset manifest");
    }
    const auto& d = j.at("dataset");
    ds.dt = d.at("dt").get<double>();
    const auto& sp = d.at("setpoints");
    ds.setpoints = {sp.at("P").get<double>(), sp.at("Q").get<double>(), sp.at("v").get<double>()};
    const auto& y = d.at("line_admittance");
    ds.line_admittance = {y.at("re").get<double>(), y.at("im").get<double>()};
    ds.seed = j.at("seeds").at("root").get<std::uint64_t>();
    for (const auto& r : d.at("records")) {
      scenarios::Record rec;
      rec.name = r.at("name").get<std::string>();
      rec.cls = scenarios::scenario_class_from_string(r.at("class").get<std::string>());
      rec.partition = scenarios::partition_from_string(r.at("partition").get<std::string>());
      rec.seed = r.at("seed").get<std::uint64_t>();
      rec.series = csv::read_dq(dir / r.at("file").get<std::string>());
      if (std::abs(rec.series.dt() - ds.dt) > 1e-9 * ds.dt) {
        throw InputError(path.string() + ": record " + rec.name + " has a different sampling interval");
      }
      if (rec.partition == scenarios::Partition::Ood) {
        ds.ood.push_back(std::move(rec));
      } else {
        ds.records.push_back(std::move(rec));
      }
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": malformed manifest: " + e.what());
  }
  // Records are parsed first so a damaged file is reported with its line.
  verify_run_manifest(dir);
  ds.validate();
  return ds;
}

}  // namespace nfid::io
