#pragma once

// Model files:
//   { "format": "nfid-model/1", "n_ivars": n,
//     "A": [[..]], "B": [[..]],                      row-major, real
//     "C": [{"re":..,"im":..}, ..], "D": [3 x {re, im}],
//     "setpoints": {"P":..,"Q":..,"v":..},
//     "provenance": {"key": "value", ..} }

#include <filesystem>
#include <map>
#include <string>

#include "nfid/normalform.hpp"

namespace nfid::io {

using Provenance = std::map<std::string, std::string>;

std::string model_to_json(const normalform::HwNormalForm& model, const Provenance& provenance = {});
normalform::HwNormalForm model_from_json(const std::string& text, Provenance* provenance = nullptr,
                                         const std::string& source = "<model>");

void save_model(const std::filesystem::path& path, const normalform::HwNormalForm& model,
                const Provenance& provenance = {});
normalform::HwNormalForm load_model(const std::filesystem::path& path,
                                    Provenance* provenance = nullptr);

/// Whole-file helpers shared by the JSON writers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace nfid::io
