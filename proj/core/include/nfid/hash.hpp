#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace nfid {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

/// Digest of a file's contents; throws InputError when it cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace nfid
