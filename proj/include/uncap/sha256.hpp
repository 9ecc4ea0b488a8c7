#pragma once

#include <string>

namespace uncap {

// Hex digest of the SHA-256 hash of `data`.
std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::string& path);

}  // namespace uncap
