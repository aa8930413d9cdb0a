#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace crepe::util {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// 64-bit FNV-1a; used where a cheap, stable integer hash is enough.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace crepe::util
