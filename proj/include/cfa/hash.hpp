#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cfa {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
/// Hex FNV-1a of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

}  // namespace cfa
