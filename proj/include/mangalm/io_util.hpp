#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mangalm {

/// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// FNV-1a 64-bit; stable across platforms, used to derive per-record seeds.
std::uint64_t fnv1a64(std::string_view text);

/// splitmix64 finalizer for mixing seed components.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mangalm
