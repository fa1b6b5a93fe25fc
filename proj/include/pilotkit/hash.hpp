#pragma once

#include <cstdint>
#include <string_view>

namespace pilotkit {

// XXH64 (xxHash, 64-bit variant). Output matches the reference
// implementation for every seed, so checksums of exported items can be
// verified with stock xxhash tooling.
std::uint64_t xxh64(std::string_view data, std::uint64_t seed = 0);

// Content checksum stored per Data-Unit item.
inline std::uint64_t content_checksum(std::string_view data) {
  return xxh64(data, 0);
}

inline constexpr std::uint64_t kShuffleSeed = 0x9E3779B97F4A7C15ULL;

// Reducer assignment for a map output key.
inline std::uint64_t shuffle_hash(std::string_view key) {
  return xxh64(key, kShuffleSeed);
}

}  // namespace pilotkit
